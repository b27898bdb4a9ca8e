"""Alternating adversarial training loop.

Per iteration (batch size 1 by default): draw one sample from each domain,
update both generators on the assembled generator loss, regenerate the fake
images with the freshly updated generators, then update both discriminators
on the least-squares real-vs-fake loss. The four optimizers are independent.

An epoch is min(N_poor, N_high) iterations with per-epoch reseeded draws;
per-iteration loss components are appended to a CSV and a checkpoint is
written at the end of every epoch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import TensorNode, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, epoch_iterator
from .losses import CE_FLOOR, LossWeights, run_cycle_pass, total_generator_loss, discriminator_loss
from .models import (DiscriminatorConfig, GeneratorConfig, build_discriminator,
                     build_generator)
from .optim import AdamState, LrSchedule, OptimizerConfig, adam_step, lr_at

LOSS_CSV_HEADER = ["epoch", "iter", "L_G", "L_adv", "L_cyc", "L_id", "L_class", "L_D", "lr"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    weights: LossWeights = LossWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: LrSchedule = LrSchedule()
    epochs: int = 2000
    seed: int = 0
    batch_size: int = 1
    checkpoint_dir: str | None = None
    checkpoint_every: int = 1
    loss_csv: str | None = None


@dataclass
class TrainState:
    config: TrainConfig
    gen_g: object            # poor -> high generator
    gen_f: object            # high -> poor generator
    disc_x: object           # critic on the high-quality domain
    disc_y: object           # critic on the poor-quality domain
    opt_g: AdamState
    opt_f: AdamState
    opt_dx: AdamState
    opt_dy: AdamState
    epochs_done: int = 0
    steps_done: int = 0


def init_state(config: TrainConfig) -> TrainState:
    """Fresh models and optimizer states, deterministically seeded."""
    def rng(salt):
        return np.random.default_rng(np.random.SeedSequence([config.seed, salt]))

    gen_g = build_generator(config.generator, rng(1))
    gen_f = build_generator(config.generator, rng(2))
    disc_x = build_discriminator(config.discriminator, rng(3))
    disc_y = build_discriminator(config.discriminator, rng(4))
    return TrainState(
        config=config, gen_g=gen_g, gen_f=gen_f, disc_x=disc_x, disc_y=disc_y,
        opt_g=AdamState.for_params([p.values for p in gen_g.parameters()]),
        opt_f=AdamState.for_params([p.values for p in gen_f.parameters()]),
        opt_dx=AdamState.for_params([p.values for p in disc_x.parameters()]),
        opt_dy=AdamState.for_params([p.values for p in disc_y.parameters()]),
    )


def _zero_grads(model):
    for p in model.parameters():
        p.grad = None


def _step_model(model, opt_state, config, lr):
    params = model.parameters()
    adam_step([p.values for p in params], [p.grad for p in params],
              opt_state, config.optimizer, lr=lr)


def _batch_tensors(pairs):
    poor = np.stack([p.image for p, _ in pairs])[:, None, :, :].astype(np.float32)
    high = np.stack([h.image for _, h in pairs])[:, None, :, :].astype(np.float32)
    poor_class = np.stack([p.label_onehot for p, _ in pairs]).astype(np.float32)
    high_class = np.stack([h.label_onehot for _, h in pairs]).astype(np.float32)
    return (TensorNode(poor), TensorNode(high),
            TensorNode(poor_class), TensorNode(high_class))


def _ce_value(c, p):
    rows = c.shape[0]
    return float(-(c * np.log(np.maximum(p, CE_FLOOR))).sum() / rows)


def _report_components(cpass, poor, high, poor_class, high_class, lg_value, weights):
    """Break the generator loss value into its CSV components; the mask term
    is recovered by subtraction so no extra forward passes are needed."""
    l_cyc = (float(np.abs(cpass.cycled_poor.values - poor.values).mean())
             + float(np.abs(cpass.cycled_high.values - high.values).mean()))
    l_id = (float(np.abs(cpass.same_high.values - high.values).mean())
            + float(np.abs(cpass.same_poor.values - poor.values).mean()))
    l_class = (_ce_value(poor_class.values, cpass.pred_class_poor.values)
               + _ce_value(high_class.values, cpass.pred_class_high.values)
               + _ce_value(poor_class.values, cpass.cycle_class_poor.values)
               + _ce_value(high_class.values, cpass.cycle_class_high.values)
               + _ce_value(high_class.values, cpass.same_class_high.values)
               + _ce_value(poor_class.values, cpass.same_class_poor.values))
    l_adv = lg_value - weights.cycle * l_cyc - weights.identity * l_id \
        - weights.classify * l_class
    return {"L_G": lg_value, "L_adv": l_adv, "L_cyc": l_cyc,
            "L_id": l_id, "L_class": l_class}


def train_step(state: TrainState, poor_high_pairs, lr=None) -> dict:
    """One full alternating update; returns the loss report."""
    cfg = state.config
    if lr is None:
        lr = cfg.optimizer.alpha
    poor, high, poor_class, high_class = _batch_tensors(poor_high_pairs)

    # generators first; discriminator weights are frozen so the adversarial
    # term routes gradient through the critics without updating them
    _zero_grads(state.gen_g)
    _zero_grads(state.gen_f)
    with ad.frozen(*state.disc_x.parameters(), *state.disc_y.parameters()):
        cpass = run_cycle_pass(state.gen_g, state.gen_f, poor, high)
        loss_g = total_generator_loss(cpass, poor, high, poor_class, high_class,
                                      cfg.weights, state.disc_x, state.disc_y)
        lg_value = float(loss_g.values)
        if not np.isfinite(lg_value):
            raise TrainingDiverged(
                f"non-finite generator loss at step {state.steps_done + 1}: {lg_value}")
        loss_g.backward()
    _step_model(state.gen_g, state.opt_g, cfg, lr)
    _step_model(state.gen_f, state.opt_f, cfg, lr)

    # new mappings from the updated generators, detached from their graphs
    with no_grad():
        fake_high = state.gen_g.forward(poor).restored
        fake_poor = state.gen_f.forward(high).restored

    _zero_grads(state.disc_x)
    _zero_grads(state.disc_y)
    loss_d = discriminator_loss(state.disc_x, state.disc_y, high, poor,
                                fake_high, fake_poor)
    ld_value = float(loss_d.values)
    if not np.isfinite(ld_value):
        raise TrainingDiverged(
            f"non-finite discriminator loss at step {state.steps_done + 1}: {ld_value}")
    loss_d.backward()
    _step_model(state.disc_x, state.opt_dx, cfg, lr)
    _step_model(state.disc_y, state.opt_dy, cfg, lr)

    report = _report_components(cpass, poor, high, poor_class, high_class,
                                lg_value, cfg.weights)
    report["L_D"] = ld_value
    report["lr"] = lr
    state.steps_done += 1
    return report


def _chunked(iterable, size):
    chunk = []
    for item in iterable:
        chunk.append(item)
        if len(chunk) == size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def train(dataset: Dataset, config: TrainConfig, state: TrainState | None = None,
          progress=None):
    """Run (or continue) training; returns the final state.

    The per-iteration loss CSV is append-only; checkpoints are written every
    ``checkpoint_every`` epochs into ``checkpoint_dir``.
    """
    if not dataset.poor or not dataset.high:
        raise ValueError("train: both domains must be non-empty")
    if state is None:
        state = init_state(config)
    csv_path = Path(config.loss_csv) if config.loss_csv else None
    if csv_path and not csv_path.exists():
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOSS_CSV_HEADER)

    for epoch in range(state.epochs_done, config.epochs):
        lr = lr_at(config.schedule, epoch)
        rows = []
        for it, chunk in enumerate(_chunked(
                epoch_iterator(dataset, epoch, config.seed), config.batch_size)):
            report = train_step(state, chunk, lr=lr)
            rows.append([epoch, it, report["L_G"], report["L_adv"], report["L_cyc"],
                         report["L_id"], report["L_class"], report["L_D"], report["lr"]])
        state.epochs_done = epoch + 1
        if csv_path:
            with open(csv_path, "a", newline="") as fh:
                csv.writer(fh).writerows(rows)
        if config.checkpoint_dir and (epoch + 1) % config.checkpoint_every == 0:
            save_state(state, Path(config.checkpoint_dir) / f"epoch_{epoch + 1:05d}.ckpt")
        if progress is not None:
            progress(epoch, rows)
    return state


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def state_arrays(state: TrainState) -> dict:
    """Flatten the whole training state into named float32 arrays.

    Counters are stored as scalar arrays; they stay exact below 2**24.
    """
    out = {}
    for prefix, model in (("g", state.gen_g), ("f", state.gen_f),
                          ("dx", state.disc_x), ("dy", state.disc_y)):
        for name, tensor in model.named_parameters().items():
            out[f"{prefix}/{name}"] = tensor.values
    for prefix, model, opt in (("g", state.gen_g, state.opt_g),
                               ("f", state.gen_f, state.opt_f),
                               ("dx", state.disc_x, state.opt_dx),
                               ("dy", state.disc_y, state.opt_dy)):
        names = list(model.named_parameters())
        for name, m, v in zip(names, opt.m, opt.v):
            out[f"opt/{prefix}/{name}/m"] = m
            out[f"opt/{prefix}/{name}/v"] = v
        out[f"opt/{prefix}/t"] = np.array([opt.t], dtype=np.float32)
    out["meta/epochs_done"] = np.array([state.epochs_done], dtype=np.float32)
    out["meta/steps_done"] = np.array([state.steps_done], dtype=np.float32)
    gcfg = state.config.generator
    out["meta/use_operational"] = np.array([float(gcfg.use_operational)], dtype=np.float32)
    out["meta/image_size"] = np.array(gcfg.image_size, dtype=np.float32)
    return out


def save_state(state: TrainState, path):
    save_checkpoint(path, state_arrays(state), q=state.config.generator.q)


def load_state(config: TrainConfig, path) -> TrainState:
    """Rebuild a training state from a checkpoint written with the same
    model configuration."""
    arrays, q = load_checkpoint(path)
    if q != config.generator.q:
        raise ValueError(f"checkpoint has Q={q} but config asks for Q={config.generator.q}")
    state = init_state(config)
    for prefix, model, opt in (("g", state.gen_g, state.opt_g),
                               ("f", state.gen_f, state.opt_f),
                               ("dx", state.disc_x, state.opt_dx),
                               ("dy", state.disc_y, state.opt_dy)):
        named = model.named_parameters()
        for i, (name, tensor) in enumerate(named.items()):
            saved = arrays[f"{prefix}/{name}"]
            if saved.shape != tensor.values.shape:
                raise ValueError(
                    f"checkpoint array {prefix}/{name} has shape {saved.shape}, "
                    f"model expects {tensor.values.shape}")
            tensor.values[...] = saved
            opt.m[i][...] = arrays[f"opt/{prefix}/{name}/m"]
            opt.v[i][...] = arrays[f"opt/{prefix}/{name}/v"]
        opt.t = int(arrays[f"opt/{prefix}/t"][0])
    state.epochs_done = int(arrays["meta/epochs_done"][0])
    state.steps_done = int(arrays["meta/steps_done"][0])
    return state


def generator_config_from_checkpoint(path) -> GeneratorConfig:
    """Reconstruct the generator configuration a checkpoint was trained with.

    Width, class count, input channels and kernel size are read off the array
    shapes; the activation variant and image size come from the meta entries.
    """
    arrays, q = load_checkpoint(path)
    enc1 = arrays["g/enc1/w"]  # [Q, C1, C_in, k, k]
    image_size = tuple(int(v) for v in arrays["meta/image_size"])
    return GeneratorConfig(
        q=q, base_channels=int(enc1.shape[1]),
        num_classes=int(arrays["g/cls/b"].shape[0]), image_size=image_size,
        in_channels=int(enc1.shape[2]),
        use_operational=bool(arrays["meta/use_operational"][0]),
        kernel=int(enc1.shape[3]))


def load_generator(path, config: GeneratorConfig | None = None):
    """Load just the poor-to-high generator from a full checkpoint.

    With no explicit config the checkpoint's own configuration is used, so
    models of different orders and widths can be loaded side by side.
    """
    if config is None:
        config = generator_config_from_checkpoint(path)
    arrays, q = load_checkpoint(path)
    if q != config.q:
        raise ValueError(f"checkpoint has Q={q} but config asks for Q={config.q}")
    rng = np.random.default_rng(0)
    gen = build_generator(config, rng)
    for name, tensor in gen.named_parameters().items():
        saved = arrays[f"g/{name}"]
        if saved.shape != tensor.values.shape:
            raise ValueError(f"checkpoint array g/{name} has shape {saved.shape}, "
                             f"model expects {tensor.values.shape}")
        tensor.values[...] = saved
    return gen

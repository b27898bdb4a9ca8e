"""Training objectives for the joint restore-and-classify cycle model.

Both generators are penalized with least-squares adversarial terms on their
patch masks, mean-absolute cycle and identity reconstruction terms, and
cross-entropy on every class prediction made along the way. One scalar
``classify`` weight scales all six cross-entropy terms; the per-stage
coefficients are derived from it so the assembled generator loss can be
written either as staged components or as one flat expansion.

Norm conventions (size-invariant): squared mask deviations and image L1
terms are means over elements; cross-entropy is summed over classes and
averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import TensorNode

CE_FLOOR = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """cycle and identity must be positive; classify >= 0 (0 disables the
    classification coupling entirely). The stage-local class weights are
    always derived, never stored."""

    cycle: float = 10.0
    identity: float = 5.0
    classify: float = 0.1

    def __post_init__(self):
        if self.cycle <= 0 or self.identity <= 0:
            raise ValueError("cycle and identity weights must be > 0")
        if self.classify < 0:
            raise ValueError("classify weight must be >= 0")

    @property
    def adversarial_class(self):
        return self.classify

    @property
    def cycle_class(self):
        return self.classify / self.cycle

    @property
    def identity_class(self):
        return self.classify / self.identity


@dataclass
class CyclePass:
    """All intermediate products of one training iteration.

    Starting from a poor-quality image and a high-quality image, each
    generator is applied three ways: translation, cycle reconstruction of the
    other generator's translation, and identity mapping of its own target
    domain. Every application also yields a class prediction.
    """

    fake_high: TensorNode          # G(poor) image
    pred_class_poor: TensorNode    # G(poor) class
    fake_poor: TensorNode          # F(high) image
    pred_class_high: TensorNode    # F(high) class
    cycled_poor: TensorNode        # F(G(poor)) image
    cycle_class_poor: TensorNode   # F(G(poor)) class
    cycled_high: TensorNode        # G(F(high)) image
    cycle_class_high: TensorNode   # G(F(high)) class
    same_high: TensorNode          # G(high) image
    same_class_high: TensorNode    # G(high) class
    same_poor: TensorNode          # F(poor) image
    same_class_poor: TensorNode    # F(poor) class


def run_cycle_pass(gen_g, gen_f, poor, high) -> CyclePass:
    """Evaluate both generators along translation, cycle and identity paths.

    The translation and identity applications of each generator are
    independent, so they run as one batched forward; every layer operates
    per-sample, which keeps the results identical to separate passes.
    """
    n = poor.shape[0]
    g_out = gen_g.forward(ad.concat([poor, high], axis=0))
    f_out = gen_f.forward(ad.concat([high, poor], axis=0))
    fake_high, same_high = ad.split(g_out.restored, (n, n), axis=0)
    pred_class_poor, same_class_high = ad.split(g_out.class_probs, (n, n), axis=0)
    fake_poor, same_poor = ad.split(f_out.restored, (n, n), axis=0)
    pred_class_high, same_class_poor = ad.split(f_out.class_probs, (n, n), axis=0)
    cyc_poor = gen_f.forward(fake_high)
    cyc_high = gen_g.forward(fake_poor)
    return CyclePass(
        fake_high=fake_high, pred_class_poor=pred_class_poor,
        fake_poor=fake_poor, pred_class_high=pred_class_high,
        cycled_poor=cyc_poor.restored, cycle_class_poor=cyc_poor.class_probs,
        cycled_high=cyc_high.restored, cycle_class_high=cyc_high.class_probs,
        same_high=same_high, same_class_high=same_class_high,
        same_poor=same_poor, same_class_poor=same_class_poor,
    )


def _ones_like(t):
    return TensorNode(np.ones_like(t.values))


def _check_simplex(probs, name):
    sums = probs.values.sum(axis=-1)
    if np.any(probs.values < -1e-6) or not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError(f"{name}: predicted class vector is not on the simplex (sums {sums})")


def _class_term(true_onehot, probs, weight):
    """weight * cross-entropy, or None when the weight is exactly zero so a
    disabled classification branch contributes no graph at all."""
    if weight == 0.0:
        return None
    return ad.scale(ad.cross_entropy(true_onehot, probs, eps=CE_FLOOR), weight)


def _accumulate(terms):
    total = None
    for t in terms:
        if t is None:
            continue
        total = t if total is None else ad.add(total, t)
    return total


def adversarial_gen_loss(disc, generated_image, true_class, pred_class, class_weight):
    """Least-squares deviation of the critic mask from all-ones, plus the
    class-weighted cross-entropy of the prediction made during translation."""
    _check_simplex(pred_class, "adversarial_gen_loss")
    mask = disc.forward(generated_image)
    terms = [ad.mse(mask, _ones_like(mask)),
             _class_term(true_class, pred_class, class_weight)]
    return _accumulate(terms)


def cycle_loss(cpass: CyclePass, poor, high, poor_class, high_class, class_weight):
    """Mean-absolute reconstruction error around both cycles, plus the
    class-weighted cross-entropy of both cycle-time predictions."""
    terms = [ad.l1_mean(cpass.cycled_poor, poor),
             ad.l1_mean(cpass.cycled_high, high),
             _class_term(poor_class, cpass.cycle_class_poor, class_weight),
             _class_term(high_class, cpass.cycle_class_high, class_weight)]
    return _accumulate(terms)


def identity_loss(cpass: CyclePass, poor, high, poor_class, high_class, class_weight):
    """Mean-absolute change each generator applies to its own target domain,
    plus the class-weighted cross-entropy of both identity-time predictions."""
    terms = [ad.l1_mean(cpass.same_high, high),
             ad.l1_mean(cpass.same_poor, poor),
             _class_term(high_class, cpass.same_class_high, class_weight),
             _class_term(poor_class, cpass.same_class_poor, class_weight)]
    return _accumulate(terms)


def total_generator_loss(cpass: CyclePass, poor, high, poor_class, high_class,
                         weights: LossWeights, disc_x, disc_y):
    """Assembled generator objective: adversarial + cycle-weighted cycle term
    + identity-weighted identity term, with all six cross-entropy terms
    factoring under the single classify weight."""
    adv = ad.add(
        adversarial_gen_loss(disc_x, cpass.fake_high, poor_class, cpass.pred_class_poor,
                             weights.adversarial_class),
        adversarial_gen_loss(disc_y, cpass.fake_poor, high_class, cpass.pred_class_high,
                             weights.adversarial_class))
    cyc = cycle_loss(cpass, poor, high, poor_class, high_class, weights.cycle_class)
    ident = identity_loss(cpass, poor, high, poor_class, high_class, weights.identity_class)
    return ad.add(adv, ad.add(ad.scale(cyc, weights.cycle), ad.scale(ident, weights.identity)))


def discriminator_loss(disc_x, disc_y, real_high, real_poor, fake_high, fake_poor):
    """Least-squares real-vs-fake mask loss summed over both critics.

    The fake images must come from the already-updated generators and be
    detached, so no gradient leaks back into them.
    """
    if fake_high.requires_grad or fake_poor.requires_grad:
        raise ValueError("discriminator_loss: fake images must be detached from the generators")
    n = real_high.shape[0]
    mask_x = disc_x.forward(ad.concat([real_high, fake_high], axis=0))
    mask_y = disc_y.forward(ad.concat([real_poor, fake_poor], axis=0))
    mask_xr, mask_xf = ad.split(mask_x, (n, n), axis=0)
    mask_yr, mask_yf = ad.split(mask_y, (n, n), axis=0)
    zeros_x = TensorNode(np.zeros_like(mask_xf.values))
    zeros_y = TensorNode(np.zeros_like(mask_yf.values))
    return ad.add(
        ad.add(ad.mse(mask_yr, _ones_like(mask_yr)), ad.mse(mask_yf, zeros_y)),
        ad.add(ad.mse(mask_xr, _ones_like(mask_xr)), ad.mse(mask_xf, zeros_x)))

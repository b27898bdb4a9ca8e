"""Two-domain labeled image ingestion and the synthetic toy corpus.

Training data is unpaired: a set of poor-quality images and a set of
high-quality images, each with a class label, described by a CSV manifest
(``path,domain,label``; domain is ``poor`` or ``high``; label is an integer
class index; paths resolve relative to the manifest).

The toy corpus generator draws small glyph images (one glyph style per
class), keeps half of them clean as the high-quality domain and corrupts the
other half (gaussian blur, additive noise, gamma shift) as the poor-quality
domain. The clean originals of the corrupted images are written to a
separate ``pairs.csv`` that only evaluation oracles read; nothing in the
training path touches it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

POOR = "poor"
HIGH = "high"


@dataclass
class DomainSample:
    image: np.ndarray          # H x W float32 in [-1, 1]
    label_onehot: np.ndarray   # length num_classes, sums to 1
    domain: str                # POOR or HIGH
    source_path: str

    @property
    def label(self):
        return int(np.argmax(self.label_onehot))


@dataclass
class DatasetStats:
    num_poor: int
    num_high: int
    per_class_poor: list
    per_class_high: list


@dataclass
class Dataset:
    poor: list
    high: list
    num_classes: int

    @property
    def stats(self) -> DatasetStats:
        def counts(samples):
            out = [0] * self.num_classes
            for s in samples:
                out[s.label] += 1
            return out
        return DatasetStats(len(self.poor), len(self.high),
                            counts(self.poor), counts(self.high))


def normalize(image_u8):
    """Map 8-bit intensities [0, 255] onto [-1, 1]."""
    return (np.asarray(image_u8, dtype=np.float32) / 127.5) - 1.0


def denormalize(image):
    """Inverse of :func:`normalize`, rounding back to 8-bit."""
    arr = (np.clip(np.asarray(image, dtype=np.float32), -1.0, 1.0) + 1.0) * 127.5
    return np.round(arr).astype(np.uint8)


def load_image(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def save_image(path, image_u8):
    Image.fromarray(np.asarray(image_u8, dtype=np.uint8), mode="L").save(path)


def _onehot(label, num_classes):
    v = np.zeros(num_classes, dtype=np.float32)
    v[label] = 1.0
    return v


def load_manifest(path, num_classes=2) -> Dataset:
    """Read a manifest CSV and load every referenced image.

    Any bad row (missing image, unknown domain, out-of-range label) is
    collected and the whole load fails with all diagnostics at once.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    poor, high, errors = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"path", "domain", "label"}:
            raise ValueError(f"{path}: manifest must have header path,domain,label")
        for lineno, row in enumerate(reader, start=2):
            img_path = root / row["path"]
            domain = row["domain"].strip()
            if domain not in (POOR, HIGH):
                errors.append(f"line {lineno}: unknown domain {row['domain']!r}")
                continue
            try:
                label = int(row["label"])
            except ValueError:
                errors.append(f"line {lineno}: label {row['label']!r} is not an integer")
                continue
            if not 0 <= label < num_classes:
                errors.append(f"line {lineno}: label {label} outside [0, {num_classes})")
                continue
            if not img_path.is_file():
                errors.append(f"line {lineno}: image not found: {img_path}")
                continue
            sample = DomainSample(image=normalize(load_image(img_path)),
                                  label_onehot=_onehot(label, num_classes),
                                  domain=domain, source_path=str(img_path))
            (poor if domain == POOR else high).append(sample)
    if errors:
        raise ValueError(f"{path}: {len(errors)} bad manifest rows:\n  " + "\n  ".join(errors))
    return Dataset(poor=poor, high=high, num_classes=num_classes)


def epoch_iterator(dataset: Dataset, epoch, seed):
    """Yield min(N_poor, N_high) pairs of independent uniform draws, one from
    each domain, with the draw sequence reseeded per epoch."""
    if not dataset.poor or not dataset.high:
        raise ValueError("both domains must be non-empty for training")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch)]))
    n = min(len(dataset.poor), len(dataset.high))
    for _ in range(n):
        yield (dataset.poor[rng.integers(len(dataset.poor))],
               dataset.high[rng.integers(len(dataset.high))])


# ---------------------------------------------------------------------------
# toy corpus
# ---------------------------------------------------------------------------

ARTIFACTS = ("blur", "noise", "gamma")


@dataclass(frozen=True)
class ToyCorpusConfig:
    out_dir: str = "toy"
    image_size: int = 64
    num_classes: int = 2
    train_per_domain: int = 400
    test_per_domain: int = 80
    artifacts: tuple = ARTIFACTS
    blur_sigma: tuple = (0.8, 1.6)
    noise_sigma: tuple = (0.10, 0.22)
    gamma_range: tuple = (1.6, 2.6)
    seed: int = 7

    def __post_init__(self):
        if not self.artifacts:
            raise ValueError("artifact mix must name at least one corruption")
        unknown = set(self.artifacts) - set(ARTIFACTS)
        if unknown:
            raise ValueError(f"unknown artifacts: {sorted(unknown)}")


def gaussian_kernel1d(sigma, truncate=3.0):
    """Discrete gaussian taps normalized to sum exactly to one."""
    radius = max(1, int(truncate * sigma + 0.5))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _draw_glyph(canvas, label, rng):
    """Paint one bright class-specific glyph onto a dark background.

    Class 0 is a hollow ring, class 1 a solid disc; position, size and
    brightness jitter. The classes differ in bright area and edge structure,
    both of which survive the corruption mix.
    """
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(0.35, 0.65) * size
    cx = rng.uniform(0.35, 0.65) * size
    r = rng.uniform(0.18, 0.28) * size
    bright = rng.uniform(0.75, 0.95)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    if label == 0:
        thick = rng.uniform(0.05, 0.08) * size
        mask = np.abs(dist - r) < thick
    else:
        mask = dist < r
    canvas[mask] = bright
    return canvas


def _clean_image(label, size, rng):
    # gentle background ramp so images are not mostly empty
    ramp = np.linspace(0.12, 0.3, size)
    canvas = np.tile(ramp, (size, 1)) * rng.uniform(0.8, 1.2)
    canvas += rng.normal(0.0, 0.01, size=(size, size))
    canvas = _draw_glyph(canvas, label, rng)
    return np.clip(canvas, 0.0, 1.0)


def corrupt_image(clean01, config: ToyCorpusConfig, rng):
    """Apply the configured artifact mix to a [0, 1] image."""
    img = clean01.astype(np.float64)
    if "blur" in config.artifacts:
        sigma = rng.uniform(*config.blur_sigma)
        if sigma > 0:
            k = gaussian_kernel1d(sigma)
            img = ndimage.convolve1d(img, k, axis=0, mode="nearest")
            img = ndimage.convolve1d(img, k, axis=1, mode="nearest")
    if "gamma" in config.artifacts:
        gamma = rng.uniform(*config.gamma_range)
        img = np.clip(img, 0.0, 1.0) ** gamma
    if "noise" in config.artifacts:
        sigma = rng.uniform(*config.noise_sigma)
        if sigma > 0:
            img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _to_u8(img01):
    return np.round(img01 * 255.0).astype(np.uint8)


def _write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "domain", "label"])
        writer.writerows(rows)


def synthesize_toy_corpus(config: ToyCorpusConfig):
    """Write the toy corpus to disk and return the manifest paths.

    Layout under config.out_dir:
      images/           PNG files
      manifest.csv      training split (unpaired poor + high rows)
      test_manifest.csv held-out split, same format
      pairs.csv         clean/corrupt path pairs for every poor image
                        (evaluation oracle only)
    """
    out = Path(config.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    pairs = []

    def emit(split, n_per_domain):
        rows = []
        for domain in (HIGH, POOR):
            for i in range(n_per_domain):
                label = i % config.num_classes
                clean = _clean_image(label, config.image_size, rng)
                if domain == HIGH:
                    name = f"images/{split}_high_{i:04d}.png"
                    save_image(out / name, _to_u8(clean))
                    rows.append([name, HIGH, label])
                else:
                    corrupt = corrupt_image(clean, config, rng)
                    name = f"images/{split}_poor_{i:04d}.png"
                    clean_name = f"images/{split}_poor_{i:04d}_clean.png"
                    save_image(out / name, _to_u8(corrupt))
                    save_image(out / clean_name, _to_u8(clean))
                    rows.append([name, POOR, label])
                    pairs.append([clean_name, name])
        return rows

    _write_manifest(out / "manifest.csv", emit("train", config.train_per_domain))
    _write_manifest(out / "test_manifest.csv", emit("test", config.test_per_domain))
    with open(out / "pairs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clean_path", "corrupt_path"])
        writer.writerows(pairs)
    return {"manifest": str(out / "manifest.csv"),
            "test_manifest": str(out / "test_manifest.csv"),
            "pairs": str(out / "pairs.csv")}


def load_pairs(pairs_path):
    """Oracle-side loader for the clean/corrupt pairing table."""
    root = Path(pairs_path).parent
    out = []
    with open(pairs_path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((normalize(load_image(root / row["clean_path"])),
                        normalize(load_image(root / row["corrupt_path"])),
                        str(root / row["corrupt_path"])))
    return out

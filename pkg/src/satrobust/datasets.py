"""Seeded toy datasets and a CIFAR-10 binary-format reader."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .diffnet import Batch
from .errors import FormatError, InvalidInputError

CIFAR_RECORD = 3073
CIFAR_PIXELS = 3072
CIFAR_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog",
                 "frog", "horse", "ship", "truck")


@dataclass
class Dataset:
    train: Batch
    test: Batch
    num_classes: int
    name: str
    seed: int

    @property
    def input_dim(self) -> int:
        return self.train.inputs.shape[1]


def _to_unit_box(*parts: np.ndarray, margin: float = 0.05):
    """Map all parts with one isotropic affine transform into [0, 1]^d.

    A single scale factor keeps Euclidean geometry intact up to scaling.
    """
    allx = np.concatenate(parts)
    lo, hi = allx.min(axis=0), allx.max(axis=0)
    scale = (1.0 - 2 * margin) / np.max(hi - lo)
    offset = 0.5 - scale * 0.5 * (lo + hi)
    return [np.clip(p * scale + offset, 0.0, 1.0) for p in parts]


def _shuffle(rng, x, y):
    idx = rng.permutation(len(y))
    return x[idx], y[idx]


def two_gaussians(n_per_class: int, separation: float, noise: float,
                  seed: int = 0, n_test_per_class: Optional[int] = None) -> Dataset:
    """Two isotropic 2-D Gaussians whose means are ``separation`` apart.

    With equal priors the Bayes accuracy is Phi(separation / (2 * noise)).
    """
    if separation <= 0 or noise < 0:
        raise InvalidInputError("separation must be positive and noise nonnegative")
    if noise >= separation / 6:
        warnings.warn("noise >= separation/6: classes overlap noticeably")
    n_test = n_per_class if n_test_per_class is None else n_test_per_class
    rng = np.random.default_rng(seed)
    means = np.array([[-separation / 2, 0.0], [separation / 2, 0.0]])

    def draw(n):
        x = np.concatenate([m + noise * rng.standard_normal((n, 2)) for m in means])
        y = np.repeat([0, 1], n)
        return x, y

    xtr, ytr = draw(n_per_class)
    xte, yte = draw(n_test)
    xtr, xte = _to_unit_box(xtr, xte)
    xtr, ytr = _shuffle(rng, xtr, ytr)
    xte, yte = _shuffle(rng, xte, yte)
    return Dataset(Batch(xtr, ytr), Batch(xte, yte), 2, "two_gaussians", seed)


def two_moons(n_per_class: int, noise: float = 0.1, seed: int = 0,
              n_test_per_class: Optional[int] = None) -> Dataset:
    """Interleaved half circles (unit radius, offset (1, 0.5)) with Gaussian
    jitter, scaled isotropically into [0, 1]^2."""
    if noise < 0:
        raise InvalidInputError("noise must be nonnegative")
    n_test = n_per_class if n_test_per_class is None else n_test_per_class
    rng = np.random.default_rng(seed)

    def draw(n):
        t = rng.uniform(0.0, np.pi, size=n)
        upper = np.stack([np.cos(t), np.sin(t)], axis=1)
        t = rng.uniform(0.0, np.pi, size=n)
        lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        x = np.concatenate([upper, lower]) + noise * rng.standard_normal((2 * n, 2))
        return x, np.repeat([0, 1], n)

    xtr, ytr = draw(n_per_class)
    xte, yte = draw(n_test)
    xtr, xte = _to_unit_box(xtr, xte)
    xtr, ytr = _shuffle(rng, xtr, ytr)
    xte, yte = _shuffle(rng, xte, yte)
    return Dataset(Batch(xtr, ytr), Batch(xte, yte), 2, "two_moons", seed)


def read_cifar10_records(path: Union[str, Path]):
    """Decode one CIFAR-10 binary batch into ``(labels, pixels / 255)``.

    Each 3073-byte record is a label byte followed by 1024 red, 1024 green
    and 1024 blue bytes of a row-major 32x32 image.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise FormatError(
            f"{path}: length {raw.size} is not a positive multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{path}: record {bad} has label byte {labels[bad]} > 9")
    pixels = records[:, 1:].astype(np.float64) / 255.0
    return labels, pixels


def _read_many(paths: Iterable):
    labels, pixels = zip(*(read_cifar10_records(p) for p in paths))
    return np.concatenate(labels), np.concatenate(pixels)


def _stratified(rng, labels, per_class):
    picks = []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        if len(idx) < per_class:
            raise InvalidInputError(
                f"class {c} has {len(idx)} records, {per_class} requested")
        picks.append(rng.choice(idx, size=per_class, replace=False))
    return np.sort(np.concatenate(picks))


def load_cifar10_binary(paths: Sequence, subset_per_class: Optional[int] = None,
                        seed: int = 0, test_paths: Sequence = ()) -> Dataset:
    """Load CIFAR-10 batches as flattened 3072-d features in [0, 1].

    ``paths`` feed the training split and ``test_paths`` the test split;
    without test files a seeded sixth of the training records is held out
    instead. When ``subset_per_class`` is set, exactly that many records per
    class are drawn from each split with ``seed``.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    rng = np.random.default_rng(seed)
    ytr, xtr = _read_many(paths)
    if test_paths:
        yte, xte = _read_many([test_paths] if isinstance(test_paths, (str, Path))
                              else test_paths)
    else:
        if len(ytr) < 2:
            raise InvalidInputError("need at least two records to hold out a test split")
        order = rng.permutation(len(ytr))
        n_test = max(1, len(ytr) // 6)
        te, tr = np.sort(order[:n_test]), np.sort(order[n_test:])
        xte, yte, xtr, ytr = xtr[te], ytr[te], xtr[tr], ytr[tr]
    if subset_per_class is not None:
        keep = _stratified(rng, ytr, subset_per_class)
        xtr, ytr = xtr[keep], ytr[keep]
        if test_paths:
            keep = _stratified(rng, yte, subset_per_class)
            xte, yte = xte[keep], yte[keep]
    return Dataset(Batch(xtr, ytr), Batch(xte, yte), 10, "cifar10", seed)


def from_spec(spec: dict) -> Dataset:
    """Build a dataset from a JSON-style spec ``{"name": ..., **kwargs}``."""
    spec = dict(spec)
    name = spec.pop("name", None)
    builders = {"two_moons": two_moons, "two_gaussians": two_gaussians,
                "cifar10": load_cifar10_binary}
    if name not in builders:
        raise InvalidInputError(f"dataset.name must be one of {sorted(builders)}, got {name!r}")
    try:
        return builders[name](**spec)
    except TypeError as exc:
        raise InvalidInputError(f"dataset: {exc}") from None

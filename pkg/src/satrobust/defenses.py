"""Standard, Madry, Mixed, ATDA-lite and Sinkhorn adversarial training.

All five share one minibatch SGD loop. Adversarial batches come from PGD
against the current model and are treated as constant inputs when the loss
is differentiated.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ot
from .attacks import TRAIN_STEPS, AttackBudget, pgd_batch
from .datasets import Dataset
from .diffnet import (Batch, Classifier, backprop, cross_entropy,
                      cross_entropy_grad, forward, mlp, sgd_step)
from .errors import InvalidInputError, NumericalFailure

KINDS = ("standard", "madry", "mixed", "atda", "sat")


@dataclass
class DefenseConfig:
    kind: str = "standard"
    sigma: Optional[float] = None
    eps_train: float = 0.0
    attack_steps: int = TRAIN_STEPS
    attack_step_size: Optional[float] = None
    attack_random_init: bool = True
    epochs: int = 100
    batch_size: int = 128
    lr: float = 0.1
    lr_decay: float = 0.1
    lr_decay_epochs: Sequence[int] = ()
    weight_decay: float = 5e-4
    seed: int = 0
    hidden: Sequence[int] = (64, 64)
    align_weight: float = 1.0
    sinkhorn_iters: int = ot.DEFAULT_MAX_ITERS

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"kind: must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "sat":
            if self.sigma is None:
                raise InvalidInputError("sigma: required when kind is 'sat'")
            if not self.sigma > 0:
                raise InvalidInputError("sigma: must be positive")
        elif self.sigma is not None:
            raise InvalidInputError("sigma: only valid when kind is 'sat'")
        if not 0.0 <= self.eps_train <= 1.0:
            raise InvalidInputError("eps_train: must lie in [0, 1]")
        if self.kind != "standard" and not self.eps_train > 0:
            raise InvalidInputError(f"eps_train: must be positive for kind {self.kind!r}")
        for name in ("epochs", "batch_size", "attack_steps", "sinkhorn_iters"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name}: must be >= 1")
        if self.lr <= 0:
            raise InvalidInputError("lr: must be positive")
        if self.weight_decay < 0:
            raise InvalidInputError("weight_decay: must be nonnegative")

    @property
    def attack(self) -> AttackBudget:
        return AttackBudget(self.eps_train, self.attack_steps,
                            self.attack_step_size, self.attack_random_init)

    def lr_at(self, epoch: int) -> float:
        n = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr * self.lr_decay ** n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "DefenseConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"{sorted(unknown)[0]}: unknown field")
        return cls(**doc)


@dataclass
class TrainReport:
    kind: str
    seed: int
    ce_losses: list = field(default_factory=list)
    align_losses: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    checkpoint: Optional[str] = None

    @property
    def epochs(self) -> int:
        return len(self.ce_losses)

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = {"kind": self.kind, "seed": self.seed, "epochs": self.epochs,
               "ce_losses": self.ce_losses, "align_losses": self.align_losses,
               "checkpoint": self.checkpoint}
        if include_timing:
            doc["wall_clock_seconds"] = self.wall_clock_seconds
        return doc

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2)


def mmd_mean_loss(orig_logits, adv_logits) -> float:
    """L1 distance between the two batch means, divided by the number of classes."""
    orig_logits, adv_logits = np.atleast_2d(orig_logits), np.atleast_2d(adv_logits)
    if orig_logits.shape[1] != adv_logits.shape[1]:
        raise InvalidInputError("logit clouds differ in dimension")
    k = orig_logits.shape[1]
    return float(np.abs(orig_logits.mean(0) - adv_logits.mean(0)).sum() / k)


def mmd_mean_grads(orig_logits, adv_logits):
    k = orig_logits.shape[1]
    s = np.sign(orig_logits.mean(0) - adv_logits.mean(0)) / k
    return (np.tile(s / len(orig_logits), (len(orig_logits), 1)),
            np.tile(-s / len(adv_logits), (len(adv_logits), 1)))


def _cov(x):
    xc = x - x.mean(0)
    return xc, xc.T @ xc / (len(x) - 1)


def coral_loss(orig_logits, adv_logits) -> float:
    """Squared Frobenius distance between covariances over 4 K^2."""
    orig_logits, adv_logits = np.atleast_2d(orig_logits), np.atleast_2d(adv_logits)
    if len(orig_logits) < 2 or len(adv_logits) < 2:
        raise InvalidInputError("coral_loss needs at least two samples per cloud")
    k = orig_logits.shape[1]
    d = _cov(orig_logits)[1] - _cov(adv_logits)[1]
    return float(np.sum(d * d) / (4 * k * k))


def coral_grads(orig_logits, adv_logits):
    k = orig_logits.shape[1]
    xo, co = _cov(orig_logits)
    xa, ca = _cov(adv_logits)
    d = (co - ca) / (2 * k * k)  # dL/dCov_orig
    return (2 * xo @ d / (len(xo) - 1), -2 * xa @ d / (len(xa) - 1))


def sat_loss(model: Classifier, original, adversarial, sigma: float,
             align_weight: float = 1.0, max_iters: int = ot.DEFAULT_MAX_ITERS):
    """CE on the adversarial batch plus S_sigma between the two logit clouds.

    Returns ``(loss, ce, divergence, grad_orig_logits, grad_adv_logits)``.
    The divergence gradient reaches both clouds.
    """
    if len(original) != len(adversarial):
        raise InvalidInputError(
            f"batch sizes differ: {len(original)} vs {len(adversarial)}")
    lo, la = forward(model, original), forward(model, adversarial)
    labels = adversarial.labels
    ce = cross_entropy(la, labels)
    div, g_o, g_a = ot.sinkhorn_divergence_with_grads(
        ot.DiscreteMeasure.uniform(lo), ot.DiscreteMeasure.uniform(la), sigma,
        max_iters=max_iters)
    grad_orig = align_weight * g_o
    grad_adv = cross_entropy_grad(la, labels) + align_weight * g_a
    return ce + align_weight * div, ce, div, grad_orig, grad_adv


def _step_tape(cfg: DefenseConfig, model: Classifier, x, y, x_adv):
    """Return (tape, ce_term, align_term) for one minibatch."""
    kind = cfg.kind
    if kind == "standard":
        logits = forward(model, x)
        return (backprop(model, x, cross_entropy_grad(logits, y)),
                cross_entropy(logits, y), 0.0)
    if kind == "madry":
        logits = forward(model, x_adv)
        return (backprop(model, x_adv, cross_entropy_grad(logits, y)),
                cross_entropy(logits, y), 0.0)
    if kind in ("mixed", "atda"):
        xx = np.concatenate([x, x_adv])
        yy = np.concatenate([y, y])
        logits = forward(model, xx)
        upstream = cross_entropy_grad(logits, yy)
        ce = cross_entropy(logits, yy)
        align = 0.0
        if kind == "atda":
            b = len(y)
            lo, la = logits[:b], logits[b:]
            align = mmd_mean_loss(lo, la)
            mo, ma = mmd_mean_grads(lo, la)
            if b > 1:  # a trailing batch of one has no covariance
                align += coral_loss(lo, la)
                co, ca = coral_grads(lo, la)
                mo, ma = mo + co, ma + ca
            upstream = upstream + cfg.align_weight * np.concatenate([mo, ma])
        return backprop(model, xx, upstream), ce, align
    # sat
    _, ce, div, g_o, g_a = sat_loss(model, Batch(x, y), Batch(x_adv, y),
                                    cfg.sigma, cfg.align_weight,
                                    cfg.sinkhorn_iters)
    tape = backprop(model, x, g_o) + backprop(model, x_adv, g_a)
    return tape, ce, div


def train(config: DefenseConfig, data: Dataset):
    """Train a fresh MLP on ``data.train`` with the configured defense."""
    config.validate()
    x_all, y_all = data.train.inputs, data.train.labels
    if y_all.min() < 0 or y_all.max() >= data.num_classes:
        raise InvalidInputError("dataset labels outside [0, num_classes)")
    rng = np.random.default_rng(config.seed)
    model = mlp(data.input_dim, config.hidden, data.num_classes,
                seed=int(rng.integers(2**31)))
    budget = config.attack
    report = TrainReport(config.kind, config.seed)
    start = time.perf_counter()
    n = len(y_all)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        ce_sum = align_sum = 0.0
        n_batches = 0
        for b, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            x, y = x_all[idx], y_all[idx]
            try:
                x_adv = None
                if config.kind != "standard":
                    x_adv = pgd_batch(model, x, y, budget, rng=rng)
                tape, ce, align = _step_tape(config, model, x, y, x_adv)
                model = sgd_step(model, tape, lr, config.weight_decay)
            except NumericalFailure as exc:
                raise NumericalFailure(f"epoch {epoch} batch {b}: {exc}") from exc
            if not (np.isfinite(ce) and np.isfinite(align)):
                raise NumericalFailure(f"epoch {epoch} batch {b}: non-finite loss")
            ce_sum += ce
            align_sum += align
            n_batches += 1
        report.ce_losses.append(ce_sum / n_batches)
        report.align_losses.append(align_sum / n_batches)
    report.wall_clock_seconds = time.perf_counter() - start
    return model, report

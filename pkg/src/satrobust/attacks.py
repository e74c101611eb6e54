"""L-infinity PGD and a binary-search minimal-perturbation attack."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .diffnet import Classifier, backprop, cross_entropy_grad, forward
from .errors import InvalidInputError, NumericalFailure

TRAIN_STEPS = 7
EVAL_STEPS = 10
DEFAULT_RESOLUTION = 0.5 / 255


@dataclass(frozen=True)
class AttackBudget:
    """L-infinity radius and PGD schedule, all in [0, 1] pixel units."""

    epsilon: float
    steps: int = EVAL_STEPS
    step_size: Optional[float] = None  # None -> 2.5 * epsilon / steps
    random_init: bool = True

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidInputError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise InvalidInputError("steps must be >= 1")
        if self.step_size is not None:
            if self.step_size <= 0:
                raise InvalidInputError("step_size must be positive")
            if self.epsilon > 0 and self.step_size > self.epsilon:
                raise InvalidInputError("step_size must not exceed epsilon")

    @property
    def alpha(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps

    def with_epsilon(self, epsilon: float) -> "AttackBudget":
        # an explicit step size larger than the new radius is capped to it
        step = self.step_size
        if step is not None and epsilon > 0:
            step = min(step, epsilon)
        return replace(self, epsilon=epsilon, step_size=step)


@dataclass
class AttackOutcome:
    adversarial: np.ndarray
    perturbation_size: float
    success: bool
    queries: int
    sample_id: int = -1
    true_label: int = -1
    predicted_label: int = -1
    epsilon_budget: float = 0.0


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Clip into the L-infinity ball of radius ``epsilon`` around ``x`` and
    into the [0, 1] box."""
    out = np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)
    # x + eps can round so that (x + eps) - x exceeds eps by an ulp
    over = np.abs(out - x) > epsilon
    while np.any(over):
        out = np.where(over, np.nextafter(out, x), out)
        over = np.abs(out - x) > epsilon
    return out


def pgd_batch(model: Classifier, x: np.ndarray, y: np.ndarray,
              budget: AttackBudget, rng: Optional[np.random.Generator] = None,
              noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Run PGD on a whole batch and return the final iterates.

    The random start is taken from ``noise`` (values in [-1, 1], scaled by
    epsilon) when given, else drawn from ``rng``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).ravel()
    eps = budget.epsilon
    if eps == 0.0:
        return x.copy()
    if budget.random_init:
        if noise is None:
            if rng is None:
                raise InvalidInputError("random_init needs an rng or noise")
            noise = rng.uniform(-1.0, 1.0, size=x.shape)
        x_adv = project(x + eps * noise, x, eps)
    else:
        x_adv = x.copy()
    alpha = budget.alpha
    for _ in range(budget.steps):
        logits = forward(model, x_adv)
        grad = backprop(model, x_adv,
                        cross_entropy_grad(logits, y, reduction="sum")).inputs
        if not np.all(np.isfinite(grad)):
            raise NumericalFailure("non-finite input gradient during PGD")
        x_adv = project(x_adv + alpha * np.sign(grad), x, eps)
    return x_adv


def sample_noise(seed: int, sample_ids: Iterable[int], dim: int) -> np.ndarray:
    """Per-sample uniform [-1, 1] noise, keyed on (seed, sample id) so that
    results do not depend on batching or evaluation order."""
    return np.stack([np.random.default_rng([seed, int(i)]).uniform(-1.0, 1.0, dim)
                     for i in sample_ids])


def attack_set(model: Classifier, x: np.ndarray, y: np.ndarray,
               budget: AttackBudget, seed: int = 0,
               sample_ids: Optional[Iterable[int]] = None) -> list:
    """PGD on every sample of a set, returning one outcome per sample."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).ravel()
    ids = np.arange(len(y)) if sample_ids is None else np.asarray(list(sample_ids))
    noise = sample_noise(seed, ids, x.shape[1]) if budget.random_init else None
    x_adv = pgd_batch(model, x, y, budget, noise=noise)
    pred = np.argmax(forward(model, x_adv), axis=1)
    size = np.abs(x_adv - x).max(axis=1)
    queries = budget.steps if budget.epsilon > 0 else 0
    return [AttackOutcome(x_adv[i], float(size[i]), bool(pred[i] != y[i]),
                          queries, int(ids[i]), int(y[i]), int(pred[i]),
                          budget.epsilon)
            for i in range(len(y))]


def pgd(model: Classifier, x, y: int, budget: AttackBudget,
        seed: int = 0, sample_id: int = 0) -> AttackOutcome:
    """Single-sample PGD; see ``attack_set``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if np.any(x < 0) or np.any(x > 1):
        raise InvalidInputError("input must lie in [0, 1]")
    return attack_set(model, x[None, :], np.array([y]), budget, seed,
                      [sample_id])[0]


def min_perturbation(model: Classifier, x, y: int, eps_max: float,
                     resolution: float = DEFAULT_RESOLUTION,
                     inner: Optional[AttackBudget] = None,
                     seed: int = 0, sample_id: int = 0) -> AttackOutcome:
    """Smallest PGD budget in [0, eps_max] that fools the model.

    Binary search on epsilon until the bracket is narrower than
    ``resolution``; every probe reuses the same noise seed. If even
    ``eps_max`` fails the outcome has ``success=False`` and an infinite
    perturbation size.
    """
    if resolution <= 0:
        raise InvalidInputError("resolution must be positive")
    if not 0 < eps_max <= 1:
        raise InvalidInputError("eps_max must lie in (0, 1]")
    inner = inner or AttackBudget(epsilon=eps_max)
    queries = 0

    def probe(eps):
        nonlocal queries
        out = pgd(model, x, y, inner.with_epsilon(eps), seed, sample_id)
        queries += max(out.queries, 1)
        return out

    first = probe(0.0)
    if first.success:
        first.queries = queries
        return first
    top = probe(eps_max)
    if not top.success:
        return AttackOutcome(top.adversarial, math.inf, False, queries,
                             sample_id, int(y), top.predicted_label, eps_max)
    lo, hi, best = 0.0, eps_max, top
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        out = probe(mid)
        if out.success:
            hi, best = mid, out
        else:
            lo = mid
    best.queries = queries
    return best


def min_perturbation_set(model: Classifier, x: np.ndarray, y: np.ndarray,
                         eps_max: float, resolution: float = DEFAULT_RESOLUTION,
                         inner: Optional[AttackBudget] = None,
                         seed: int = 0) -> list:
    return [min_perturbation(model, x[i], int(y[i]), eps_max, resolution,
                             inner, seed, i)
            for i in range(len(y))]


CSV_FIELDS = ("sample_id", "true_label", "predicted_label", "epsilon_budget",
              "perturbation_size", "success")


def write_outcomes_csv(path, outcomes: list) -> None:
    """Write outcomes with epsilons in 1/255 units; an infinite size (failed
    minimal-perturbation search) is written as the budget."""
    rows = sorted(outcomes, key=lambda o: (o.sample_id, o.epsilon_budget))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for o in rows:
            size = o.epsilon_budget if math.isinf(o.perturbation_size) else o.perturbation_size
            w.writerow([o.sample_id, o.true_label, o.predicted_label,
                        repr(round(o.epsilon_budget * 255, 9)),
                        repr(round(size * 255, 9)), int(o.success)])


def read_outcomes_csv(path, minimal: bool = False) -> list:
    """Inverse of ``write_outcomes_csv`` (adversarial inputs are not stored).

    With ``minimal=True`` a failed row gets its infinite size back.
    """
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            success = bool(int(row["success"]))
            size = float(row["perturbation_size"]) / 255
            if minimal and not success:
                size = math.inf
            budget = float(row["epsilon_budget"]) / 255
            out.append(AttackOutcome(np.empty(0), size, success, 0,
                                     int(row["sample_id"]), int(row["true_label"]),
                                     int(row["predicted_label"]), budget))
    return out

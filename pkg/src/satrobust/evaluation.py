"""Accuracy-vs-epsilon curves and the area under them (AUAC)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidInputError

EPS_MAX_CHOICES = (16 / 255, 30 / 255)


def default_grid(eps_max_255: int) -> np.ndarray:
    """Unit steps up to 16, steps of 2 up to 30 (in 1/255 units)."""
    step = 1 if eps_max_255 <= 16 else 2
    return np.arange(0, eps_max_255 + step, step, dtype=float) / 255


@dataclass
class AccuracyCurve:
    epsilons: np.ndarray
    accuracies: np.ndarray
    attack: str = "pgd"
    model: str = "model"
    n_test: int = 0

    def __post_init__(self):
        self.epsilons = np.asarray(self.epsilons, dtype=np.float64)
        self.accuracies = np.asarray(self.accuracies, dtype=np.float64)
        if self.epsilons.shape != self.accuracies.shape or self.epsilons.ndim != 1:
            raise InvalidInputError("epsilons and accuracies must be equal-length 1-d")
        if len(self.epsilons) == 0 or self.epsilons[0] != 0.0:
            raise InvalidInputError("curve must start at epsilon 0")
        if np.any(np.diff(self.epsilons) <= 0):
            raise InvalidInputError("epsilons must be strictly increasing")
        if np.any(self.accuracies < 0) or np.any(self.accuracies > 1):
            raise InvalidInputError("accuracies must lie in [0, 1]")

    @property
    def points(self):
        return list(zip(self.epsilons.tolist(), self.accuracies.tolist()))

    def to_csv(self, path) -> None:
        """Write ``epsilon,accuracy`` rows with epsilon in 1/255 units."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "accuracy"])
            for e, a in self.points:
                w.writerow([repr(round(e * 255, 9)), repr(a)])

    def sidecar(self, hold_last: bool = True) -> dict:
        doc = {"model": self.model, "attack": self.attack, "n_test": self.n_test,
               "grid": [round(e * 255, 9) for e in self.epsilons.tolist()]}
        for em in (16, 30):
            try:
                doc[f"auac@{em}"] = auac(self, em / 255, hold_last).auac
            except InvalidInputError:
                doc[f"auac@{em}"] = None
        return doc

    def save(self, csv_path, hold_last: bool = True) -> None:
        csv_path = Path(csv_path)
        self.to_csv(csv_path)
        csv_path.with_suffix(".json").write_text(
            json.dumps(self.sidecar(hold_last), indent=2))

    @classmethod
    def load(cls, csv_path) -> "AccuracyCurve":
        csv_path = Path(csv_path)
        eps, acc = [], []
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                eps.append(float(row["epsilon"]) / 255)
                acc.append(float(row["accuracy"]))
        meta = {}
        side = csv_path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        return cls(np.array(eps), np.array(acc), meta.get("attack", "pgd"),
                   meta.get("model", csv_path.stem), meta.get("n_test", 0))


@dataclass
class AuacReport:
    auac: float
    epsilon_max: float
    curve: AccuracyCurve
    rule: str = "trapezoid"


def curve_from_bounded_sweep(tables: Mapping[float, Sequence], attack: str = "pgd",
                             model: str = "model") -> AccuracyCurve:
    """Accuracy at each budget from per-epsilon outcome tables.

    A sample counts as accurate at epsilon when it is classified correctly
    without perturbation and the attack at that budget fails. Clean
    correctness is read from the epsilon-0 table, which is required.
    """
    if not tables:
        raise InvalidInputError("no outcome tables")
    if 0.0 not in tables:
        raise InvalidInputError("bounded sweep needs an epsilon-0 table for clean accuracy")
    eps = sorted(tables)
    ids0 = [o.sample_id for o in sorted(tables[0.0], key=lambda o: o.sample_id)]
    clean = {o.sample_id: not o.success for o in tables[0.0]}
    n = len(ids0)
    acc = []
    for e in eps:
        rows = tables[e]
        if sorted(o.sample_id for o in rows) != ids0:
            raise InvalidInputError(f"table at epsilon {e:.6g} covers a different test set")
        acc.append(sum(clean[o.sample_id] and not o.success for o in rows) / n)
    return AccuracyCurve(np.array(eps), np.array(acc), attack, model, n)


def curve_from_min_perturbations(outcomes: Sequence, grid: Sequence[float],
                                 attack: str = "minperturb",
                                 model: str = "model") -> AccuracyCurve:
    """Survival curve of the per-sample minimal perturbation sizes.

    Accuracy at epsilon is the fraction of the test set whose smallest
    fooling perturbation exceeds epsilon. Misclassified clean samples have
    size 0 and so never count.
    """
    sizes = np.array([o.perturbation_size if o.success else math.inf
                      for o in outcomes], dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    n = len(sizes)
    if n == 0:
        raise InvalidInputError("no outcomes")
    acc = np.array([(sizes > e).sum() / n for e in grid])
    return AccuracyCurve(grid, acc, attack, model, n)


def auac(curve: AccuracyCurve, epsilon_max: float,
         hold_last: bool = True) -> AuacReport:
    """Trapezoid area under the curve on [0, epsilon_max], over epsilon_max.

    A grid point past epsilon_max is replaced by the linear interpolant at
    epsilon_max. When the curve stops short of epsilon_max its last value is
    held constant, or InvalidInputError is raised if ``hold_last`` is off.
    """
    if not epsilon_max > 0:
        raise InvalidInputError("epsilon_max must be positive")
    e, a = curve.epsilons, curve.accuracies
    last = e[-1]
    if last < epsilon_max and not math.isclose(last, epsilon_max, rel_tol=1e-9, abs_tol=1e-12):
        if not hold_last:
            raise InvalidInputError(
                f"curve ends at {last * 255:.4g}/255, short of epsilon_max "
                f"{epsilon_max * 255:.4g}/255")
        e = np.append(e, epsilon_max)
        a = np.append(a, a[-1])
    else:
        inside = e < epsilon_max
        a_end = float(np.interp(epsilon_max, e, a))
        e = np.append(e[inside], epsilon_max)
        a = np.append(a[inside], a_end)
    if np.all(a == 1.0):
        return AuacReport(1.0, epsilon_max, curve)
    area = float(np.sum(np.diff(e) * 0.5 * (a[1:] + a[:-1])))
    value = min(1.0, max(0.0, area / epsilon_max))
    return AuacReport(value, epsilon_max, curve)

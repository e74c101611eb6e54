"""Entropic optimal transport between discrete measures.

Log-domain Sinkhorn with sigma-annealing, the debiased Sinkhorn divergence,
its gradient with respect to support points, and two brute-force oracles
(exact assignment OT and the energy-distance MMD) used to check the small-
and large-sigma limits.
"""
from __future__ import annotations

import itertools
import json
from typing import Optional
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalFailure, UnsupportedInputError

DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-9
# sigma is multiplied by this factor each iteration until it reaches its target
SLOWEST_SCALING = 0.9
GRAD_MAX_VIOLATION = 1e-3
_DROP_WEIGHT = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud in R^d.

    Atoms with weight below 1e-12 are dropped and the rest renormalized.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidInputError("points must be a non-empty (n, d) array")
        if w.shape[0] != pts.shape[0]:
            raise InvalidInputError(
                f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise InvalidInputError("points and weights must be finite")
        if np.any(w < 0):
            raise InvalidInputError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"weights sum to {w.sum()!r}, expected 1")
        keep = w >= _DROP_WEIGHT
        pts, w = pts[keep], w[keep]
        w = w / w.sum()
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SinkhornResult:
    potential_f: np.ndarray
    potential_g: np.ndarray
    cost: float
    plan: np.ndarray
    iterations_run: int
    max_marginal_violation: float
    tol: float = field(default=DEFAULT_TOL, repr=False)

    @property
    def converged(self) -> bool:
        return self.max_marginal_violation <= self.tol

    def to_json(self, include_plan: bool = False) -> str:
        doc = {
            "cost": float(self.cost),
            "iterations_run": int(self.iterations_run),
            "max_marginal_violation": float(self.max_marginal_violation),
        }
        if include_plan:
            doc["plan"] = self.plan.tolist()
        return json.dumps(doc)


def _check_pair(a: DiscreteMeasure, b: DiscreteMeasure):
    if a.dim != b.dim:
        raise InvalidInputError(
            f"dimension mismatch: {a.dim} vs {b.dim}")


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def cost_matrix(a: DiscreteMeasure, b: DiscreteMeasure) -> np.ndarray:
    """Squared Euclidean distances between the supports of ``a`` and ``b``."""
    _check_pair(a, b)
    return _sq_dists(a.points, b.points)


def _plan(log_a, log_b, f, g, C, sigma):
    return np.exp(log_a[:, None] + log_b[None, :]
                  + (f[:, None] + g[None, :] - C) / sigma)


def logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    """Stable log(sum(exp(x))) along ``axis`` for finite ``x``.

    A bare numpy version: scipy's general one carries enough per-call
    overhead to dominate Sinkhorn on minibatch-sized cost matrices.
    """
    m = x.max(axis=axis, keepdims=True)
    return np.log(np.exp(x - m).sum(axis=axis)) + np.squeeze(m, axis)


def sinkhorn(a: DiscreteMeasure, b: DiscreteMeasure, sigma: float,
             max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
             scaling: Optional[float] = None) -> SinkhornResult:
    """Entropic OT with KL(plan | a x b) regularization, in the log domain.

    The potentials are parameterized so that
    ``plan[i, j] = a_i b_j exp((f_i + g_j - C_ij) / sigma)``. Each iteration
    runs one Gauss-Seidel sweep in both orders (f then g, g then f) and
    averages them, which makes the result exactly symmetric under swapping
    ``a`` and ``b``. sigma starts at the largest cost entry and shrinks by
    ``scaling`` per iteration until it reaches its target; the marginal
    violation is only checked against ``tol`` once at the target. By default
    the ratio reaches the target halfway through the budget, but never
    anneals slower than ``SLOWEST_SCALING``: slow annealing is what keeps
    small-sigma problems with clustered supports from stalling.
    """
    if not np.isfinite(sigma) or sigma <= 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma!r}")
    if max_iters < 1:
        raise InvalidInputError("max_iters must be >= 1")
    if scaling is not None and not 0 < scaling <= 1:
        raise InvalidInputError("scaling must lie in (0, 1]")
    C = cost_matrix(a, b)
    start = max(float(C.max()), sigma)
    if scaling is None:
        scaling = min(SLOWEST_SCALING, (sigma / start) ** (1.0 / max(1, max_iters // 2)))
    log_a, log_b = np.log(a.weights), np.log(b.weights)

    def update_f(g, s):
        return -s * logsumexp(log_b[None, :] + (g[None, :] - C) / s, axis=1)

    def update_g(f, s):
        return -s * logsumexp(log_a[:, None] + (f[:, None] - C) / s, axis=0)

    f = np.zeros(a.size)
    g = np.zeros(b.size)
    current = start / scaling
    violation = np.inf
    plan = None
    it = 0
    while it < max_iters:
        it += 1
        current = max(sigma, current * scaling)
        f1 = update_f(g, current)
        g1 = update_g(f1, current)
        g2 = update_g(f, current)
        f2 = update_f(g2, current)
        f, g = 0.5 * (f1 + f2), 0.5 * (g1 + g2)
        if current == sigma:
            plan = _plan(log_a, log_b, f, g, C, sigma)
            violation = max(np.abs(plan.sum(1) - a.weights).max(),
                            np.abs(plan.sum(0) - b.weights).max())
            if violation <= tol:
                break
    if plan is None:
        # budget ran out while still annealing: project the rows at the
        # target sigma so the plan stays bounded
        f = update_f(g, sigma)
        plan = _plan(log_a, log_b, f, g, C, sigma)
        violation = max(np.abs(plan.sum(1) - a.weights).max(),
                        np.abs(plan.sum(0) - b.weights).max())
    # equals <plan, C> + sigma * KL(plan | a x b) for this plan
    cost = float(np.sum(plan * (f[:, None] + g[None, :])))
    if not np.isfinite(cost):
        raise NumericalFailure("sinkhorn produced a non-finite cost")
    return SinkhornResult(f, g, cost, plan, it, float(violation), tol)


def entropic_cost(a: DiscreteMeasure, b: DiscreteMeasure, sigma: float,
                  max_iters: int = DEFAULT_MAX_ITERS,
                  tol: float = DEFAULT_TOL) -> float:
    return sinkhorn(a, b, sigma, max_iters, tol).cost


def sinkhorn_divergence(a: DiscreteMeasure, b: DiscreteMeasure, sigma: float,
                        max_iters: int = DEFAULT_MAX_ITERS,
                        tol: float = DEFAULT_TOL) -> float:
    """Debiased divergence W(a, b) - W(a, a)/2 - W(b, b)/2."""
    _check_pair(a, b)
    return (entropic_cost(a, b, sigma, max_iters, tol)
            - 0.5 * entropic_cost(a, a, sigma, max_iters, tol)
            - 0.5 * entropic_cost(b, b, sigma, max_iters, tol))


def _grad_cross(x, y, plan):
    """Gradients of <plan, C(x, y)> in x and y with the plan held fixed."""
    gx = 2.0 * (plan.sum(1)[:, None] * x - plan @ y)
    gy = 2.0 * (plan.sum(0)[:, None] * y - plan.T @ x)
    return gx, gy


def _grad_self(x, plan):
    gx, gy = _grad_cross(x, x, plan)
    return gx + gy


def sinkhorn_divergence_with_grads(a: DiscreteMeasure, b: DiscreteMeasure,
                                   sigma: float,
                                   max_iters: int = DEFAULT_MAX_ITERS,
                                   tol: float = DEFAULT_TOL,
                                   max_violation: float = GRAD_MAX_VIOLATION):
    """Return ``(S, dS/da.points, dS/db.points)``.

    Gradients treat the optimal plans as constants (envelope theorem), so
    they are exact only at convergence. Raises NumericalFailure if any of
    the three transport problems ends with a marginal violation above
    ``max_violation``.
    """
    _check_pair(a, b)
    results = {}
    for key, (u, v) in {"ab": (a, b), "aa": (a, a), "bb": (b, b)}.items():
        res = sinkhorn(u, v, sigma, max_iters, tol)
        if res.max_marginal_violation > max_violation:
            raise NumericalFailure(
                f"sinkhorn W({key[0]},{key[1]}) did not converge: violation "
                f"{res.max_marginal_violation:.3g} after {res.iterations_run} "
                f"iterations (sigma={sigma})")
        results[key] = res
    value = (results["ab"].cost - 0.5 * results["aa"].cost
             - 0.5 * results["bb"].cost)
    gx, gy = _grad_cross(a.points, b.points, results["ab"].plan)
    gx = gx - 0.5 * _grad_self(a.points, results["aa"].plan)
    gy = gy - 0.5 * _grad_self(b.points, results["bb"].plan)
    return value, gx, gy


def sinkhorn_divergence_grad(a: DiscreteMeasure, b: DiscreteMeasure,
                             sigma: float,
                             max_iters: int = DEFAULT_MAX_ITERS,
                             tol: float = DEFAULT_TOL,
                             max_violation: float = GRAD_MAX_VIOLATION
                             ) -> np.ndarray:
    """Gradient of the Sinkhorn divergence with respect to ``b.points``."""
    return sinkhorn_divergence_with_grads(
        a, b, sigma, max_iters, tol, max_violation)[2]


def exact_ot_oracle(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Unregularized OT cost by enumerating every permutation.

    Only uniform measures of equal size n <= 8 are supported; for those an
    optimal plan is a permutation (Birkhoff).
    """
    _check_pair(a, b)
    n = a.size
    if b.size != n:
        raise UnsupportedInputError("oracle needs measures of equal size")
    if n > 8:
        raise UnsupportedInputError("oracle limited to n <= 8")
    for m in (a, b):
        if np.max(np.abs(m.weights - 1.0 / n)) > 1e-12:
            raise UnsupportedInputError("oracle needs uniform weights")
    C = cost_matrix(a, b)
    rows = np.arange(n)
    best = min(C[rows, list(p)].sum() for p in itertools.permutations(rows))
    return float(best) / n


def mmd_energy(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Energy distance with kernel -|x - y|^2 / 2; zero when ``a == b``."""
    _check_pair(a, b)
    wa, wb = a.weights, b.weights
    cross = wa @ _sq_dists(a.points, b.points) @ wb
    self_a = wa @ _sq_dists(a.points, a.points) @ wa
    self_b = wb @ _sq_dists(b.points, b.points) @ wb
    return float(cross - 0.5 * self_a - 0.5 * self_b)

"""Desk-scale experiment pipelines shared by the scripts, CLI and tests."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .attacks import EVAL_STEPS, AttackBudget, attack_set
from .datasets import Dataset, two_moons
from .defenses import DefenseConfig, train
from .diffnet import Classifier
from .evaluation import AccuracyCurve, auac, curve_from_bounded_sweep

EPS_TRAIN = 8 / 255
SWEEP_GRID = np.arange(0, 31, 2) / 255
SIGMAS = (0.01, 0.1, 1.0, 10.0, 100.0)

# shared training recipe for the toy comparisons; 200 Sinkhorn iterations
# leave room for annealing down to sigma = 0.01 once logits grow
TOY_RECIPE = dict(epochs=400, batch_size=32, lr=0.1, lr_decay=0.1,
                  lr_decay_epochs=(300,), weight_decay=5e-4, hidden=(64, 64),
                  sinkhorn_iters=200)
TOY_MOONS = dict(n_per_class=200, noise=0.05, n_test_per_class=150)


def toy_moons(seed: int = 0) -> Dataset:
    return two_moons(seed=seed, **TOY_MOONS)


def defense_config(kind: str, seed: int = 0, sigma: Optional[float] = None,
                   **overrides) -> DefenseConfig:
    eps = 0.0 if kind == "standard" else EPS_TRAIN
    if kind == "sat" and sigma is None:
        sigma = 1.0
    params = {**TOY_RECIPE, **overrides}
    return DefenseConfig(kind=kind, sigma=sigma if kind == "sat" else None,
                         eps_train=eps, seed=seed, **params)


def bounded_sweep(model: Classifier, data: Dataset, grid: Sequence[float] = SWEEP_GRID,
                  steps: int = EVAL_STEPS, seed: int = 0) -> dict:
    """Re-run PGD at every grid budget; returns {epsilon: outcomes}."""
    x, y = data.test.inputs, data.test.labels
    return {float(e): attack_set(model, x, y, AttackBudget(float(e), steps), seed)
            for e in grid}


def robustness_curve(model: Classifier, data: Dataset, name: str = "model",
                     grid: Sequence[float] = SWEEP_GRID, seed: int = 0) -> AccuracyCurve:
    return curve_from_bounded_sweep(bounded_sweep(model, data, grid, seed=seed),
                                    "pgd", name)


def compare_defenses(seed: int = 0, kinds=("standard", "madry", "mixed", "atda", "sat"),
                     data: Optional[Dataset] = None, **overrides) -> dict:
    """Train each defense on two moons and return {kind: (curve, auac16, auac30)}."""
    data = data or toy_moons(seed)
    out = {}
    for kind in kinds:
        model, _ = train(defense_config(kind, seed, **overrides), data)
        curve = robustness_curve(model, data, kind, seed=seed)
        out[kind] = (curve, auac(curve, 16 / 255).auac, auac(curve, 30 / 255).auac)
    return out


def sigma_ablation(seed: int = 0, sigmas: Sequence[float] = SIGMAS,
                   data: Optional[Dataset] = None, **overrides) -> dict:
    """SAT at each sigma; returns {sigma: (curve, auac16, auac30)}."""
    data = data or toy_moons(seed)
    out = {}
    for sigma in sigmas:
        model, _ = train(defense_config("sat", seed, sigma=sigma, **overrides), data)
        curve = robustness_curve(model, data, f"sat_{sigma:g}", seed=seed)
        out[sigma] = (curve, auac(curve, 16 / 255).auac, auac(curve, 30 / 255).auac)
    return out

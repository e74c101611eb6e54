"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line that the terminal summary prints
after the run (see conftest.py), then asserts.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from helpers import fd_param_grads, linear_model, tiny_model, trapezoid_oracle
from satrobust.attacks import AttackBudget, min_perturbation, pgd
from satrobust.cli import main
from satrobust.datasets import load_cifar10_binary
from satrobust.diffnet import Batch, backward, predict
from satrobust.errors import FormatError
from satrobust.evaluation import AccuracyCurve, auac
from satrobust.experiments import SIGMAS, compare_defenses, sigma_ablation
from satrobust.ot import (DiscreteMeasure, entropic_cost, exact_ot_oracle, mmd_energy,
                          sinkhorn_divergence, sinkhorn_divergence_grad)

U = DiscreteMeasure.uniform


def record(number, ok, detail):
    ACCEPTANCE_LINES.append((number, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def gaussian_pair(seed, n_max=6, same_size=False):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, n_max + 1))
    m = n if same_size else int(rng.integers(1, n_max + 1))
    return U(rng.standard_normal((n, 2))), U(rng.standard_normal((m, 2)))


def test_c01_sinkhorn_matches_exact_ot():
    start = time.perf_counter()
    worst, failures = 0.0, 0
    for seed in range(50):
        a, b = gaussian_pair(seed, same_size=True)
        exact = exact_ot_oracle(a, b)
        err = abs(entropic_cost(a, b, 1e-3) - exact)
        allowed = max(1e-3, 0.01 * abs(exact))
        worst = max(worst, err / allowed)
        failures += err > allowed
    elapsed = time.perf_counter() - start
    record(1, failures == 0 and elapsed < 5,
           f"{failures}/50 pairs outside tolerance, worst error/tolerance {worst:.3f}, {elapsed:.2f}s")


def test_c02_divergence_axioms():
    worst_self = worst_neg = worst_sym = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, m = rng.integers(1, 7, size=2)
        a, b = U(rng.random((n, 2))), U(rng.random((m, 2)))
        for sigma in SIGMAS:
            s_ab = sinkhorn_divergence(a, b, sigma)
            s_ba = sinkhorn_divergence(b, a, sigma)
            worst_self = max(worst_self, sinkhorn_divergence(a, a, sigma))
            worst_neg = max(worst_neg, -min(s_ab, s_ba))
            worst_sym = max(worst_sym, abs(s_ab - s_ba))
    ok = worst_self <= 1e-7 and worst_neg <= 1e-7 and worst_sym <= 1e-7
    record(2, ok, f"max S(a,a) {worst_self:.2e}, max -S {worst_neg:.2e}, "
                  f"max asymmetry {worst_sym:.2e} (bound 1e-7)")


def test_c03_large_sigma_is_energy_distance():
    worst = 0.0
    for seed in range(20):
        a, b = gaussian_pair(seed)
        mmd = mmd_energy(a, b)
        worst = max(worst, abs(sinkhorn_divergence(a, b, 1e4) - mmd) / abs(mmd))
    record(3, worst <= 1e-2, f"max relative gap {worst:.2e} (bound 1e-2)")


def _rel_err(g, f, floor=1e-7):
    return float(np.max(np.abs(g - f) / np.maximum(np.abs(f), floor)))


def test_c04_gradient_fidelity():
    h = 1e-4
    kw = dict(max_iters=3000, tol=1e-13)
    ot_fail, worst_ot = 0, 0.0
    for seed in range(20):
        a, b = gaussian_pair(100 + seed, n_max=4)
        g = sinkhorn_divergence_grad(a, b, 1.0, **kw)
        f = np.zeros_like(b.points)
        for idx in np.ndindex(*b.points.shape):
            hi, lo = b.points.copy(), b.points.copy()
            hi[idx] += h
            lo[idx] -= h
            f[idx] = (sinkhorn_divergence(a, DiscreteMeasure(hi, b.weights), 1.0, **kw)
                      - sinkhorn_divergence(a, DiscreteMeasure(lo, b.weights), 1.0, **kw)) / (2 * h)
        ok = np.allclose(g, f, rtol=1e-3, atol=1e-7)
        ot_fail += not ok
        worst_ot = max(worst_ot, _rel_err(g, f))
    net_fail, worst_net = 0, 0.0
    for seed in range(20):
        model = tiny_model(seed)
        rng = np.random.default_rng(seed)
        batch = Batch(rng.random((5, 3)), rng.integers(0, 3, 5))
        tape = backward(model, batch)
        fw, fb = fd_param_grads(model, batch.inputs, batch.labels)
        for g, f in zip(tape.weights + tape.biases, fw + fb):
            ok = np.allclose(g, f, rtol=1e-3, atol=1e-7)
            net_fail += not ok
            worst_net = max(worst_net, _rel_err(g, f))
    record(4, ot_fail == 0 and net_fail == 0,
           f"sinkhorn grad {20 - ot_fail}/20 ok (max rel {worst_ot:.1e}), "
           f"diffnet backward {net_fail} bad tensors over 20 models (max rel {worst_net:.1e})")


def test_c05_attack_soundness():
    violations = 0
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        model = tiny_model(seed % 20)
        x = rng.random(3)
        x[rng.random(3) < 0.3] = rng.choice([0.0, 1.0])
        eps = float(rng.choice([0.0, rng.uniform(0, 0.5)]))
        out = pgd(model, x, int(rng.integers(0, 3)), AttackBudget(eps, int(rng.integers(1, 11))), seed=seed)
        adv = out.adversarial
        violations += np.max(np.abs(adv - x)) > eps or adv.min() < 0 or adv.max() > 1
    exact = True
    for seed in range(5):
        rng = np.random.default_rng(seed)
        w, b = rng.normal(size=(4, 2)), rng.normal(size=2)
        model = linear_model(w, b)
        x = rng.uniform(0, 1, 4)
        y = int(predict(model, x[None])[0])
        out = pgd(model, x, y, AttackBudget(0.05, 1, 0.03, random_init=False))
        expected = np.clip(np.clip(x + 0.03 * np.sign(w[:, 1 - y] - w[:, y]), x - 0.05, x + 0.05), 0, 1)
        exact &= np.array_equal(out.adversarial, expected)
    record(5, violations == 0 and exact,
           f"{violations} ball/box violations in 1000 runs; one-step closed form exact: {exact}")


def test_c06_min_perturbation_geometry():
    res = 0.5 / 255
    worst, bad = 0.0, 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        w, b = rng.normal(scale=3.0, size=(4, 2)), rng.normal(scale=0.1, size=2)
        model = linear_model(w, b)
        x = rng.uniform(0.4, 0.6, 4)
        y = int(predict(model, x[None])[0])
        z = x @ w + b
        margin = (z[y] - z[1 - y]) / np.abs(w[:, y] - w[:, 1 - y]).sum()
        out = min_perturbation(model, x, y, 0.4, resolution=res, seed=seed, sample_id=seed)
        if margin > 0.4:
            bad += out.success
            continue
        err = abs(out.perturbation_size - margin)
        worst = max(worst, err / res)
        bad += err > 2 * res
    record(6, bad == 0, f"{bad}/20 models off by more than 2x resolution "
                        f"(worst {worst:.2f}x resolution)")


def test_c07_auac_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 25))
        eps = np.concatenate([[0.0], np.cumsum(rng.uniform(1e-3, 0.02, n - 1))])
        acc = rng.random(n)
        eps_max = float(rng.uniform(0.01, 0.3))
        worst = max(worst, abs(auac(AccuracyCurve(eps, acc), eps_max).auac
                               - trapezoid_oracle(eps, acc, eps_max)))
    grid = np.arange(0, 31, 2) / 255
    flat = auac(AccuracyCurve(grid, np.ones(16)), 30 / 255).auac
    const = auac(AccuracyCurve(grid, np.full(16, 0.37)), 16 / 255).auac
    ok = worst <= 1e-9 and flat == 1.0 and abs(const - 0.37) <= 1e-12
    record(7, ok, f"max oracle gap {worst:.1e}; flat-1 AUAC {flat}; constant-0.37 AUAC {const:.12f}")


@pytest.mark.slow
def test_c08_end_to_end_ordering():
    start = time.perf_counter()
    res = compare_defenses(seed=0)
    elapsed = time.perf_counter() - start
    std16, std30 = res["standard"][1], res["standard"][2]
    gap = res["sat"][2] - std30
    beats = {k: res[k][1] > std16 for k in ("madry", "mixed", "atda", "sat")}
    ok = gap >= 0.15 and all(beats.values()) and elapsed < 600
    table = ", ".join(f"{k} {v[1]:.3f}/{v[2]:.3f}" for k, v in res.items())
    record(8, ok, f"AUAC@16/@30 {table}; SAT-Standard @30 gap {gap:+.3f} (need 0.15); "
                  f"beat Standard @16: {beats}; {elapsed:.0f}s")


@pytest.mark.slow
def test_c09_sigma_ablation():
    wins, finished, rows = 0, True, []
    for seed in range(3):
        try:
            res = sigma_ablation(seed=seed)
        except ArithmeticError as exc:
            finished = False
            rows.append(f"seed {seed}: {exc}")
            continue
        a30 = {s: v[2] for s, v in res.items()}
        best = max(a30, key=a30.get)
        wins += best == 1.0
        rows.append(f"seed {seed}: " + " ".join(f"{s:g}:{v:.3f}" for s, v in a30.items())
                    + f" best={best:g}")
    record(9, finished and wins >= 2,
           f"sigma=1 best in {wins}/3 seeds; all runs finished: {finished}; " + "; ".join(rows))


def test_c10_cifar_ingestion(tmp_path):
    rng = np.random.default_rng(0)
    record_bytes = np.concatenate([[7], rng.integers(0, 256, 3072)]).astype(np.uint8)
    good = tmp_path / "one.bin"
    good.write_bytes(record_bytes.tobytes() * 2)
    data = load_cifar10_binary([good], test_paths=[good])
    exact = (data.train.labels.tolist() == [7, 7]
             and np.array_equal(data.train.inputs[0], record_bytes[1:] / 255.0))
    rejected = 0
    for n in (3072, 3074, 3073 * 2 - 1):
        bad = tmp_path / f"bad{n}.bin"
        bad.write_bytes(bytes(n))
        try:
            load_cifar10_binary([bad], test_paths=[bad])
        except FormatError:
            rejected += 1
    record(10, exact and rejected == 3,
           f"synthetic record round trip exact: {exact}; malformed lengths rejected {rejected}/3")


def test_c11_cli_determinism(tmp_path):
    cfg = {"experiment_id": "det",
           "dataset": {"name": "two_moons", "n_per_class": 30, "noise": 0.1, "seed": 0,
                       "n_test_per_class": 10},
           "defense": {"kind": "sat", "sigma": 1.0, "eps_train": 8, "epochs": 3,
                       "batch_size": 16, "hidden": [16, 16]}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    for run in ("r1", "r2"):
        out = str(tmp_path / run)
        assert main(["train", "--config", str(cfg_path), "--out-dir", out, "--seed", "5"]) == 0
        assert main(["sweep", "--out-dir", out, "--grid", "0,8,16"]) == 0
        assert main(["sweep", "--out-dir", out, "--mode", "minperturb", "--grid", "0,8,16",
                     "--eps-max", "16", "--resolution", "1"]) == 0
    r1 = tmp_path / "r1"
    outputs = sorted(p.relative_to(r1) for p in r1.rglob("*")
                     if p.suffix in (".csv", ".json") and p.name != "manifest.json")
    differ = [str(p) for p in outputs if (r1 / p).read_bytes() != (tmp_path / "r2" / p).read_bytes()]
    record(11, not differ and len(outputs) >= 8,
           f"{len(outputs)} CSV/report files compared, {len(differ)} differ {differ}")

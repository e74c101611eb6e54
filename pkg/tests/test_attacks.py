import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import linear_model, tiny_model
from satrobust.attacks import (AttackBudget, attack_set, min_perturbation,
                               min_perturbation_set, pgd, pgd_batch,
                               read_outcomes_csv, write_outcomes_csv)
from satrobust.diffnet import forward, predict
from satrobust.errors import InvalidInputError


def linear_pair(seed, d=4, scale=1.0):
    """Two-class linear model plus an input in the middle of the box."""
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=scale, size=(d, 2))
    b = rng.normal(scale=0.1, size=2)
    x = rng.uniform(0.4, 0.6, size=d)
    return linear_model(w, b), x


def linf_margin(model, x, y):
    """Analytic L-inf distance to the decision boundary of a 2-class linear
    model, ignoring the box."""
    w, b = model.layers[0].weight, model.layers[0].bias
    z = x @ w + b
    o = 1 - y
    return (z[y] - z[o]) / np.abs(w[:, y] - w[:, o]).sum()


def test_budget_validation():
    with pytest.raises(InvalidInputError):
        AttackBudget(1.5)
    with pytest.raises(InvalidInputError):
        AttackBudget(0.1, steps=0)
    with pytest.raises(InvalidInputError):
        AttackBudget(0.1, step_size=0.2)
    assert AttackBudget(0.1, steps=10).alpha == pytest.approx(0.025)


def test_zero_budget_returns_input():
    model, x = linear_pair(0)
    out = pgd(model, x, 0, AttackBudget(0.0))
    np.testing.assert_array_equal(out.adversarial, x)
    assert out.perturbation_size == 0.0


def test_pgd_rejects_out_of_box_input():
    model, _ = linear_pair(0)
    with pytest.raises(InvalidInputError):
        pgd(model, np.full(4, 1.2), 0, AttackBudget(0.1))


@pytest.mark.parametrize("seed", range(5))
def test_one_step_pgd_linear_closed_form(seed):
    model, x = linear_pair(seed)
    y = int(predict(model, x[None])[0])
    eps, alpha = 0.05, 0.03
    out = pgd(model, x, y, AttackBudget(eps, steps=1, step_size=alpha, random_init=False))
    w = model.layers[0].weight
    # CE gradient on x is p_other * (w_other - w_y)
    direction = np.sign(w[:, 1 - y] - w[:, y])
    expected = np.clip(np.clip(x + alpha * direction, x - eps, x + eps), 0, 1)
    np.testing.assert_array_equal(out.adversarial, expected)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**20), eps=st.floats(0.0, 0.5), steps=st.integers(1, 12))
def test_pgd_respects_ball_and_box(seed, eps, steps):
    model = tiny_model(seed % 50, d=3)
    rng = np.random.default_rng(seed)
    x = rng.choice([0.0, 1.0, 0.5], size=3) * rng.random(3) ** 0.1
    out = pgd(model, np.clip(x, 0, 1), int(rng.integers(0, 3)),
              AttackBudget(eps, steps), seed=seed)
    assert np.max(np.abs(out.adversarial - x)) <= eps
    assert np.all((out.adversarial >= 0) & (out.adversarial <= 1))
    assert out.perturbation_size <= eps


def test_pgd_seeded_and_order_independent():
    model = tiny_model(3)
    rng = np.random.default_rng(0)
    x, y = rng.random((6, 3)), rng.integers(0, 3, 6)
    budget = AttackBudget(0.1)
    full = attack_set(model, x, y, budget, seed=5)
    again = attack_set(model, x, y, budget, seed=5)
    single = pgd(model, x[4], int(y[4]), budget, seed=5, sample_id=4)
    np.testing.assert_array_equal(full[4].adversarial, again[4].adversarial)
    np.testing.assert_array_equal(full[4].adversarial, single.adversarial)


def test_pgd_batch_needs_randomness():
    model = tiny_model(0)
    with pytest.raises(InvalidInputError):
        pgd_batch(model, np.zeros((1, 3)), [0], AttackBudget(0.1))


def test_pgd_lowers_true_class_margin():
    model, x = linear_pair(2)
    y = int(predict(model, x[None])[0])
    z0 = forward(model, x[None])[0]
    out = pgd(model, x, y, AttackBudget(0.05))
    z1 = forward(model, out.adversarial[None])[0]
    assert z1[y] - z1[1 - y] < z0[y] - z0[1 - y]


def test_min_perturbation_zero_when_misclassified():
    model, x = linear_pair(1)
    wrong = 1 - int(predict(model, x[None])[0])
    out = min_perturbation(model, x, wrong, 0.3)
    assert out.success and out.perturbation_size == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_min_perturbation_matches_linear_margin(seed):
    model, x = linear_pair(seed, scale=3.0)
    y = int(predict(model, x[None])[0])
    res = 0.5 / 255
    out = min_perturbation(model, x, y, 0.35, resolution=res)
    margin = linf_margin(model, x, y)
    if margin > 0.35:
        assert not out.success and math.isinf(out.perturbation_size)
    else:
        assert abs(out.perturbation_size - margin) <= 2 * res


def test_min_perturbation_replay_and_monotone_budget():
    model = tiny_model(8)
    rng = np.random.default_rng(1)
    x, y = rng.random(3), 0
    out = min_perturbation(model, x, y, 0.3, seed=2, sample_id=0)
    if out.success:
        # replay the adversarial input
        assert predict(model, out.adversarial[None])[0] != y
        bigger = min_perturbation(model, x, y, 0.6, seed=2)
        assert bigger.success
    assert out.queries >= 1


def test_outcome_csv_round_trip(tmp_path):
    model = tiny_model(4)
    rng = np.random.default_rng(0)
    x, y = rng.random((5, 3)), rng.integers(0, 3, 5)
    outs = min_perturbation_set(model, x, y, 0.05, resolution=0.01)
    path = tmp_path / "o.csv"
    write_outcomes_csv(path, outs)
    back = read_outcomes_csv(path, minimal=True)
    for a, b in zip(sorted(outs, key=lambda o: o.sample_id), back):
        assert (a.sample_id, a.success, a.true_label) == (b.sample_id, b.success, b.true_label)
        if a.success:
            assert b.perturbation_size == pytest.approx(a.perturbation_size, abs=1e-9)
        else:
            assert math.isinf(b.perturbation_size)
    header = path.read_text().splitlines()[0]
    assert header.startswith("sample_id,")


def test_success_rate_grows_with_budget():
    model = tiny_model(6)
    rng = np.random.default_rng(3)
    x, y = rng.random((40, 3)), rng.integers(0, 3, 40)
    rates = [np.mean([o.success for o in attack_set(model, x, y, AttackBudget(e), seed=0)])
             for e in (0.0, 0.05, 0.2, 0.5)]
    assert rates == sorted(rates)

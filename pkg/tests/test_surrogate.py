import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capo.surrogate import (
    EXPONENTIAL,
    HINGE,
    KINDS,
    LINEAR,
    SQUARED,
    ScoredInstance,
    SurrogateKind,
    is_consistent,
    logistic,
    phi,
    phi_prime,
    regret_constant,
    sigmoid,
    surrogate_risk,
    true_auc_risk,
)

CONVEX = [logistic(1.0), logistic(0.6), EXPONENTIAL, HINGE, SQUARED]
ALL = CONVEX + [LINEAR]


def test_phi_examples():
    assert phi(logistic(1.0), 0.0) == pytest.approx(math.log(2))
    assert phi(LINEAR, 2.5) == -2.5
    assert phi(EXPONENTIAL, 0.0) == 1.0
    assert phi(HINGE, 3.0) == 0.0
    assert phi(SQUARED, 3.0) == 4.0


def test_phi_logistic_is_stable_for_large_arguments():
    k = logistic(1.0)
    assert phi(k, 700.0) == pytest.approx(math.exp(-700.0), rel=1e-12)
    assert phi(k, -700.0) == pytest.approx(700.0)
    assert math.isfinite(phi(logistic(0.01), -7.0))


def test_phi_prime_examples():
    assert phi_prime(logistic(1.0), 0.0) == -0.5
    big = phi_prime(logistic(1.0), 50.0)
    assert -1e-20 < big < 0.0
    assert phi_prime(LINEAR, 123.0) == -1.0
    assert phi_prime(HINGE, 1.0) == 0.0
    assert phi_prime(HINGE, 0.999) == -1.0


def test_phi_prime_tau_factor():
    k = logistic(0.5)
    assert phi_prime(k, 0.3) == pytest.approx(-1.0 / (1.0 + math.exp(0.3 / 0.5)))
    assert phi_prime(k, 0.3, include_tau_factor=True) == pytest.approx(phi_prime(k, 0.3) / 0.5)


@pytest.mark.parametrize("kind", ALL, ids=str)
def test_phi_prime_matches_finite_differences(kind):
    rng = np.random.default_rng(0)
    h = 1e-6
    for t in rng.uniform(-5, 5, 200):
        if kind.name == "hinge" and abs(t - 1.0) < 1e-3:
            continue
        fd = (phi(kind, t + h) - phi(kind, t - h)) / (2 * h)
        # the logistic derivative carries 1/tau once the factor is restored
        d = phi_prime(kind, t, include_tau_factor=True)
        assert abs(fd - d) <= 1e-6 * max(abs(d), 1e-3)


@pytest.mark.parametrize("kind", CONVEX, ids=str)
def test_convexity_spot_check(kind):
    rng = np.random.default_rng(1)
    t1, t2 = rng.uniform(-10, 10, (2, 1000))
    mid = phi(kind, (t1 + t2) / 2)
    assert np.all(mid <= (phi(kind, t1) + phi(kind, t2)) / 2 + 1e-12)


def test_sigmoid_symmetry_and_range():
    x = np.linspace(-800, 800, 1601)
    s = sigmoid(x)
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s + sigmoid(-x), 1.0, rtol=0, atol=1e-15)
    assert sigmoid(0.0) == 0.5


def test_surrogate_risk_examples():
    assert surrogate_risk(ScoredInstance([1.0, 0.0], [1, 0]), logistic(1.0)) == pytest.approx(math.log1p(math.exp(-1)))
    assert surrogate_risk(ScoredInstance([0.0, 0.0], [1, 0]), logistic(1.0)) == pytest.approx(math.log(2))
    assert surrogate_risk(ScoredInstance([2.0, 1.0, 0.0], [1, 1, 0]), LINEAR) == -1.5


def test_surrogate_risk_matches_pair_enumeration(rng):
    for _ in range(50):
        n = int(rng.integers(2, 12))
        r = rng.integers(0, 2, n)
        r[0], r[1] = 1, 0
        s = rng.normal(size=n)
        inst = ScoredInstance(s, r)
        for kind in ALL:
            pairs = [phi(kind, s[i] - s[j]) for i in range(n) for j in range(n) if r[i] == 1 and r[j] == 0]
            assert surrogate_risk(inst, kind) == pytest.approx(sum(pairs) / len(pairs), rel=1e-12, abs=1e-12)


def test_degenerate_instance():
    inst = ScoredInstance([1.0, 2.0], [1, 1])
    with pytest.raises(ValueError, match="degenerate instance"):
        surrogate_risk(inst, logistic())
    with pytest.raises(ValueError, match="degenerate instance"):
        true_auc_risk(inst)


def test_true_auc_risk_examples():
    assert true_auc_risk(ScoredInstance([1.0, 0.0], [1, 0])) == -1.0
    assert true_auc_risk(ScoredInstance([0.0, 1.0], [1, 0])) == 0.0
    assert true_auc_risk(ScoredInstance([0.5, 0.5], [1, 0])) == -0.5


def test_consistency_classification():
    assert is_consistent(logistic(0.6))
    assert is_consistent(EXPONENTIAL)
    assert is_consistent(HINGE) and is_consistent(SQUARED)
    assert not is_consistent(LINEAR)


def test_regret_constants():
    assert regret_constant(logistic(1.0)) == pytest.approx(1 / math.log(2))
    assert regret_constant(EXPONENTIAL) == 1.0
    with pytest.raises(ValueError, match="no regret bound for inconsistent surrogate"):
        regret_constant(LINEAR)


def test_kind_validation():
    with pytest.raises(ValueError):
        SurrogateKind("cubic")
    with pytest.raises(ValueError):
        logistic(0.0)
    assert SurrogateKind.parse("hinge") == HINGE
    assert set(KINDS) == {"logistic", "exponential", "hinge", "squared", "linear"}


@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    st.sampled_from([0.5, 3.0, 1000.0]),
)
def test_linear_scales_and_logistic_stays_bounded(pos, neg, alpha):
    inst = ScoredInstance(pos + neg, [1] * len(pos) + [0] * len(neg))
    base = surrogate_risk(inst, LINEAR)
    assert surrogate_risk(inst.scaled(alpha), LINEAR) == pytest.approx(alpha * base, rel=1e-9, abs=1e-9)
    assert surrogate_risk(inst.scaled(alpha), logistic(1.0)) >= 0.0

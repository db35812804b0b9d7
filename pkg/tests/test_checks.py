import numpy as np
import pytest

from capo.checks import SUITES, max_relative_error, run_suite


@pytest.mark.parametrize(
    "name, kw",
    [
        ("gradients", {"n": 10}),
        ("identities", {}),
        ("regret", {"n": 200}),
        ("scaling", {"n": 20}),
        ("ustat", {"n": 2000}),
        ("auc-oracle", {"n": 300, "max_len": 50}),
        ("tts-oracle", {"n": 500}),
    ],
)
def test_suites_pass(name, kw):
    res = run_suite(name, seed=1, **kw)
    assert res.ok, res.summary()
    assert res.failed == 0 and res.passed > 0


def test_suite_names():
    assert set(SUITES) == {"gradients", "identities", "regret", "scaling", "ustat", "auc-oracle", "tts-oracle"}
    with pytest.raises(ValueError):
        run_suite("nope")


def test_max_relative_error():
    assert max_relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert max_relative_error([1.0], [1.1]) == pytest.approx(0.1 / 1.1)
    # an exact zero on both sides is not an error
    assert max_relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert max_relative_error([1e-17], [0.0], scale=1.0) == pytest.approx(1e-17)

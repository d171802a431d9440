import math

import numpy as np
import pytest
from scipy import stats

from src.diffkit import sum_, value_and_grad
from src.exception import ContractError, DegenerateParameterError
from src.models.evidential import (
    NIGParams, constrain_nig, decompose, predictive_interval, predictive_scale,
    sample_predictive, student_t_cdf, student_t_quantile,
)

LN2 = math.log(2.0)


def test_constrain_zero_raw():
    p = constrain_nig(np.zeros(4), bounded_mean=True).values()
    assert float(p.mu) == 0.0
    assert float(p.lam) == pytest.approx(LN2 + 0.01, abs=1e-12)
    assert float(p.alpha) == pytest.approx(LN2 + 1.0, abs=1e-12)
    assert float(p.beta) == pytest.approx(0.703147, abs=1e-6)


def test_bounded_mean_saturates():
    p = constrain_nig(np.array([50.0, 0.0, 0.0, 0.0]), bounded_mean=True, bound_scale=3.0).values()
    assert float(p.mu) == pytest.approx(3.0)


def test_constraints_hold_for_any_raw(rng):
    p = constrain_nig(rng.normal(scale=20.0, size=(500, 4))).values()
    assert np.all(p.lam > 0) and np.all(p.alpha > 1) and np.all(p.beta > 0)


@pytest.mark.parametrize("raw_alpha", [-40.0, -1e3])
def test_alpha_stays_above_one_for_very_negative_raw(raw_alpha):
    p = constrain_nig(np.array([[0.0, 0.0, raw_alpha, 0.0]]))
    assert np.all(p.values().alpha > 1.0)
    d = decompose(p)
    assert np.all(np.isfinite(d.total_variance))
    ci = predictive_interval(p, 0.95)
    assert np.all(np.isfinite(ci.width))


def test_alpha_floor_keeps_gradients_finite():
    loss = lambda q: sum_(constrain_nig(q["raw"]).alpha)
    _, grads = value_and_grad(loss, {"raw": np.array([[0.0, 0.0, -40.0, 0.0], [0.0, 0.0, 2.0, 0.0]])})
    assert np.all(np.isfinite(grads["raw"]))
    assert grads["raw"][0, 2] == 0.0
    assert grads["raw"][1, 2] == pytest.approx(1.0 / (1.0 + math.exp(-2.0)))


def test_constrain_needs_four_outputs():
    with pytest.raises(ContractError):
        constrain_nig(np.zeros((2, 3)))


@pytest.mark.parametrize("params,expected", [
    ((0.0, 1.0, 2.0, 1.0), (1.0, 1.0, 2.0)),
    ((0.5, 2.0, 3.0, 4.0), (2.0, 1.0, 3.0)),
])
def test_decompose_examples(params, expected):
    d = decompose(NIGParams(*params))
    assert (float(d.aleatoric), float(d.epistemic), float(d.total_variance)) == pytest.approx(expected)


def test_large_lambda_removes_epistemic():
    d = decompose(NIGParams(0.0, 1e9, 2.0, 1.0))
    assert float(d.epistemic) < 1e-8
    assert float(d.total_variance) == pytest.approx(float(d.aleatoric))


def test_decompose_rejects_alpha_one():
    with pytest.raises(DegenerateParameterError):
        decompose(NIGParams(0.0, 1.0, 1.0, 1.0))


def test_decomposition_identity(rng):
    n = 10_000
    p = NIGParams(rng.normal(size=n), rng.uniform(0.01, 5, n), rng.uniform(1.01, 6, n), rng.uniform(0.01, 5, n))
    d = decompose(p)
    assert np.max(np.abs(d.total_variance - (d.aleatoric + d.epistemic))) < 1e-12
    np.testing.assert_allclose(d.total_variance, d.aleatoric * (1 + 1 / p.lam), rtol=1e-12)


def test_student_t_quantile_matches_tables():
    assert student_t_quantile(0.975, 4.0) == pytest.approx(2.776445, abs=1e-6)
    assert student_t_quantile(0.5, 7.0) == 0.0
    assert student_t_quantile(0.025, 4.0) == pytest.approx(-2.776445, abs=1e-6)
    for df in (1.5, 3.0, 10.0, 80.0):
        for prob in (0.6, 0.9, 0.99):
            assert student_t_quantile(prob, df) == pytest.approx(stats.t.ppf(prob, df), abs=1e-8)
            assert student_t_cdf(stats.t.ppf(prob, df), df) == pytest.approx(prob, abs=1e-10)


def test_predictive_interval_reference_case():
    ci = predictive_interval(NIGParams(0.0, 1.0, 2.0, 1.0), 0.95)
    assert float(predictive_scale(NIGParams(0.0, 1.0, 2.0, 1.0))) == pytest.approx(1.0)
    assert float(ci.lower) == pytest.approx(-2.7764, abs=1e-4)
    assert float(ci.upper) == pytest.approx(2.7764, abs=1e-4)


def test_interval_symmetry_and_monotone_width():
    p = NIGParams(0.3, 0.7, 2.5, 1.2)
    half = predictive_interval(p, 0.5)
    assert float(half.upper) - 0.3 == pytest.approx(0.3 - float(half.lower))
    widths = [float(predictive_interval(p, level).width) for level in (0.5, 0.8, 0.9, 0.95, 0.99)]
    assert all(a < b for a, b in zip(widths, widths[1:]))


def test_invalid_level_and_params():
    with pytest.raises(ContractError):
        predictive_interval(NIGParams(0.0, 1.0, 2.0, 1.0), 1.0)
    with pytest.raises(ContractError):
        predictive_interval(NIGParams(0.0, -1.0, 2.0, 1.0), 0.9)


def test_sampling_shape_and_seed():
    p = NIGParams(np.zeros(3), np.ones(3), np.full(3, 3.0), np.ones(3))
    a = sample_predictive(p, 10, np.random.default_rng(5))
    b = sample_predictive(p, 10, np.random.default_rng(5))
    assert a.shape == (10, 3)
    np.testing.assert_array_equal(a, b)


@pytest.mark.slow
def test_sampling_matches_variance_and_coverage():
    rng = np.random.default_rng(0)
    for params in [(0.0, 1.0, 3.0, 1.0), (1.5, 0.4, 4.5, 2.0), (-0.5, 3.0, 2.5, 0.3)]:
        p = NIGParams(*params)
        draws = sample_predictive(p, 1_000_000, rng)
        total = float(decompose(p).total_variance)
        assert np.var(draws) == pytest.approx(total, rel=0.01)
        ci = predictive_interval(p, 0.95)
        coverage = np.mean((draws >= float(ci.lower)) & (draws <= float(ci.upper)))
        assert abs(coverage - 0.95) < 0.002

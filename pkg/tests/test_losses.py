import math

import numpy as np
import pytest
from scipy import stats

from src.diffkit import as_tensor, finite_diff_check, mean, sum_
from src.exception import ContractError
from src.models.evidential import Interval, NIGParams, constrain_nig
from src.models.heads import HeadSpec, head_forward
from src.models.losses import (
    CombinedLossWeights, LossValue, baseline_loss, combined_loss, coverage_loss,
    der_nll, der_reg, gaussian_nll, huber_loss, mixture_nll, mse_loss,
    pinball_loss, student_t_critical, student_t_nll,
)
from src.models.lstm import LstmSpec, init_params, lstm_forward


def _marginal_nll(mu, lam, alpha, beta, y):
    scale = np.sqrt(beta * (1 + lam) / (alpha * lam))
    return -stats.t.logpdf(y, df=2 * alpha, loc=mu, scale=scale)


def test_der_nll_reference_value():
    assert der_nll(NIGParams(0.0, 1.0, 2.0, 1.0), 0.0).item() == pytest.approx(-math.log(0.375), abs=1e-6)


def test_der_nll_matches_student_t_marginal(rng):
    n = 1000
    mu, lam = rng.uniform(-3, 3, n), rng.uniform(1e-3, 5, n)
    alpha, beta = rng.uniform(1.001, 6, n), rng.uniform(1e-3, 5, n)
    y = rng.uniform(-5, 5, n)
    got = der_nll(NIGParams(mu, lam, alpha, beta), y).data
    assert np.max(np.abs(got - _marginal_nll(mu, lam, alpha, beta, y))) < 1e-8


def test_der_nll_minimized_at_mu():
    p = NIGParams(0.4, 1.3, 2.2, 0.8)
    ys = np.linspace(-2, 2, 81)
    losses = der_nll(NIGParams(*(np.full(ys.size, v) for v in (0.4, 1.3, 2.2, 0.8))), ys).data
    assert ys[np.argmin(losses)] == pytest.approx(0.4)
    assert der_nll(p, 0.4).item() == pytest.approx(losses.min())


def test_der_nll_rejects_invalid_params():
    with pytest.raises(ContractError):
        der_nll(NIGParams(0.0, 1.0, 0.5, 1.0), 0.0)


@pytest.mark.parametrize("mu,y,lam,alpha,expected", [
    (1.0, 1.0, 1.0, 2.0, 0.0),
    (0.5, 0.0, 1.0, 2.0, 0.5),
    (1.0, 0.0, 0.1, 1.5, -0.4),
])
def test_der_reg(mu, y, lam, alpha, expected):
    assert der_reg(NIGParams(mu, lam, alpha, 1.0), y).item() == pytest.approx(expected)


def test_hard_coverage_examples():
    inside = Interval(lower=np.full(4, -1.0), upper=np.full(4, 1.0), level=0.95)
    assert coverage_loss(inside, np.zeros(4), 0.95, hard=True) == pytest.approx(0.05)

    targets = np.r_[np.zeros(19), 5.0]
    band = Interval(lower=np.full(20, -1.0), upper=np.full(20, 1.0), level=0.95)
    assert coverage_loss(band, targets, 0.95, hard=True) == pytest.approx(0.0, abs=1e-12)

    targets = np.r_[np.zeros(16), np.full(4, 5.0)]
    assert coverage_loss(band, targets, 0.95, hard=True) == pytest.approx(0.15)


def test_soft_coverage_converges_to_hard(rng):
    y = rng.normal(size=200)
    band = Interval(lower=np.full(200, -1.0), upper=np.full(200, 1.0), level=0.95)
    hard = coverage_loss(band, y, 0.95, hard=True)
    soft = coverage_loss(band, y, 0.95, sharpness_k=1e4).item()
    assert soft == pytest.approx(hard, abs=1e-3)


def test_coverage_needs_targets():
    with pytest.raises(ContractError):
        coverage_loss(Interval(np.zeros(0), np.zeros(0), 0.9), np.zeros(0), hard=True)


def _nig_batch(rng, n=8):
    raw = rng.normal(size=(n, 4))
    return constrain_nig(raw), rng.normal(size=n)


def test_combined_reduces_to_nll(rng):
    p, y = _nig_batch(rng)
    w = CombinedLossWeights(lambda_evd=0.1, lambda_coverage=0.0, lambda_wd=0.0)
    total = combined_loss(p, y, w, evidence_scale=0.0).item()
    assert total == pytest.approx(float(np.mean(der_nll(p, y).data)), abs=1e-12)


def test_combined_weight_decay_only():
    p = NIGParams(0.0, 1.0, 2.0, 1.0)
    w = CombinedLossWeights(lambda_evd=0.0, lambda_coverage=0.0, lambda_wd=1.0)
    total = combined_loss(p, 0.0, w, params_for_wd=[as_tensor(np.array([3.0, 4.0]))]).item()
    assert total - der_nll(p, 0.0).item() == pytest.approx(25.0)


def test_evidence_scale_halves_regularizer(rng):
    p, y = _nig_batch(rng)
    w = CombinedLossWeights(lambda_evd=0.3, lambda_wd=0.0)
    base = combined_loss(p, y, w, evidence_scale=0.0).item()
    half = combined_loss(p, y, w, evidence_scale=0.5).item()
    full = combined_loss(p, y, w, evidence_scale=1.0).item()
    assert full - base == pytest.approx(2.0 * (half - base), rel=1e-10)


def test_evidence_scale_range(rng):
    p, y = _nig_batch(rng)
    with pytest.raises(ContractError):
        combined_loss(p, y, evidence_scale=1.5)


def test_baseline_examples():
    assert mse_loss(2.0, 0.0).item() == 4.0
    assert huber_loss(0.5, 0.0).item() == pytest.approx(0.125)
    assert huber_loss(2.0, 0.0).item() == pytest.approx(1.5)
    assert gaussian_nll(0.0, 1.0, 0.0).item() == pytest.approx(0.918939, abs=1e-6)
    assert pinball_loss(np.array([0.0]), 1.0, [0.9]).item() == pytest.approx(0.9)


def test_student_t_nll_matches_scipy():
    got = student_t_nll(0.3, 1.7, 4.5, np.array([-1.0, 0.0, 2.5])).data
    np.testing.assert_allclose(got, -stats.t.logpdf([-1.0, 0.0, 2.5], df=4.5, loc=0.3, scale=1.7), rtol=1e-12)


def test_single_component_mixture_is_gaussian(rng):
    mu, sigma, y = rng.normal(size=6), rng.uniform(0.2, 2, 6), rng.normal(size=6)
    mix = mixture_nll(np.zeros((6, 1)), mu[:, None], sigma[:, None], y).data
    gauss = gaussian_nll(mu, sigma ** 2, y).data
    assert np.max(np.abs(mix - gauss)) < 1e-12


def test_median_pinball_is_half_abs_error(rng):
    q, y = rng.normal(size=(10, 1)), rng.normal(size=10)
    np.testing.assert_allclose(pinball_loss(q, y, [0.5]).data, 0.5 * np.abs(y - q[:, 0]), rtol=1e-12)


def test_gaussian_nll_lower_bound(rng):
    var = rng.uniform(0.1, 3, 50)
    got = gaussian_nll(rng.normal(size=50), var, rng.normal(size=50)).data
    assert np.all(got >= 0.5 * np.log(2 * np.pi * var) - 1e-12)


def test_width_mismatch():
    with pytest.raises(ContractError):
        baseline_loss("gaussian_nll", np.zeros((3, 3)), np.zeros(3))


def test_loss_value_mean(rng):
    per = rng.normal(size=7)
    value = LossValue.from_per_sample(as_tensor(per))
    assert value.scalar == pytest.approx(per.mean(), abs=1e-12)


LOSS_METHODS = ["mse", "huber", "gaussian_nll", "student_t_nll", "quantile", "mixture", "evidential"]


@pytest.mark.parametrize("method", LOSS_METHODS)
def test_losses_through_lstm_pass_gradient_check(method, rng):
    spec = LstmSpec(hidden_dim=4, lookback=5, dropout_rate=0.0)
    head = HeadSpec(method, n_components=2)
    params = init_params(spec, head, seed=2)
    batch, y = rng.normal(size=(2, 5)), rng.normal(size=2)

    def loss(p):
        raw = head_forward(p, lstm_forward(p, batch, spec), head)
        if method == "evidential":
            weights = CombinedLossWeights(lambda_evd=0.1, lambda_coverage=0.5, lambda_wd=0.01)
            return combined_loss(constrain_nig(raw), y, weights, 0.7, [p["head.weight"]], sharpness_k=2.0)
        return mean(baseline_loss(method, raw, y, n_components=2))

    report = finite_diff_check(loss, params)
    assert report.max_rel_error < 1e-4 or report.within(rtol=1e-4, atol=1e-9)


def test_student_t_critical_value_and_gradient():
    crit = student_t_critical(np.array([2.0]), 0.95)
    assert crit.data[0] == pytest.approx(stats.t.ppf(0.975, 4.0), abs=1e-10)
    report = finite_diff_check(lambda p: sum_(student_t_critical(p["alpha"], 0.95)), {"alpha": np.array([1.5, 3.0])})
    assert report.max_rel_error < 1e-5

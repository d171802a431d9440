import numpy as np
import pytest

from src.cli import EXIT_OK, EXIT_PARTIAL, main
from src.components.data_ingestion import gen_synthetic
from src.components.model_trainer import TrainHistory
from src.exception import ContractError
from src.pipeline.synthetic_check import (
    DecompositionCheck, DecompositionCheckConfig, binned_correlation, cubic_datasets,
    run_decomposition_check,
)


def test_cubic_datasets_are_standardized_single_feature_windows():
    data = gen_synthetic("heteroscedastic_cubic", 500, 0)
    train_set, val_set, x_std, y_std = cubic_datasets(data, 0.2)
    assert (len(train_set), len(val_set)) == (400, 100)
    assert train_set.windows.shape == (400, 1)
    np.testing.assert_allclose(train_set.windows[:, 0] * x_std, data.x_train[:400])
    np.testing.assert_allclose(val_set.targets * y_std, data.y_train[400:])
    with pytest.raises(ContractError):
        cubic_datasets(data, 1.0)


def test_binned_correlation_uses_bin_means():
    x = np.linspace(-4.0, 4.0, 400)
    truth = (0.1 + 0.2 * np.abs(x)) ** 2
    assert binned_correlation(x, 5.0 * truth + 1.0, truth, 20, -4.0, 4.0) == pytest.approx(1.0)
    assert binned_correlation(x, -truth, truth, 20, -4.0, 4.0) == pytest.approx(-1.0)
    # points outside [lo, hi] are ignored
    wide = np.r_[x, [-6.0, 6.0]]
    noisy = np.r_[truth, [1e6, -1e6]]
    assert binned_correlation(wide, noisy, np.r_[truth, [0.0, 0.0]], 20, -4.0, 4.0) == pytest.approx(1.0)


def test_check_thresholds():
    history = TrainHistory(best_epoch=3)
    assert DecompositionCheck(0.9, 1.0, 2.5, history).passed
    assert not DecompositionCheck(0.7, 1.0, 2.5, history).passed
    assert not DecompositionCheck(0.9, 1.0, 1.5, history).passed
    assert DecompositionCheck(0.9, 1.0, 2.5, history).summary()["epistemic_ratio"] == pytest.approx(2.5)


def test_cli_check_exit_code_follows_result(monkeypatch):
    outcome = {"passed": True}

    def fake(cfg):
        corr = 0.95 if outcome["passed"] else 0.1
        return DecompositionCheck(corr, 1.0, 3.0, TrainHistory(best_epoch=0))

    monkeypatch.setattr("src.cli.run_decomposition_check", fake)
    assert main(["check"]) == EXIT_OK
    outcome["passed"] = False
    assert main(["check"]) == EXIT_PARTIAL


def test_short_fit_produces_finite_decomposition():
    cfg = DecompositionCheckConfig(n=200, hidden_dim=4, max_epochs=2, patience=2)
    check = run_decomposition_check(cfg)
    assert np.isfinite(check.in_range_epistemic) and np.isfinite(check.out_of_range_epistemic)
    assert check.history.epochs_run == 2


@pytest.mark.slow
def test_evidential_head_separates_aleatoric_and_epistemic():
    check = run_decomposition_check(DecompositionCheckConfig())
    assert check.aleatoric_corr > 0.8
    assert check.epistemic_ratio >= 2.0

"""Tests for loss ledgers, calibration, fidelity, timing, and Rabi decay."""

import numpy as np
import pytest
from scipy.stats import chisquare, poisson

from iongrating.detection import (DetectionConfig, LossLedger, RabiModel,
                                  adaptive_timing, bright_fidelity_analytic,
                                  dark_fidelity_mc, emission_loss_ledger,
                                  histogram_sim, improved_loss_ledger,
                                  load_ledger, measured_loss_ledger,
                                  rabi_thermal, ratio_method, save_histogram,
                                  save_ledger)


# ---------------------------------------------------------------------------
# Loss ledger

def test_empty_ledger():
    assert LossLedger().total() == (0.0, 0.0)


def test_measured_budget_total():
    db, sigma = measured_loss_ledger().total()
    assert db == pytest.approx(-47.68, abs=1e-9)
    assert sigma == pytest.approx(0.11, abs=0.005)


def test_emission_budget_total():
    db, sigma = emission_loss_ledger().total()
    assert db == pytest.approx(-47.9, abs=1e-9)
    assert sigma == pytest.approx(0.7, abs=1e-9)


def test_improved_budget_total():
    db, sigma = improved_loss_ledger().total()
    assert db == pytest.approx(-28.1, abs=1e-9)
    assert sigma == 0.0


def test_ledger_order_independent():
    a = LossLedger()
    a.add("x", -3.0, 0.3)
    a.add("y", -5.0, 0.4)
    b = LossLedger()
    b.add("y", -5.0, 0.4)
    b.add("x", -3.0, 0.3)
    assert a.total() == b.total()


def test_ledger_fraction():
    ledger = LossLedger()
    ledger.add("half", -3.0103)
    assert ledger.fraction() == pytest.approx(0.5, rel=1e-4)


def test_ledger_csv_round_trip(tmp_path):
    ledger = measured_loss_ledger()
    path = tmp_path / "ledger.csv"
    save_ledger(ledger, path)
    back = load_ledger(path)
    assert back.total() == ledger.total()
    assert [e.label for e in back.entries] == [e.label
                                               for e in ledger.entries]


def test_ledger_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("foo,bar\n")
    with pytest.raises(ValueError):
        load_ledger(path)


# ---------------------------------------------------------------------------
# Ratio method

def test_ratio_method_calibration():
    value, sigma = ratio_method(9.24e-3, 0.22e-3, 1.85e-3, 0.02e-3)
    assert value == pytest.approx(1.71e-5, rel=0.005)
    assert sigma == pytest.approx(0.04e-5, rel=0.15)


def test_ratio_method_identity_and_zero_sigma():
    value, sigma = ratio_method(9.24e-3, 0.0, 1.0, 0.0)
    assert value == 9.24e-3
    assert sigma == 0.0


def test_ratio_method_rejects_nonpositive():
    with pytest.raises(ValueError):
        ratio_method(0.0, 0.1, 0.5, 0.1)
    with pytest.raises(ValueError):
        ratio_method(0.5, 0.1, -1.0, 0.1)


# ---------------------------------------------------------------------------
# Detection config and fidelities

def test_config_validation():
    with pytest.raises(ValueError):
        DetectionConfig(bright_rate=-1.0)
    with pytest.raises(ValueError):
        DetectionConfig(window=0.0)
    with pytest.raises(ValueError):
        DetectionConfig(threshold=0)
    with pytest.raises(ValueError):
        DetectionConfig(bins=0)
    with pytest.raises(ValueError):
        DetectionConfig(shelving_failure=1.5)


def test_signal_to_background():
    assert DetectionConfig().signal_to_background == pytest.approx(36.7,
                                                                   abs=0.05)


def test_bright_fidelity_analytic():
    cfg = DetectionConfig()
    assert cfg.poisson_mean == pytest.approx(2.376)
    fid = bright_fidelity_analytic(cfg)
    assert fid == pytest.approx(1.0 - np.exp(-cfg.poisson_mean), rel=1e-12)
    assert fid == pytest.approx(0.907, abs=0.001)
    assert bright_fidelity_analytic(DetectionConfig(bright_rate=0.0)) == 0.0


def test_dark_fidelity_default():
    p, sigma = dark_fidelity_mc(DetectionConfig(), trials=10**6, seed=1)
    assert p == pytest.approx(0.925, abs=0.010)
    assert sigma < 1e-3


def test_dark_fidelity_perfect_limit():
    cfg = DetectionConfig(dark_rate=0.0, d_lifetime=1e9,
                          shelving_failure=0.0)
    p, _ = dark_fidelity_mc(cfg, trials=10**4, seed=2)
    assert p == 1.0


def test_dark_decay_probability_analytic():
    cfg = DetectionConfig()
    assert 1.0 - np.exp(-cfg.window / cfg.d_lifetime) == pytest.approx(
        0.0203, abs=2e-4)


def test_dark_fidelity_monotone():
    base = DetectionConfig()
    p0, _ = dark_fidelity_mc(base, trials=2 * 10**5, seed=3)
    p1, _ = dark_fidelity_mc(DetectionConfig(dark_rate=40.0),
                             trials=2 * 10**5, seed=3)
    p2, _ = dark_fidelity_mc(DetectionConfig(window=0.03),
                             trials=2 * 10**5, seed=3)
    assert p1 < p0 and p2 < p0


def test_dark_fidelity_trial_floor():
    with pytest.raises(ValueError):
        dark_fidelity_mc(DetectionConfig(), trials=100)


# ---------------------------------------------------------------------------
# Histograms

def test_bright_histogram_poissonian():
    cfg = DetectionConfig()
    hist = histogram_sim(cfg, "bright", trials=10**5, seed=3)
    assert hist.argmax() == 2  # Poisson(2.376) mode
    n = hist.sum()
    k = np.arange(len(hist))
    expected = poisson.pmf(k, cfg.poisson_mean)
    expected[-1] += poisson.sf(len(hist) - 1, cfg.poisson_mean)
    expected *= n
    keep = expected >= 5
    obs = hist[keep].astype(float)
    exp = expected[keep] * obs.sum() / expected[keep].sum()
    assert chisquare(obs, exp).pvalue > 0.01


def test_bright_histogram_matches_analytic_tail():
    cfg = DetectionConfig()
    trials = 10**5
    hist = histogram_sim(cfg, "bright", trials=trials, seed=5)
    tail = hist[cfg.threshold:].sum() / trials
    fid = bright_fidelity_analytic(cfg)
    sigma = np.sqrt(fid * (1 - fid) / trials)
    assert abs(tail - fid) < 3 * sigma


def test_bright_histogram_zero_rate():
    hist = histogram_sim(DetectionConfig(bright_rate=0.0), "bright",
                         trials=1000, seed=6)
    assert hist.tolist() == [1000]


def test_dark_histogram_tail():
    cfg = DetectionConfig()
    hist = histogram_sim(cfg, "dark", trials=10**5, seed=4)
    tail = hist[cfg.threshold:].sum() / hist.sum()
    assert tail == pytest.approx(0.075, abs=0.01)


def test_histogram_bad_state():
    with pytest.raises(ValueError):
        histogram_sim(DetectionConfig(), "purple", trials=10, seed=0)


def test_histogram_csv(tmp_path):
    hist = histogram_sim(DetectionConfig(), "bright", trials=1000, seed=7)
    path = tmp_path / "hist.csv"
    save_histogram(hist, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "count,frequency"
    assert len(lines) == len(hist) + 1


# ---------------------------------------------------------------------------
# Adaptive timing

def test_adaptive_timing_defaults():
    bright, mixed = adaptive_timing(DetectionConfig(), trials=10**6, seed=2)
    assert bright == pytest.approx(2.66e-3, abs=0.15e-3)
    assert mixed == pytest.approx(5.33e-3, abs=0.1e-3)
    assert mixed == pytest.approx((bright + 0.008) / 2, rel=1e-12)


def test_adaptive_timing_full_window_convention():
    censored, _ = adaptive_timing(DetectionConfig(), trials=10**5, seed=2)
    full, _ = adaptive_timing(DetectionConfig(), trials=10**5, seed=2,
                              convention="full-window")
    assert full > censored
    with pytest.raises(ValueError):
        adaptive_timing(DetectionConfig(), trials=10**4, seed=0,
                        convention="typo")


def test_adaptive_timing_fast_limit():
    cfg = DetectionConfig(bright_rate=1e9)
    bright, _ = adaptive_timing(cfg, trials=10**4, seed=3)
    assert bright == pytest.approx(0.8e-3, rel=1e-9)


def test_adaptive_timing_needs_bins():
    with pytest.raises(ValueError):
        adaptive_timing(DetectionConfig(bins=1), trials=10**4, seed=0)


def test_adaptive_timing_deterministic():
    a = adaptive_timing(DetectionConfig(), trials=10**5, seed=9)
    b = adaptive_timing(DetectionConfig(), trials=10**5, seed=9)
    assert a == b


# ---------------------------------------------------------------------------
# Thermal Rabi model

def test_rabi_ground_state_undamped():
    model = RabiModel(omega0=2 * np.pi * 50e3)
    period = 2 * np.pi / model.omega0
    t = np.array([0.0, period / 2, period, 10 * period])
    p = rabi_thermal(t, model)
    assert p[0] == pytest.approx(1.0)
    assert p[1] == pytest.approx(0.0, abs=1e-12)  # half a Rabi period
    assert p[2] == pytest.approx(1.0)
    assert np.allclose(rabi_thermal(t + 500 * period, model), p, atol=1e-9)


def test_rabi_starts_at_one_and_bounded():
    model = RabiModel(omega0=2 * np.pi * 50e3, eta_ld=0.1, n_bar=19)
    assert rabi_thermal(0.0, model) == pytest.approx(1.0)
    t = np.linspace(0.0, 500e-6, 4001)
    p = rabi_thermal(t, model)
    assert np.all((p >= 0.0) & (p <= 1.0))


def test_rabi_thermal_decay_vs_cold():
    omega0 = 2 * np.pi * 50e3
    t = np.linspace(0.0, 300e-6, 3001)
    hot = rabi_thermal(t, RabiModel(omega0=omega0, eta_ld=0.1, n_bar=19))
    cold = rabi_thermal(t, RabiModel(omega0=omega0))
    late = t > 150e-6
    assert hot[late].max() - hot[late].min() < 0.5
    assert cold[late].max() - cold[late].min() > 0.99


def test_rabi_cutoff_guard():
    with pytest.raises(ValueError):
        rabi_thermal(0.0, RabiModel(omega0=1.0, n_bar=19, n_cutoff=5))
    with pytest.raises(ValueError):
        rabi_thermal(-1.0, RabiModel(omega0=1.0))


def test_rabi_model_validation():
    with pytest.raises(ValueError):
        RabiModel(omega0=1.0, eta_ld=-0.1)
    with pytest.raises(ValueError):
        RabiModel(omega0=1.0, n_bar=-1.0)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from etpasim import analysis as an
from etpasim.detection import Condition, DetectorSpec, MeasurementRecord, run_protocol, select
from etpasim.interferometer import FOUR_LN2
from etpasim.sample import AVOGADRO, BeamGeometry, SampleSpec, etpa_fluorescence_rate, molecule_count


def recs(cond, counts, exposure=300.0):
    return [MeasurementRecord(Condition(cond), int(c), exposure, i) for i, c in enumerate(counts)]


# net counts ------------------------------------------------------------------

def test_net_counts_zero_variance():
    n = an.net_counts(recs("PM", [1500] * 10), recs("E", [500] * 10))
    assert (n.value, n.sigma) == (1000.0, 0.0)


def test_net_counts_null_signal():
    pm = recs("PM", [480, 520, 505, 495])
    e = recs("E", [480, 520, 505, 495])
    n = an.net_counts(pm, e)
    se = np.std([480, 520, 505, 495], ddof=1) / 2
    assert n.value == 0.0
    assert n.sigma == pytest.approx(math.sqrt(2) * se)


def test_net_counts_rejects_mismatched_exposure():
    with pytest.raises(ValueError):
        an.net_counts(recs("PM", [1, 2], 300.0), recs("E", [1, 2], 100.0))
    with pytest.raises(ValueError):
        an.net_counts([], recs("E", [1]))


def test_net_counts_coverage():
    det = DetectorSpec(k_cal=1.0, ethanol_bg_rate=500 / 300, dark_rate=0.0, repeats=10)
    hits = 0
    for t in range(1000):
        r = run_protocol({"PM": 1000 / 300, "E": 0.0}, det, master_seed=t)
        n = an.net_counts(select(r, "PM"), select(r, "E"))
        hits += abs(n.value - 1000.0) <= 3 * n.sigma
    assert hits >= 990


# counts -> rate ----------------------------------------------------------------

def test_rate_from_counts_examples():
    k = an.Estimate(4.5, 0.0)
    assert an.fluorescence_rate_from_counts(an.Estimate(1000, 0), 300.0, k).value == pytest.approx(15.0)
    assert an.fluorescence_rate_from_counts(an.Estimate(0, 0), 300.0, k).value == 0.0
    r = an.fluorescence_rate_from_counts(an.Estimate(1000, 0), 300.0, an.Estimate(4.5, 0.9))
    assert r.value == pytest.approx(15.0)
    assert r.sigma == pytest.approx(3.0)
    assert r.relative == pytest.approx(0.20)


def test_rate_from_counts_quadrature():
    r = an.fluorescence_rate_from_counts(an.Estimate(1000, 30), 300.0, an.Estimate(4.5, 0.9))
    assert r.relative == pytest.approx(math.hypot(0.03, 0.2))


# calibration -------------------------------------------------------------------

def test_calibrate_k_fixture():
    known = 9.45e7
    net = 6.3e9  # = known * 300 / 4.5
    k = an.calibrate_k(recs("PM", [net + 500] * 10), recs("E", [500] * 10), known)
    assert k.value == pytest.approx(4.5, rel=1e-12)
    assert k.sigma == 0.0


def test_calibrate_k_identity_and_zero():
    k = an.calibrate_k(recs("PM", [300 * 7 + 40] * 3), recs("E", [40] * 3), 7.0)
    assert k.value == pytest.approx(1.0)
    with pytest.raises(ValueError):
        an.calibrate_k(recs("PM", [40] * 3), recs("E", [40] * 3), 7.0)


@pytest.mark.parametrize("K", [4.5, 2.0])
def test_calibrate_k_roundtrip(K):
    det = DetectorSpec(k_cal=K, ethanol_bg_rate=2000.0, dark_rate=400.0)
    known = 0.95e8
    r = run_protocol({"PM": known, "E": 0.0}, det, master_seed=11)
    k = an.calibrate_k(select(r, "PM"), select(r, "E"), known)
    assert abs(k.value - K) < 3 * k.sigma


# linear flux fit -----------------------------------------------------------------

def test_fit_exact_line():
    x = np.linspace(1, 10, 6)
    fit = an.fit_linear_flux((x, 2 * x, np.ones_like(x)))
    assert fit.params["slope"] == pytest.approx(2.0, rel=1e-14)
    assert fit.chi2 == pytest.approx(0.0, abs=1e-20)
    # slope sigma is the noise-free formula 1/sqrt(sum x^2/s^2)
    assert fit.sigmas["slope"] == pytest.approx(1 / math.sqrt(np.sum(x**2)))


def test_fit_matches_closed_form_normal_equations():
    rng = np.random.default_rng(3)
    x = np.linspace(1e11, 1e12, 8)
    s = rng.uniform(1, 3, x.size)
    y = 3e-9 * x + 5 + rng.normal(0, 1, x.size) * s
    fit = an.fit_linear_flux((x, y, s), include_intercept=True)
    # independent oracle: numpy polyfit with weights 1/sigma, covariance unscaled
    coef, cov = np.polyfit(x, y, 1, w=1 / s, cov="unscaled")
    assert fit.params["slope"] == pytest.approx(coef[0], rel=1e-8)
    assert fit.params["intercept"] == pytest.approx(coef[1], rel=1e-6)
    assert fit.sigmas["slope"] == pytest.approx(math.sqrt(cov[0, 0]), rel=1e-6)
    assert np.allclose(np.linalg.eigvalsh(fit.covariance) >= -1e-30, True)


def test_fit_forward_model_slope():
    spec = SampleSpec(concentration=4.5e-3, sigma_e=9.9e-22)
    area = BeamGeometry().area
    phi = np.linspace(2e7, 1.2e8, 6) / area
    rate = etpa_fluorescence_rate(phi, spec)
    fit = an.fit_linear_flux((phi, rate, np.sqrt(rate)))
    expected = 0.95 * 4.5e-3 * 5.6e-9 * AVOGADRO * 9.9e-22
    assert fit.params["slope"] == pytest.approx(expected, rel=1e-6)


def test_fit_intercept_zero_on_linear_data():
    phi = np.linspace(1.7e11, 1.06e12, 6)
    rate = 1.4e-8 * phi
    fit = an.fit_linear_flux((phi, rate, np.sqrt(rate)), include_intercept=True)
    assert abs(fit.params["intercept"]) < 1e-9 * rate.max()


def test_fit_quadratic_data_flags_mismatch():
    x = np.linspace(1, 10, 8)
    y = x**2
    fit = an.fit_linear_flux((x, y, 0.1 * np.ones_like(x)))
    assert fit.chi2_reduced > 10
    quad = an.fit_linear_flux((x, y, 0.1 * np.ones_like(x)), include_quadratic=True)
    assert quad.params["quadratic"] == pytest.approx(1.0, rel=1e-10)
    assert quad.chi2_reduced < 1e-10


def test_fit_errors():
    with pytest.raises(ValueError):
        an.fit_linear_flux(([1.0], [1.0], [1.0]))
    with pytest.raises(ValueError):
        an.fit_linear_flux(([1.0, 2.0], [1.0, 2.0], [1.0, 0.0]))
    with pytest.raises(ValueError):
        an.fit_linear_flux(([1.0, 2.0], [1.0, 2.0], [1.0, 1.0]), include_quadratic=True)
    with pytest.raises(ValueError, match="singular"):
        an.fit_linear_flux(([2.0, 2.0, 2.0], [1.0, 2.0, 3.0], [1.0, 1.0, 1.0]), include_intercept=True)


def test_fit_accepts_rate_points():
    pts = [an.RatePoint(x, 3 * x, 1.0) for x in (1.0, 2.0, 3.0)]
    assert an.fit_linear_flux(pts).params["slope"] == pytest.approx(3.0)


def test_low_flux_deficit_flag():
    x = np.linspace(1, 9, 9)
    y = 2 * x
    y[:3] -= np.array([3.0, 2.5, 2.0])
    fit = an.fit_linear_flux((x, y, 0.3 * np.ones_like(x)))
    assert an.low_flux_deficit(fit)
    clean = an.fit_linear_flux((x, 2 * x, np.ones_like(x)))
    assert not an.low_flux_deficit(clean)


# cross-section extraction -------------------------------------------------------

def slope_for(spec, sigma_e):
    return spec.quantum_yield * spec.concentration * spec.active_volume * AVOGADRO * sigma_e


@pytest.mark.parametrize("c,sig", [(4.5e-3, 9.9e-22), (38e-6, 1.9e-21)])
def test_extract_sigma_e_table_rows(c, sig):
    spec = SampleSpec(concentration=c, sigma_e=sig)
    cs = an.extract_sigma_e(an.Estimate(slope_for(spec, sig), 0.0), spec)
    assert cs.value == pytest.approx(sig, rel=1e-12)
    assert not cs.product_mode


def test_extract_product_mode():
    spec = SampleSpec(concentration=0.110, sigma_e=6.4e-23 / 0.95, yield_known=False)
    slope = molecule_count(spec) * 6.4e-23
    cs = an.extract_sigma_e(an.Estimate(slope, 0.0), spec)
    assert cs.product_mode
    assert cs.value == pytest.approx(6.4e-23, rel=1e-12)


@given(st.floats(1e-30, 1e-10))
def test_extract_scale_free_roundtrip(sig):
    spec = SampleSpec(concentration=4.5e-3, sigma_e=sig)
    cs = an.extract_sigma_e(an.Estimate(slope_for(spec, sig), 0.0), spec)
    assert cs.value == pytest.approx(sig, rel=1e-12)


def test_extract_error_includes_k_cal():
    spec = SampleSpec(concentration=4.5e-3, sigma_e=1e-21)
    s = slope_for(spec, 1e-21)
    cs = an.extract_sigma_e(an.Estimate(s, 0.05 * s), spec, k_cal_relative=0.2)
    assert cs.sigma / cs.value == pytest.approx(math.hypot(0.05, 0.2))
    assert cs.sigma / cs.value >= 0.2


# gaussian delay fit --------------------------------------------------------------

DELAYS = np.arange(-400.0, 400.0 + 1, 20.0)


def gauss(t, b, a, c, w):
    return b + a * np.exp(-FOUR_LN2 * (t - c) ** 2 / w**2)


def test_gaussian_noiseless_recovery():
    y = gauss(DELAYS, 0.0, 1.0, 0.0, 140.0)
    fit = an.fit_gaussian_delay(DELAYS, y, np.full_like(y, 0.01))
    assert fit.converged
    assert abs(fit.params["fwhm"] - 140.0) < 0.1
    assert fit.params["amplitude"] == pytest.approx(1.0, abs=1e-9)
    assert abs(fit.params["baseline"]) < 1e-9


def test_gaussian_offset_and_baseline():
    y = gauss(DELAYS, 300.0, 900.0, 35.0, 150.0)
    fit = an.fit_gaussian_delay(DELAYS, y, np.sqrt(y))
    assert fit.converged
    for k, v in dict(baseline=300.0, amplitude=900.0, center=35.0, fwhm=150.0).items():
        assert fit.params[k] == pytest.approx(v, rel=1e-7, abs=1e-6)


def test_gaussian_constant_data():
    y = np.full(DELAYS.size, 5.0)
    fit = an.fit_gaussian_delay(DELAYS, y, np.full_like(y, 0.1))
    assert (not fit.converged) or abs(fit.params["amplitude"]) < fit.sigmas["amplitude"]


def test_gaussian_reflection_symmetry():
    rng = np.random.default_rng(4)
    y = gauss(DELAYS, 200.0, 1000.0, 0.0, 140.0)
    y = y + rng.normal(0, 10, y.size)
    err = np.full_like(y, 10.0)
    a = an.fit_gaussian_delay(DELAYS, y, err)
    b = an.fit_gaussian_delay(-DELAYS, y, err)
    assert b.params["fwhm"] == pytest.approx(a.params["fwhm"], rel=1e-9)


def test_gaussian_requires_points():
    with pytest.raises(ValueError):
        an.fit_gaussian_delay([0, 1, 2, 3], [1, 2, 1, 0], [1, 1, 1, 1])


def test_gaussian_matches_scipy_curve_fit():
    from scipy.optimize import curve_fit

    rng = np.random.default_rng(12)
    y = gauss(DELAYS, 50.0, 400.0, -10.0, 130.0)
    err = np.sqrt(y)
    y = y + rng.normal(0, 1, y.size) * err
    fit = an.fit_gaussian_delay(DELAYS, y, err)
    p, cov = curve_fit(gauss, DELAYS, y, p0=[40, 380, 0, 120], sigma=err, absolute_sigma=True)
    assert fit.params["fwhm"] == pytest.approx(p[3], rel=1e-6)
    assert fit.sigmas["fwhm"] == pytest.approx(math.sqrt(cov[3, 3]), rel=1e-3)


# polarization flatness -------------------------------------------------------------

def test_flatness_equal_rates():
    f = an.polarization_flatness([0, 10, 20], [5.0, 5.0, 5.0], [0.1, 0.1, 0.1])
    assert f.max_deviation == 0.0
    assert f.chi2_reduced == 0.0


def test_flatness_detects_variation():
    from etpasim.interferometer import polarization_factor

    angles = np.arange(0, 91, 7.5)
    rates = 8.8e3 * polarization_factor(angles, 0.1)
    f = an.polarization_flatness(angles, rates, np.full(angles.size, 5.0))
    mean = rates.mean()
    assert f.max_deviation == pytest.approx(np.max(np.abs(rates - mean)) / mean)
    # peak-to-peak variation equals epsilon
    assert rates.min() / rates.max() == pytest.approx(0.9)
    assert f.max_deviation > 0.01
    assert f.chi2_reduced > 100


# leak check --------------------------------------------------------------------------

def test_leak_check_identical_distributions():
    det = DetectorSpec(k_cal=4.5, repeats=10)
    passes = 0
    for t in range(1000):
        r = run_protocol({"NPM": 0.0, "E": 0.0}, det, master_seed=t)
        passes += an.leak_check(select(r, "NPM"), select(r, "E")).passed
    assert passes > 990


def test_leak_check_separated():
    e = [1000, 1010, 990, 1005, 995]
    se = np.std(e, ddof=1) / math.sqrt(5)
    shift = 10 * math.sqrt(2) * se
    npm = [c + shift for c in e]
    lc = an.leak_check(recs("NPM", npm), recs("E", e))
    assert not lc.passed
    assert lc.z == pytest.approx(10.0, rel=0.05)


def test_leak_check_all_zero():
    lc = an.leak_check(recs("NPM", [0] * 5), recs("E", [0] * 5))
    assert lc.passed and lc.z == 0.0

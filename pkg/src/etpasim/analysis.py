"""Inverse pipeline: background subtraction, counts to fluorescence rate,
calibration constant, weighted flux fits, cross-section extraction, delay
Gaussian fit, polarization flatness and the pump leak test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .detection import MeasurementRecord
from .interferometer import FOUR_LN2
from .sample import SampleSpec, molecule_count

GRADIENT_TOL = 1e-8
MAX_ITERATIONS = 500
LEAK_Z_THRESHOLD = 3.0


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float

    @property
    def relative(self) -> float:
        return math.inf if self.value == 0 else abs(self.sigma / self.value)


@dataclass(frozen=True)
class RatePoint:
    flux_density: float
    rate: float
    rate_uncertainty: float


@dataclass
class FitResult:
    params: dict
    sigmas: dict
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    y_err: np.ndarray = field(repr=False)
    y_fit: np.ndarray = field(repr=False)
    iterations: int = 0

    @property
    def chi2_reduced(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    @property
    def residuals(self) -> np.ndarray:
        return self.y - self.y_fit

    @property
    def normalized_residuals(self) -> np.ndarray:
        return self.residuals / self.y_err

    def estimate(self, name: str) -> Estimate:
        return Estimate(self.params[name], self.sigmas[name])


@dataclass(frozen=True)
class CrossSection:
    value: float
    sigma: float
    product_mode: bool  # True: value is Y * sigma_e because Y is unknown


@dataclass(frozen=True)
class Flatness:
    max_deviation: float
    chi2_reduced: float
    mean: float


@dataclass(frozen=True)
class LeakCheck:
    passed: bool
    z: float


def _mean_se(records: Sequence[MeasurementRecord]) -> tuple[float, float]:
    counts = np.array([r.counts for r in records], dtype=float)
    if counts.size == 1:
        return float(counts[0]), math.sqrt(max(counts[0], 0.0))
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(counts.size))


def _exposure(records: Sequence[MeasurementRecord]) -> float:
    exposures = {float(r.exposure) for r in records}
    if len(exposures) != 1:
        raise ValueError(f"records have mixed exposures: {sorted(exposures)}")
    return exposures.pop()


def net_counts(pm: Sequence[MeasurementRecord], e: Sequence[MeasurementRecord]) -> Estimate:
    """Mean(PM) - mean(E); standard errors added in quadrature."""
    if not pm or not e:
        raise ValueError("both record lists must be non-empty")
    if _exposure(pm) != _exposure(e):
        raise ValueError("PM and E exposures differ")
    m1, s1 = _mean_se(pm)
    m2, s2 = _mean_se(e)
    return Estimate(m1 - m2, math.hypot(s1, s2))


def fluorescence_rate_from_counts(net: Estimate, exposure: float, k_cal: Estimate) -> Estimate:
    """Counts per exposure to fluorescence rate, R = net / t * k_cal."""
    if not exposure > 0:
        raise ValueError(f"exposure must be > 0, got {exposure}")
    value = net.value / exposure * k_cal.value
    sigma = math.hypot(k_cal.value * net.sigma, net.value * k_cal.sigma) / exposure
    return Estimate(value, sigma)


def calibrate_k(spa_pm: Sequence[MeasurementRecord], background: Sequence[MeasurementRecord],
                known_spa_rate: float) -> Estimate:
    """Calibration constant from a run with a known fluorescence rate.

    ``known_spa_rate`` is the fluorescence rate predicted for the attenuated
    532 nm beam; ``background`` are matching no-sample exposures.
    """
    if not known_spa_rate > 0:
        raise ValueError("known SPA fluorescence rate must be > 0")
    net = net_counts(spa_pm, background)
    if net.value == 0:
        raise ValueError("zero net counts; calibration constant is undefined")
    k = known_spa_rate * _exposure(spa_pm) / net.value
    return Estimate(k, abs(k) * net.sigma / abs(net.value))


def with_systematic(k: Estimate, relative: float) -> Estimate:
    """Add a fractional systematic (e.g. 0.9 / 4.5) in quadrature."""
    return Estimate(k.value, abs(k.value) * math.hypot(k.relative, relative))


def _as_arrays(points):
    if isinstance(points, tuple) and len(points) == 3:
        return tuple(np.asarray(a, dtype=float) for a in points)
    x = np.array([p.flux_density for p in points], dtype=float)
    y = np.array([p.rate for p in points], dtype=float)
    s = np.array([p.rate_uncertainty for p in points], dtype=float)
    return x, y, s


def fit_linear_flux(points, include_intercept: bool = False,
                    include_quadratic: bool = False) -> FitResult:
    """Weighted least squares of rate = a1*phi (+ a0) (+ a2*phi^2).

    ``points`` is a sequence of :class:`RatePoint` or a tuple
    ``(phi, rate, sigma)`` of arrays. Parameters are named ``slope``,
    ``intercept`` and ``quadratic``.
    """
    x, y, s = _as_arrays(points)
    names = (["intercept"] if include_intercept else []) + ["slope"] + (
        ["quadratic"] if include_quadratic else [])
    need = 3 if include_quadratic else 2
    if x.size < max(need, len(names)):
        raise ValueError(f"need at least {max(need, len(names))} points, got {x.size}")
    if np.any(~(s > 0)):
        raise ValueError("rate uncertainties must be > 0")

    # Scale phi to O(1) so the normal matrix stays well conditioned.
    scale = float(np.max(np.abs(x))) or 1.0
    u = x / scale
    powers = {"intercept": 0, "slope": 1, "quadratic": 2}
    design = np.column_stack([u ** powers[n] for n in names])
    w = 1.0 / s**2
    normal = design.T @ (design * w[:, None])
    rhs = design.T @ (w * y)
    if np.linalg.cond(normal) > 1e14:
        raise ValueError("singular design matrix")
    cov_scaled = np.linalg.inv(normal)
    coef_scaled = np.linalg.solve(normal, rhs)

    unscale = np.array([scale ** -powers[n] for n in names])
    coef = coef_scaled * unscale
    cov = cov_scaled * np.outer(unscale, unscale)
    cov = 0.5 * (cov + cov.T)
    y_fit = design @ coef_scaled
    chi2 = float(np.sum(w * (y - y_fit) ** 2))
    return FitResult(
        params={n: float(c) for n, c in zip(names, coef)},
        sigmas={n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)},
        covariance=cov, chi2=chi2, dof=x.size - len(names), converged=True,
        x=x, y=y, y_err=s, y_fit=y_fit,
    )


def low_flux_deficit(fit: FitResult, fraction: float = 1 / 3, threshold: float = -1.0) -> bool:
    """Flag systematic negative residuals among the lowest-flux points."""
    order = np.argsort(fit.x)
    n = max(1, int(round(fraction * fit.x.size)))
    r = fit.normalized_residuals[order[:n]]
    return bool(np.all(r < 0) and r.mean() < threshold)


def extract_sigma_e(slope: Estimate, spec: SampleSpec, k_cal_relative: float = 0.0) -> CrossSection:
    """ETPA cross-section from the fluorescence-vs-flux slope.

    When the sample's quantum yield is unknown the product Y * sigma_e is
    returned instead. ``k_cal_relative`` is the calibration constant's
    relative uncertainty, added in quadrature to the slope's.
    """
    product_mode = not spec.yield_known
    denom = molecule_count(spec) * (1.0 if product_mode else spec.quantum_yield)
    value = slope.value / denom
    rel = math.hypot(slope.sigma / slope.value if slope.value else 0.0, k_cal_relative)
    return CrossSection(value, abs(value) * rel, product_mode)


def gaussian_profile(tau, baseline, amplitude, center, fwhm):
    d = np.asarray(tau, dtype=float) - center
    return baseline + amplitude * np.exp(-FOUR_LN2 * d * d / (fwhm * fwhm))


def _gaussian_jacobian(tau, baseline, amplitude, center, fwhm):
    d = tau - center
    g = np.exp(-FOUR_LN2 * d * d / (fwhm * fwhm))
    return np.column_stack([
        np.ones_like(tau),
        g,
        amplitude * g * 2.0 * FOUR_LN2 * d / fwhm**2,
        amplitude * g * 2.0 * FOUR_LN2 * d * d / fwhm**3,
    ])


def _initial_guess(tau: np.ndarray, y: np.ndarray) -> np.ndarray:
    base, top = float(y.min()), float(y.max())
    amp = top - base
    span = float(tau[-1] - tau[0])
    center = float(tau[y == top].mean())
    if amp <= 0:
        return np.array([base, 0.0, center, span / 4.0])
    half = base + 0.5 * amp
    peak = int(np.flatnonzero(y == top)[0])
    peak_last = int(np.flatnonzero(y == top)[-1])

    left = tau[0]
    for i in range(peak, 0, -1):
        if y[i - 1] < half:
            left = tau[i - 1] + (half - y[i - 1]) * (tau[i] - tau[i - 1]) / (y[i] - y[i - 1])
            break
    right = tau[-1]
    for i in range(peak_last, tau.size - 1):
        if y[i + 1] < half:
            right = tau[i] + (y[i] - half) * (tau[i + 1] - tau[i]) / (y[i] - y[i + 1])
            break
    width = right - left
    return np.array([base, amp, center, width if width > 0 else span / 4.0])


def fit_gaussian_delay(delay, rate, rate_err) -> FitResult:
    """Fit ``B + A * exp(-4 ln2 (tau - tau0)^2 / fwhm^2)`` to a delay scan.

    Returns parameters ``baseline``, ``amplitude``, ``center``, ``fwhm``.
    ``converged`` requires the scaled gradient (cosine between residual and
    every Jacobian column) below 1e-8, at most 500 iterations and an
    identifiable (full-rank) Jacobian.
    """
    tau = np.asarray(delay, dtype=float)
    y = np.asarray(rate, dtype=float)
    s = np.asarray(rate_err, dtype=float)
    if tau.size < 5:
        raise ValueError(f"need at least 5 points, got {tau.size}")
    if np.any(~(s > 0)):
        raise ValueError("rate uncertainties must be > 0")
    order = np.argsort(tau, kind="stable")
    tau, y, s = tau[order], y[order], s[order]

    p0 = _initial_guess(tau, y)

    def resid(p):
        return (gaussian_profile(tau, *p) - y) / s

    def jac(p):
        return _gaussian_jacobian(tau, *p) / s[:, None]

    sol = least_squares(resid, p0, jac=jac, method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-12, max_nfev=MAX_ITERATIONS)
    p = sol.x.copy()
    p[3] = abs(p[3])
    r = resid(p)
    J = jac(p)
    col_norm = np.linalg.norm(J, axis=0)
    r_norm = float(np.linalg.norm(r))
    if r_norm <= 1e-12 * float(np.linalg.norm(y / s)):
        grad_rel = 0.0  # exact fit: residual is pure rounding
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            grad_rel = float(np.nanmax(np.abs(J.T @ r) / (col_norm * r_norm)))

    jtj = J.T @ J
    rank_ok = np.linalg.matrix_rank(J, tol=1e-10 * np.max(col_norm)) == 4
    cov = np.linalg.pinv(jtj)
    cov = 0.5 * (cov + cov.T)
    converged = bool(rank_ok and grad_rel < GRADIENT_TOL and sol.nfev <= MAX_ITERATIONS)
    names = ("baseline", "amplitude", "center", "fwhm")
    return FitResult(
        params={n: float(v) for n, v in zip(names, p)},
        sigmas={n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)},
        covariance=cov, chi2=float(r @ r), dof=tau.size - 4, converged=converged,
        x=tau, y=y, y_err=s, y_fit=gaussian_profile(tau, *p), iterations=int(sol.nfev),
    )


def polarization_flatness(angle, rate, rate_err=None) -> Flatness:
    """Largest relative deviation from the mean, and reduced chi-square of a
    constant model (nan without uncertainties)."""
    y = np.asarray(rate, dtype=float)
    if y.size < 2:
        raise ValueError("need at least 2 points")
    mean = float(y.mean())
    dev = float(np.max(np.abs(y - mean)) / mean) if mean != 0 else math.inf
    chi2_red = math.nan
    if rate_err is not None:
        w = 1.0 / np.asarray(rate_err, dtype=float) ** 2
        wmean = float(np.sum(w * y) / np.sum(w))
        chi2_red = float(np.sum(w * (y - wmean) ** 2) / (y.size - 1))
    return Flatness(dev, chi2_red, mean)


def leak_check(npm: Sequence[MeasurementRecord], e: Sequence[MeasurementRecord],
               threshold: float = LEAK_Z_THRESHOLD) -> LeakCheck:
    """Two-sample z-test that detuned-crystal counts match the ethanol baseline."""
    if not npm or not e:
        raise ValueError("both record lists must be non-empty")
    m1, s1 = _mean_se(npm)
    m2, s2 = _mean_se(e)
    se = math.hypot(s1, s2)
    if se == 0:
        z = 0.0 if m1 == m2 else math.copysign(math.inf, m1 - m2)
    else:
        z = (m1 - m2) / se
    return LeakCheck(abs(z) < threshold, z)

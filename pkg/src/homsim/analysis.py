"""Weighted least-squares estimators for dip scans, correlograms, decays and spectra.

All fitters share the damped Gauss-Newton engine in :mod:`homsim.fitting`
and report uncertainties from the inverse curvature of chi^2 at the optimum.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .fitting import FREE, NONNEGATIVE, POSITIVE, UNIT, covariance, levenberg_marquardt, projected_gradient
from .hom import HomCurveParams, hom_curve
from .stream import CorrelogramPeaks

SPEED_OF_LIGHT = 299_792_458.0  # m/s
DIP_DELAYS = (-200.0, -150.0, -100.0, -75.0, -50.0, -25.0, 0.0, 25.0, 50.0, 75.0, 100.0, 150.0, 200.0)

# A fit counts as converged when moving any parameter by one sigma would
# change chi^2 by less than this (projected onto the feasible box).
_GRAD_TOL = 1e-4


class FitInputError(ValueError):
    """Data does not satisfy a fitter's preconditions."""


@dataclass
class FitResult:
    params: dict[str, float]
    sigmas: dict[str, float]
    chi2: float
    n_dof: int
    converged: bool
    flags: list[str] = field(default_factory=list)
    grad_norm: float = 0.0  # max |d chi2 / d p| * sigma_p on the feasible box
    n_iter: int = 0

    def to_json(self) -> str:
        def clean(x):
            x = float(x)
            return x if math.isfinite(x) else None

        doc = {
            "params": {k: clean(v) for k, v in self.params.items()},
            "sigmas": {k: clean(v) for k, v in self.sigmas.items()},
            "chi2": clean(self.chi2),
            "n_dof": int(self.n_dof),
            "converged": bool(self.converged),
            "flags": list(self.flags),
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _finish(names, lm, n_points, sigma_scale=1.0, flags=None) -> FitResult:
    cov = covariance(lm.jac, sigma_scale)
    sig = np.sqrt(np.where(np.diag(cov) >= 0, np.diag(cov), np.inf))
    grad_vec = projected_gradient(2.0 * lm.jac.T @ lm.residuals, lm.x, lm.transforms)
    step = np.where(np.isfinite(sig), sig, 1.0)
    grad = float(np.max(np.abs(grad_vec) * step))
    converged = lm.converged and grad <= _GRAD_TOL
    flags = list(flags or [])
    for n, v, t in zip(names, lm.x, lm.transforms):
        if v <= t.lower + 1e-9 or v >= t.upper - 1e-9:
            flags.append(f"{n} at bound")
    if not converged:
        flags.append(f"not converged: {lm.message}")
    return FitResult(
        params={n: float(v) for n, v in zip(names, lm.x)},
        sigmas={n: float(s) for n, s in zip(names, sig)},
        chi2=float(lm.chi2),
        n_dof=n_points - len(names),
        converged=converged,
        flags=flags,
        grad_norm=grad,
        n_iter=lm.n_iter,
    )


def _run(model, jac, x, y, sigma, x0, transforms, max_iter=200):
    """Weighted fit of ``model(x, p)``; returns the LM result with residuals attached."""
    w = 1.0 / sigma

    def res(p):
        return (y - model(x, p)) * w

    def jacobian(p):
        return -jac(x, p) * w[:, None]

    lm = levenberg_marquardt(res, jacobian, x0, transforms, max_iter=max_iter)
    lm.residuals = res(lm.x)  # kept for the natural-coordinate gradient
    lm.transforms = list(transforms)
    return lm


# -- HOM dip ------------------------------------------------------------------


@dataclass(frozen=True)
class DipScanData:
    delay: np.ndarray
    g34: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("delay", "g34", "sigma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.delay.shape == self.g34.shape == self.sigma.shape) or self.delay.ndim != 1:
            raise FitInputError("delay, g34 and sigma must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.delay)) or not np.all(np.isfinite(self.g34)):
            raise FitInputError("delays and g34 values must be finite")
        if np.any(~(self.sigma > 0)) or not np.all(np.isfinite(self.sigma)):
            raise FitInputError("every sigma must be a positive finite number")

    def __len__(self):
        return len(self.delay)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delay_ps", "g34", "sigma"])
            for row in zip(self.delay, self.g34, self.sigma):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> "DipScanData":
        cols = read_columns(path, ("delay_ps", "g34", "sigma"))
        return cls(*cols)


def read_columns(path, header: Sequence[str]) -> list[np.ndarray]:
    """Read a numeric CSV with an exact header; raises FitInputError on bad input."""
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise FitInputError(f"{path}: file is empty")
    got = [c.strip() for c in rows[0]]
    if got != list(header):
        raise FitInputError(f"{path}: expected header {','.join(header)!r}, got {','.join(got)!r}")
    if len(rows) == 1:
        raise FitInputError(f"{path}: no data rows")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]])
    except ValueError as exc:
        raise FitInputError(f"{path}: {exc}") from None
    if data.shape[1] != len(header):
        raise FitInputError(f"{path}: expected {len(header)} columns")
    return [data[:, i] for i in range(len(header))]


def _dip_model(fit_center):
    def model(d, p):
        c = p[3] if fit_center else 0.0
        return 0.5 * (1.0 - p[0] * np.exp(-np.abs(d - c) / p[1])) + p[2]

    def jac(d, p):
        c = p[3] if fit_center else 0.0
        u = d - c
        e = np.exp(-np.abs(u) / p[1])
        cols = [-0.5 * e, -0.5 * p[0] * e * (np.abs(u) / p[1]) / p[1], np.ones_like(d)]
        if fit_center:
            cols.append(-0.5 * p[0] * e * np.sign(u) / p[1])
        return np.stack(cols, axis=1)

    return model, jac


def default_dip_init(data: DipScanData) -> HomCurveParams:
    """Data-driven start: plateau from the maximum, depth from the spread, width from the half-depth crossing."""
    hi, lo = float(data.g34.max()), float(data.g34.min())
    g_back = max(hi - 0.5, 1e-3)
    indist = min(max(2.0 * (hi - lo), 0.05), 0.95)
    half = 0.5 * (hi + lo)
    order = np.argsort(np.abs(data.delay))
    ad, g = np.abs(data.delay)[order], data.g34[order]
    above = np.flatnonzero(g >= half)
    reach = float(ad[-1])
    if len(above) and ad[above[0]] > 0:
        tau_c = min(ad[above[0]] / math.log(2.0), reach / 2.0)
    else:
        tau_c = reach / 4.0
    tau_c = max(tau_c, 1e-3 * reach)
    return HomCurveParams(indist=indist, tau_c=tau_c, g_back=g_back)


def fit_hom_dip(
    data: DipScanData,
    init: HomCurveParams | None = None,
    fit_center: bool = False,
    max_iter: int = 200,
) -> FitResult:
    """Weighted fit of the exponential dip model over (indist, tau_c, g_back[, t0])."""
    if len(data) < 5:
        raise FitInputError(f"need at least 5 points, got {len(data)}")
    init = init or default_dip_init(data)
    if not np.max(np.abs(data.delay)) > init.tau_c:
        raise FitInputError("scan must extend beyond one expected correlation time")
    names = ["indist", "tau_c", "g_back"]
    x0 = [min(max(init.indist, 1e-6), 1.0 - 1e-6), init.tau_c, max(init.g_back, 1e-6)]
    transforms = [UNIT, POSITIVE, NONNEGATIVE]
    if fit_center:
        names.append("t0")
        x0.append(0.0)
        transforms.append(FREE)
    model, jac = _dip_model(fit_center)
    lm = _run(model, jac, data.delay, data.g34, data.sigma, x0, transforms, max_iter)

    # flat alternative: g34 = const, weighted mean
    w = data.sigma**-2
    flat = float(np.sum(w * data.g34) / np.sum(w))
    chi2_flat = float(np.sum(w * (data.g34 - flat) ** 2))
    if chi2_flat - lm.chi2 < 1.0:
        return _pinned_dip(data, init, names, fit_center, flat, model, jac)
    res = _finish(names, lm, len(data))
    nonzero = np.abs(data.delay[data.delay != 0])
    if len(nonzero) and res.params["tau_c"] < 0.1 * nonzero.min():
        res.flags.append("tau_c collapsed below the delay spacing; dip width unresolved")
    return res


def _pinned_dip(data, init, names, fit_center, flat, model, jac) -> FitResult:
    """No resolvable dip: report I = 0, with sigma_I from the curvature at I = 0."""
    p = np.array([0.0, init.tau_c, max(flat - 0.5, 0.0)] + ([0.0] if fit_center else []))
    w = 1.0 / data.sigma
    r = (data.g34 - model(data.delay, p)) * w
    J = -jac(data.delay, p) * w[:, None]
    sig = {n: math.inf for n in names}
    keep = [0, 2]
    cov = covariance(J[:, keep])
    for i, c in zip(keep, np.sqrt(np.diag(cov))):
        sig[names[i]] = float(c)
    return FitResult(
        params={n: float(v) for n, v in zip(names, p)},
        sigmas=sig,
        chi2=float(r @ r),
        n_dof=len(data) - len(names),
        converged=True,
        flags=["degenerate: no dip resolved above noise, indist pinned at 0"],
        grad_norm=0.0,
    )


def dip_params(fit: FitResult) -> HomCurveParams:
    p = fit.params
    return HomCurveParams(indist=p["indist"], tau_c=p["tau_c"], g_back=p["g_back"])


def visibility(fit: FitResult | HomCurveParams) -> float:
    """Fractional dip depth (g_inf - g_0) / g_inf = I / (1 + 2 g_back)."""
    if isinstance(fit, FitResult):
        if not fit.converged:
            raise ValueError("visibility requires a converged fit")
        indist, g_back = fit.params["indist"], fit.params["g_back"]
    else:
        indist, g_back = fit.indist, fit.g_back
    return indist / (1.0 + 2.0 * g_back)


def visibility_sigma(fit: FitResult) -> float:
    """First-order uncertainty of the visibility, ignoring the I-g_back correlation."""
    i, g = fit.params["indist"], fit.params["g_back"]
    si, sg = fit.sigmas["indist"], fit.sigmas["g_back"]
    return math.hypot(si / (1 + 2 * g), 2 * i * sg / (1 + 2 * g) ** 2)


# -- g2(0) ----------------------------------------------------------------------


@dataclass(frozen=True)
class G2Estimate:
    value: float
    sigma: float
    one_sided: bool = False


def g2_zero(peaks: CorrelogramPeaks) -> G2Estimate:
    """Normalized zero-delay peak with its Poisson uncertainty."""
    if 0 not in peaks:
        raise FitInputError("correlogram has no k = 0 peak")
    n_side = int(np.sum(peaks.side_mask))
    if n_side < 4:
        raise FitInputError(f"need at least 4 side peaks (|k| >= 2), got {n_side}")
    p = peaks[0]
    return G2Estimate(p.normalized, p.sigma, one_sided=p.area == 0)


# -- lifetime -------------------------------------------------------------------


def running_mean(y: Sequence[float], window: int = 5) -> np.ndarray:
    """Centered running mean; the window shrinks symmetrically near the edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    y = np.asarray(y, dtype=float)
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(y)])
    n = len(y)
    idx = np.arange(n)
    h = np.minimum(np.minimum(idx, n - 1 - idx), half)
    return (c[idx + h + 1] - c[idx - h]) / (2 * h + 1)


def _decay_model(t, p):
    return p[0] * np.exp(-t / p[1]) + p[2]


def _decay_jac(t, p):
    e = np.exp(-t / p[1])
    return np.stack([e, p[0] * e * (t / p[1]) / p[1], np.ones_like(t)], axis=1)


def fit_decay(
    time: Sequence[float],
    intensity: Sequence[float],
    window: int = 5,
    init: Sequence[float] | None = None,
    relative_noise: bool = True,
) -> FitResult:
    """Fit A exp(-t / tau) + c to the smoothed trace from its maximum onward.

    Only points whose running-mean window is complete are fitted. With
    ``relative_noise`` (streak-camera traces, where noise scales with the
    signal) points are weighted by the fitted model level, refined over a few
    reweighting passes; otherwise weights are uniform. The noise level is not
    known, so the covariance is scaled by chi^2 / n_dof. The amplitude refers
    to the unsmoothed decay on the caller's time axis.
    """
    t = np.asarray(time, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise FitInputError("time and intensity must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise FitInputError("decay samples must be finite")
    if np.any(np.diff(t) <= 0):
        raise FitInputError("decay times must be strictly increasing")
    smooth = running_mean(y, window)
    half = window // 2
    interior = np.arange(half, len(y) - half)
    if not len(interior):
        raise FitInputError("trace shorter than the smoothing window")
    peak = int(interior[np.argmax(smooth[interior])])
    sel = np.arange(peak, len(y) - half)
    if len(sel) < 15:
        raise FitInputError(f"need at least 15 samples past the peak, got {len(sel)}")
    ts, ys = t[sel], smooth[sel]
    t_ref = ts[0]
    if init is None:
        c0 = float(np.min(ys))
        a0 = max(float(ys[0] - c0), 1e-12)
        below = np.flatnonzero(ys <= c0 + a0 / math.e)
        tau0 = float(ts[below[0]] - t_ref) if len(below) and ts[below[0]] > t_ref else float(np.ptp(ts)) / 3
        p = (a0, max(tau0, 1e-9), c0)
    else:
        p = (init[0] * math.exp(-t_ref / init[1]), init[1], init[2])
    sigma = np.ones_like(ys)
    transforms = [POSITIVE, POSITIVE, FREE]
    for _ in range(3 if relative_noise else 1):
        lm = _run(_decay_model, _decay_jac, ts - t_ref, ys, sigma, p, transforms)
        p = lm.x
        level = np.abs(_decay_model(ts - t_ref, p))
        sigma = np.maximum(level, 1e-3 * level.max())
    n_dof = len(ts) - 3
    scale = lm.chi2 / n_dof if n_dof > 0 and lm.chi2 > 0 else 1.0
    res = _finish(["amplitude", "lifetime", "offset"], lm, len(ts), sigma_scale=scale)
    # undo the running-mean gain on an exponential and move the reference to t = 0
    tau = res.params["lifetime"]
    spacing = float(np.mean(np.diff(t)))
    gain = float(np.mean(np.exp(-np.arange(-half, half + 1) * spacing / tau)))
    shift = math.exp(t_ref / tau) / gain
    res.sigmas["amplitude"] *= shift
    res.params["amplitude"] *= shift
    return res


# -- spectra --------------------------------------------------------------------


def _lorentz_model(x, p):
    hw = 0.5 * p[1]
    return p[2] * hw * hw / ((x - p[0]) ** 2 + hw * hw) + p[3]


def _lorentz_jac(x, p):
    c, f, a = p[0], p[1], p[2]
    hw2 = 0.25 * f * f
    u = x - c
    den = u * u + hw2
    shape = hw2 / den
    d_c = a * hw2 * 2.0 * u / den**2
    d_f = a * (0.5 * f * den - hw2 * 0.5 * f) / den**2
    return np.stack([d_c, d_f, shape, np.ones_like(x)], axis=1)


def fit_lorentzian(
    wavelength: Sequence[float],
    counts: Sequence[float],
    init: Sequence[float] | None = None,
    poisson: bool = True,
) -> FitResult:
    """Least-squares Lorentzian over (center, fwhm, amplitude, baseline).

    With ``poisson`` the points are weighted by sqrt(max(counts, 1)); otherwise
    unit weights are used and the covariance is scaled by chi^2 / n_dof.
    """
    x = np.asarray(wavelength, dtype=float)
    y = np.asarray(counts, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitInputError("wavelength and counts must be 1-D arrays of equal length")
    if len(x) < 10:
        raise FitInputError(f"need at least 10 points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitInputError("spectrum values must be finite")
    order = np.argsort(x)
    x, y = x[order], y[order]
    if init is None:
        base = float(np.median(np.sort(y)[: max(len(y) // 5, 1)]))
        i = int(np.argmax(y))
        amp = max(float(y[i] - base), 1e-9)
        above = x[y >= base + 0.5 * amp]
        fwhm = float(above[-1] - above[0]) if len(above) > 1 else float(np.median(np.diff(x)))
        init = (float(x[i]), max(fwhm, float(np.min(np.diff(x))) / 2), amp, base)
    if init[1] * 3 > np.ptp(x):
        raise FitInputError("spectrum must span at least 3 linewidths")
    sigma = np.sqrt(np.maximum(y, 1.0)) if poisson else np.ones_like(y)
    # fit the center as an offset so the relative step tolerance is meaningful
    ref = float(init[0])
    start = (0.0, init[1], init[2], init[3])
    lm = _run(_lorentz_model, _lorentz_jac, x - ref, y, sigma, start, [FREE, POSITIVE, POSITIVE, FREE])
    scale = 1.0
    if not poisson and len(x) > 4 and lm.chi2 > 0:
        scale = lm.chi2 / (len(x) - 4)
    res = _finish(["center", "fwhm", "amplitude", "baseline"], lm, len(x), sigma_scale=scale)
    res.params["center"] += ref
    return res


def wavelength_to_ghz(delta_nm: float, center_nm: float = 429.06) -> float:
    """Frequency offset c * d_lambda / lambda^2 in GHz."""
    if not center_nm > 0:
        raise ValueError(f"center wavelength must be > 0, got {center_nm}")
    return SPEED_OF_LIGHT * (delta_nm * 1e-9) / (center_nm * 1e-9) ** 2 / 1e9


def lorentzian(x, center: float, fwhm: float, amplitude: float, baseline: float = 0.0):
    return _lorentz_model(np.asarray(x, dtype=float), (center, fwhm, amplitude, baseline))


# -- synthetic data ---------------------------------------------------------------


def synth_dip_scan(
    params: HomCurveParams,
    rng: np.random.Generator,
    delays: Sequence[float] = DIP_DELAYS,
    counts_scale: float = 400.0,
) -> DipScanData:
    """Poisson-noised normalized coincidences: N ~ Poisson(scale * g34), g = N / scale.

    At the default scale a plateau point near 1 carries sigma ~ 0.05.
    """
    d = np.asarray(delays, dtype=float)
    n = rng.poisson(counts_scale * hom_curve(params, d))
    return DipScanData(d, n / counts_scale, np.sqrt(np.maximum(n, 1)) / counts_scale)


def synth_decay_trace(
    rng: np.random.Generator,
    lifetime: float = 74.0,
    amplitude: float = 1.0,
    offset: float = 0.0,
    noise: float = 0.1,
    n: int = 200,
    dt: float = 5.0,
    rise: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Exponential decay with multiplicative Gaussian noise, optionally with a Gaussian-smeared onset."""
    t = np.arange(n) * dt - (4.0 * rise if rise > 0 else 0.0)
    clean = amplitude * np.exp(-np.maximum(t, 0.0) / lifetime) * (t >= 0)
    if rise > 0:
        # exponential convolved with a Gaussian of width ``rise``
        clean = amplitude * 0.5 * np.exp(rise**2 / (2 * lifetime**2) - t / lifetime) * erfc(
            (rise / lifetime - t / rise) / math.sqrt(2.0)
        )
    y = clean * (1.0 + noise * rng.standard_normal(n)) + offset
    return t, y


def synth_spectrum(
    rng: np.random.Generator,
    center: float = 429.06,
    fwhm: float = 0.01,
    peak: float = 1000.0,
    baseline: float = 5.0,
    span: float = 0.1,
    n: int = 101,
) -> tuple[np.ndarray, np.ndarray]:
    """Poisson counts of a Lorentzian line sampled across ``center +- span / 2``."""
    x = center + np.linspace(-span / 2, span / 2, n)
    return x, rng.poisson(lorentzian(x, center, fwhm, peak, baseline)).astype(float)

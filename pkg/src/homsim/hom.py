"""Two-photon coincidence level behind a 50/50 beam splitter.

The normalized zero-delay coincidence level as a function of interferometer
delay is

    g34(dt) = 1/2 * [1 - <|integral conj(a(t)) b(t + dt) dt|^2>] + g_back

and it is evaluated here three ways: the phenomenological exponential form
(``hom_curve``), numerical quadrature of the ensemble-averaged integrand
(``quadrature_hom_scan``) and Monte Carlo over sampled wavepackets
(``mc_hom_scan``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special

from .emitter import EmitterParams, Grid, batch_overlap, default_grid, sample_wavepackets
from .rng import substream

MC_BLOCK = 2000


class NoClosedFormError(ValueError):
    pass


class QuadratureError(RuntimeError):
    def __init__(self, message: str, error_estimate: float):
        super().__init__(f"{message} (estimated error {error_estimate:.3g})")
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class HomCurveParams:
    indist: float
    tau_c: float
    g_back: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.indist <= 1.0:
            raise ValueError(f"indist must lie in [0, 1], got {self.indist}")
        if not self.tau_c > 0:
            raise ValueError(f"tau_c must be > 0, got {self.tau_c}")
        if not self.g_back >= 0:
            raise ValueError(f"g_back must be >= 0, got {self.g_back}")


@dataclass(frozen=True)
class PhysicalPair:
    a: EmitterParams
    b: EmitterParams
    mode_match: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.mode_match <= 1.0:
            raise ValueError(f"mode_match must lie in [0, 1], got {self.mode_match}")


def hom_curve(p: HomCurveParams, delta_t):
    """Phenomenological coincidence level; accepts scalars or arrays."""
    return 0.5 * (1.0 - p.indist * np.exp(-np.abs(delta_t) / p.tau_c)) + p.g_back


def curve_visibility(p: HomCurveParams) -> float:
    """Fractional dip depth (g_inf - g_0) / g_inf of ``hom_curve``."""
    g_inf = 0.5 + p.g_back
    g_0 = 0.5 * (1.0 - p.indist) + p.g_back
    return (g_inf - g_0) / g_inf


def jitter_factor(rate: float, sigma_a: float, sigma_b: float) -> float:
    """E[exp(-rate |X|)] for X ~ N(0, sigma_a^2 + sigma_b^2)."""
    s = math.hypot(sigma_a, sigma_b)
    return float(special.erfcx(rate * s / math.sqrt(2.0)))


def physical_to_phenomenological(pp: PhysicalPair) -> HomCurveParams:
    """Map emitter physics to (I, tau_c); g_back is left at zero.

    Only equal lifetimes have a closed form. With jitter the true curve is an
    exponential smeared by a Gaussian; the returned I is its zero-delay value.
    """
    a, b = pp.a, pp.b
    if not math.isclose(a.tau_r, b.tau_r, rel_tol=1e-12):
        raise NoClosedFormError(
            "no closed form for unequal lifetimes "
            f"({a.tau_r} ps vs {b.tau_r} ps); use quadrature_hom_scan"
        )
    rate = 1.0 / a.tau_r
    decay = rate + a.gamma_d + b.gamma_d
    detuning = a.detuning - b.detuning
    indist = pp.mode_match * rate * decay / (decay**2 + detuning**2)
    indist *= jitter_factor(rate, a.jitter_sigma, b.jitter_sigma)
    return HomCurveParams(indist=min(indist, 1.0), tau_c=a.tau_r, g_back=0.0)


# -- quadrature ---------------------------------------------------------------

_QUAD_TOL = 1e-5


def _coherence_integral(pp: PhysicalPair) -> tuple[float, float]:
    """integral_0^inf exp(-kappa u) cos(delta u) du and its error estimate.

    In coordinates (s, u = t - s) the averaged integrand separates into an
    s-part carrying the delay and this u-part carrying dephasing and detuning.
    """
    a, b = pp.a, pp.b
    kappa = 0.5 * (1.0 / a.tau_r + 1.0 / b.tau_r) + a.gamma_d + b.gamma_d
    delta = a.detuning - b.detuning
    f = lambda u: math.exp(-kappa * u)
    # exp(-60) of the integrand's mass lies beyond this cutoff
    cutoff = 60.0 / kappa
    if delta == 0.0:
        val, err = integrate.quad(f, 0.0, cutoff, epsabs=1e-13, epsrel=1e-11, limit=200)
    else:
        val, err = integrate.quad(
            f, 0.0, cutoff, weight="cos", wvar=abs(delta), epsabs=1e-13, epsrel=1e-11, limit=200
        )
    return val, err


def _population_integral(pp: PhysicalPair, d: float) -> tuple[float, float]:
    """integral over s of Ga Gb exp(-Ga s) exp(-Gb (s + d)) with both s, s + d >= 0."""
    ga, gb = 1.0 / pp.a.tau_r, 1.0 / pp.b.tau_r
    lower = max(0.0, -d)
    f = lambda s: ga * gb * math.exp(-(ga + gb) * s - gb * d)
    val, err = integrate.quad(f, lower, np.inf, epsabs=1e-14, epsrel=1e-12)
    return val, err


def _overlap_sq_sharp(pp: PhysicalPair, d: float, u_part: tuple[float, float]) -> tuple[float, float]:
    """Ensemble-averaged |overlap|^2 at effective delay ``d`` without onset jitter."""
    s_val, s_err = _population_integral(pp, d)
    u_val, u_err = u_part
    val = 2.0 * s_val * u_val
    err = 2.0 * (abs(s_err * u_val) + abs(s_val * u_err))
    return val, err


def averaged_overlap_sq(pp: PhysicalPair, delta_t: float) -> tuple[float, float]:
    """<|O(delta_t)|^2> by quadrature, including Gaussian onset jitter exactly.

    Returns (value, error estimate). Spatial mode matching is not applied.
    """
    u_part = _coherence_integral(pp)
    s = math.hypot(pp.a.jitter_sigma, pp.b.jitter_sigma)
    if s == 0.0:
        return _overlap_sq_sharp(pp, delta_t, u_part)

    errs = []

    def integrand(j):
        v, e = _overlap_sq_sharp(pp, delta_t + j, u_part)
        errs.append(e)
        return v * math.exp(-0.5 * (j / s) ** 2)

    lim = 12.0 * s
    points = [-delta_t] if -lim < -delta_t < lim else None
    val, err = integrate.quad(integrand, -lim, lim, points=points, epsabs=1e-11, epsrel=1e-10, limit=200)
    norm = s * math.sqrt(2.0 * math.pi)
    return val / norm, err / norm + max(errs, default=0.0)


def quadrature_hom_scan(pp: PhysicalPair, delays: Sequence[float]) -> list[float]:
    """Coincidence level at each delay (g_back = 0) by numerical quadrature."""
    out = []
    for d in delays:
        if not math.isfinite(d):
            raise ValueError(f"delay must be finite, got {d}")
        x, err = averaged_overlap_sq(pp, float(d))
        if err > _QUAD_TOL:
            raise QuadratureError(f"quadrature did not converge at delay {d} ps", err)
        out.append(0.5 * (1.0 - pp.mode_match * x))
    return out


# -- Monte Carlo --------------------------------------------------------------


def _mc_block(pp: PhysicalPair, grid: Grid, delays, seed: int, block: int, size: int):
    a = sample_wavepackets(pp.a, grid, substream(seed, "emission", 0, block), size, fast_trig=True)
    b = sample_wavepackets(pp.b, grid, substream(seed, "emission", 1, block), size, fast_trig=True)
    sums = np.empty((len(delays), 2))
    for i, d in enumerate(delays):
        p = 0.5 * (1.0 - pp.mode_match * np.abs(batch_overlap(a, b, grid.dt, d)) ** 2)
        sums[i] = p.sum(), np.sum(p * p)
    return sums


def mc_hom_scan(
    pp: PhysicalPair,
    delays: Sequence[float],
    n_trials: int,
    rng_seed: int,
    grid: Grid | None = None,
    workers: int = 1,
) -> list[tuple[float, float]]:
    """Per-delay (mean, standard error) of the coincidence probability.

    Each trial draws one packet per emitter and uses
    1/2 (1 - mode_match |O(dt)|^2); all delays share the same trials. Trials
    are grouped in fixed blocks with their own substreams, so the result does
    not depend on ``workers``.
    """
    if n_trials < 100:
        raise ValueError(f"n_trials must be >= 100, got {n_trials}")
    grid = grid or default_grid(pp.a, pp.b)
    delays = [float(d) for d in delays]
    sizes = [MC_BLOCK] * (n_trials // MC_BLOCK)
    if n_trials % MC_BLOCK:
        sizes.append(n_trials % MC_BLOCK)

    def run(i):
        return _mc_block(pp, grid, delays, rng_seed, i, sizes[i])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    total = np.zeros((len(delays), 2))
    for part in parts:  # fixed order keeps the sums bit-identical
        total += part
    mean = total[:, 0] / n_trials
    var = np.maximum(total[:, 1] / n_trials - mean**2, 0.0) * n_trials / (n_trials - 1)
    se = np.sqrt(var / n_trials)
    return [(float(m), float(e)) for m, e in zip(mean, se)]

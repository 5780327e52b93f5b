"""Single-photon emitters and stochastic wavepacket realizations.

A photon from one emitter is a one-sided exponential wavepacket

    a(t) = sqrt(1/tau_r) * exp(-(t - te) / (2 tau_r)) * exp(i detuning t + i phi(t)),  t >= te

where ``te`` is a Gaussian emission-onset jitter and ``phi`` is a Wiener phase
diffusion with ``<exp(i[phi(t) - phi(s)])> = exp(-gamma_d |t - s|)``. Times are
picoseconds, rates 1/ps, angular frequencies rad/ps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    """The sampling grid violates a precondition of the wavepacket model."""


@dataclass(frozen=True)
class EmitterParams:
    tau_r: float
    gamma_d: float = 0.0
    detuning: float = 0.0
    jitter_sigma: float = 0.0
    brightness: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.tau_r) and self.tau_r > 0):
            raise ValueError(f"tau_r must be > 0, got {self.tau_r}")
        if not (math.isfinite(self.gamma_d) and self.gamma_d >= 0):
            raise ValueError(f"gamma_d must be >= 0, got {self.gamma_d}")
        if not math.isfinite(self.detuning):
            raise ValueError(f"detuning must be finite, got {self.detuning}")
        if not (math.isfinite(self.jitter_sigma) and self.jitter_sigma >= 0):
            raise ValueError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError(f"brightness must lie in [0, 1], got {self.brightness}")


@dataclass(frozen=True)
class Grid:
    t0: float
    dt: float
    n: int

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.n - 1)


def default_grid(*params: EmitterParams, dt: float = 1.0) -> Grid:
    """Smallest grid on multiples of ``dt`` that covers every emitter's window.

    For tau_r = 74 ps and 40 ps jitter this is [-200, 940] ps at 1 ps.
    """
    tau = max(p.tau_r for p in params)
    sigma = max(p.jitter_sigma for p in params)
    dt = min(dt, tau / 20.0)
    start = math.floor(-5.0 * sigma / dt) * dt
    stop = math.ceil((10.0 * tau + 5.0 * sigma) / dt) * dt
    return Grid(t0=start, dt=dt, n=int(round((stop - start) / dt)) + 1)


def check_grid(params: EmitterParams, grid: Grid) -> None:
    tol = 1e-9 * max(1.0, params.tau_r)
    if grid.dt <= 0:
        raise GridError(f"grid dt must be > 0, got {grid.dt}")
    if grid.dt > params.tau_r / 20.0 + tol:
        raise GridError(f"grid too coarse: dt={grid.dt} ps exceeds tau_r/20={params.tau_r / 20.0} ps")
    lo = -5.0 * params.jitter_sigma
    hi = 10.0 * params.tau_r + 5.0 * params.jitter_sigma
    if grid.t0 > lo + tol:
        raise GridError(f"window too short: start {grid.t0} ps is after -5*jitter_sigma={lo} ps")
    if grid.t_end < hi - tol:
        raise GridError(f"window too short: end {grid.t_end} ps is before 10*tau_r+5*jitter_sigma={hi} ps")


@dataclass(frozen=True)
class SampledWavepacket:
    t0: float
    dt: float
    amps: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.amps))

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2) * self.dt)


def sample_phase_paths(gamma_d: float, grid: Grid, rng: np.random.Generator, n: int) -> np.ndarray:
    """Wiener phase trajectories, shape ``(n, grid.n)``, pinned to 0 at ``grid.t0``.

    Increments have variance ``2 gamma_d dt`` so that the phase factor decays
    as ``exp(-gamma_d |t - s|)`` on average.
    """
    phi = np.zeros((n, grid.n))
    if gamma_d > 0:
        steps = rng.standard_normal((n, grid.n - 1)) * math.sqrt(2.0 * gamma_d * grid.dt)
        np.cumsum(steps, axis=1, out=phi[:, 1:])
    return phi


def sample_wavepackets(
    params: EmitterParams, grid: Grid, rng: np.random.Generator, n: int, fast_trig: bool = False
) -> np.ndarray:
    """``n`` independent realizations on ``grid`` as a complex array ``(n, grid.n)``.

    Rows have unit discrete norm. Draw order is fixed (onsets, then phase
    increments) so a given generator state always yields the same packets.
    ``fast_trig`` evaluates the phase factor in single precision after
    reducing the phase mod 2 pi (error ~1e-7); the envelope stays double.
    """
    check_grid(params, grid)
    t = grid.times
    if params.jitter_sigma > 0:
        te = rng.normal(0.0, params.jitter_sigma, size=n)
    else:
        te = np.zeros(n)
    if np.any(te > grid.t_end):
        raise GridError("sampled emission onset falls beyond the grid end")
    phi = sample_phase_paths(params.gamma_d, grid, rng, n)

    # the sqrt(1/tau_r) prefactor is absorbed by the discrete renormalization
    if params.jitter_sigma > 0:
        lag = t[None, :] - te[:, None]
        env = np.exp(-np.maximum(lag, 0.0) / (2.0 * params.tau_r))
        env[lag < 0] = 0.0
        env /= np.sqrt(np.sum(env * env, axis=1) * grid.dt)[:, None]
    else:
        env = np.where(t >= 0, np.exp(-np.maximum(t, 0.0) / (2.0 * params.tau_r)), 0.0)
        env = np.broadcast_to(env / math.sqrt(np.sum(env * env) * grid.dt), (n, grid.n))

    amps = np.empty((n, grid.n), dtype=complex)
    if params.detuning or params.gamma_d > 0:
        phi += params.detuning * t[None, :]
        if fast_trig:
            phi = np.remainder(phi, 2.0 * np.pi).astype(np.float32)
        np.multiply(env, np.cos(phi), out=amps.real)
        np.multiply(env, np.sin(phi), out=amps.imag)
    else:
        amps.real = env
        amps.imag = 0.0
    return amps


def sample_wavepacket(params: EmitterParams, grid: Grid, rng: np.random.Generator) -> SampledWavepacket:
    amps = sample_wavepackets(params, grid, rng, 1)[0]
    return SampledWavepacket(t0=grid.t0, dt=grid.dt, amps=amps)


def _shifted(amps: np.ndarray, t0_src: float, dt: float, query: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``amps`` (last axis on ``t0_src + k dt``) at ``query``; zero outside."""
    x = (query - t0_src) / dt
    n = amps.shape[-1]
    k = np.floor(x).astype(int)
    w = x - k
    out = np.zeros(amps.shape[:-1] + (len(query),), dtype=complex)
    for idx, weight in ((k, 1.0 - w), (k + 1, w)):
        ok = (idx >= 0) & (idx < n) & (weight != 0)
        if np.any(ok):
            out[..., ok] += amps[..., idx[ok]] * weight[ok]
    return out


def batch_overlap(a: np.ndarray, b: np.ndarray, dt: float, delta_t: float) -> np.ndarray:
    """Row-wise ``sum_k conj(a[k]) b(t_k + delta_t) dt`` for packets sharing one grid."""
    m = delta_t / dt
    n = a.shape[-1]
    if abs(m - round(m)) < 1e-9:
        m = int(round(m))
        if abs(m) >= n:
            return np.zeros(a.shape[:-1], dtype=complex)
        if m >= 0:
            return np.einsum("...k,...k->...", a[..., : n - m].conj(), b[..., m:]) * dt
        return np.einsum("...k,...k->...", a[..., -m:].conj(), b[..., : n + m]) * dt
    query = dt * np.arange(n) + delta_t
    return np.einsum("...k,...k->...", a.conj(), _shifted(b, 0.0, dt, query)) * dt


def wavepacket_overlap(a: SampledWavepacket, b: SampledWavepacket, delta_t: float) -> complex:
    """Inner product ``integral conj(a(t)) b(t + delta_t) dt`` on a's grid."""
    if not math.isclose(a.dt, b.dt, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(f"wavepackets have different grid spacing: {a.dt} vs {b.dt}")
    if math.isclose(a.t0, b.t0, rel_tol=0.0, abs_tol=1e-9 * a.dt) and len(a.amps) == len(b.amps):
        return complex(batch_overlap(a.amps, b.amps, a.dt, delta_t))
    query = a.times + delta_t
    return complex(np.sum(a.amps.conj() * _shifted(b.amps, b.t0, b.dt, query)) * a.dt)

"""Pulsed photon-counting experiments: time-tag synthesis and start-stop correlation.

Times are integer picoseconds since the start of the run. Pulse ``j`` fires at
``(j + 1) * pulse_period``; every count (signal, residual, stray) is pulse
synchronous, so after coarse-graining over a peak window each pulse is an
independent trial and the expected peak areas follow from per-pulse moments.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import optimize

from .emitter import EmitterParams, batch_overlap, default_grid, sample_wavepackets
from .hom import MC_BLOCK, PhysicalPair, averaged_overlap_sq
from .rng import substream

PULSE_BLOCK = 1 << 20
HBT_CHANNELS = (1, 2)
HOM_CHANNELS = (3, 4)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    emitters: tuple[EmitterParams, ...]
    n_pulses: int
    pulse_period: float = 13000.0
    interferometer_delay: float = 0.0
    background_rate: float = 0.0
    two_photon_residual: tuple[float, ...] = ()
    detector_resolution: float = 0.0
    mode_match: float = 1.0
    stray_pair_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "emitters", tuple(self.emitters))
        res = self.two_photon_residual
        if isinstance(res, (int, float)):
            res = (float(res),) * len(self.emitters)
        res = tuple(float(r) for r in res) or (0.0,) * len(self.emitters)
        object.__setattr__(self, "two_photon_residual", res)
        if not self.emitters:
            raise ConfigurationError("at least one emitter is required")
        if len(res) != len(self.emitters):
            raise ConfigurationError(
                f"two_photon_residual has {len(res)} entries for {len(self.emitters)} emitters"
            )
        if not self.pulse_period > 0:
            raise ConfigurationError(f"pulse_period must be > 0, got {self.pulse_period}")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ConfigurationError(f"n_pulses must be an integer >= 1, got {self.n_pulses}")
        for name in ("background_rate", "mode_match", "stray_pair_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        for e, r in zip(self.emitters, res):
            if r < 0 or e.brightness * r > 1.0:
                raise ConfigurationError(f"two_photon_residual {r} gives a probability outside [0, 1]")
        if self.detector_resolution < 0:
            raise ConfigurationError(f"detector_resolution must be >= 0, got {self.detector_resolution}")


@dataclass(frozen=True)
class TagStream:
    """Channel-stamped detection times, sorted ascending by time (then channel)."""

    channels: np.ndarray
    times: np.ndarray

    @classmethod
    def from_unsorted(cls, channels, times) -> "TagStream":
        channels = np.asarray(channels, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        order = np.lexsort((channels, times))
        return cls(channels[order], times[order])

    def __post_init__(self):
        if len(self.channels) != len(self.times):
            raise ValueError("channels and times differ in length")
        if len(self.times) and (np.any(np.diff(self.times) < 0) or self.times[0] < 0):
            raise ValueError("tag times must be non-negative and sorted ascending")

    def __len__(self):
        return len(self.times)

    def channel_times(self, ch: int) -> np.ndarray:
        return self.times[self.channels == ch]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("channel,time_ps\n")
            if len(self):
                np.savetxt(fh, np.column_stack([self.channels, self.times]), fmt="%d", delimiter=",")

    @classmethod
    def read_csv(cls, path) -> "TagStream":
        text = Path(path).read_text()
        lines = text.splitlines()
        if not lines or lines[0].strip().replace(" ", "") != "channel,time_ps":
            raise ValueError(f"{path}: expected header 'channel,time_ps'")
        body = [ln for ln in lines[1:] if ln.strip()]
        if not body:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64))
        data = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", dtype=np.int64, ndmin=2)
        times = data[:, 1]
        if np.any(np.diff(times) < 0):
            bad = int(np.argmax(np.diff(times) < 0)) + 3
            raise ValueError(f"{path}: tag times not sorted (line {bad})")
        return cls(data[:, 0].copy(), times.copy())


class Peak(NamedTuple):
    area: float
    normalized: float
    sigma: float


@dataclass(frozen=True)
class CorrelogramPeaks:
    """Integrated peak areas versus pulse order ``k`` (delay ~ k * pulse_period)."""

    k: np.ndarray
    area: np.ndarray
    normalized: np.ndarray
    sigma: np.ndarray
    pulse_period: float = 13000.0
    window: float = 1000.0

    def __getitem__(self, k: int) -> Peak:
        idx = np.flatnonzero(self.k == k)
        if not len(idx):
            raise KeyError(k)
        i = idx[0]
        return Peak(float(self.area[i]), float(self.normalized[i]), float(self.sigma[i]))

    def __contains__(self, k) -> bool:
        return bool(np.any(self.k == k))

    @property
    def side_mask(self) -> np.ndarray:
        return np.abs(self.k) >= 2

    @classmethod
    def from_areas(cls, k, area, pulse_period=13000.0, window=1000.0) -> "CorrelogramPeaks":
        """Normalize by the mean of the |k| >= 2 side peaks."""
        k = np.asarray(k, dtype=np.int64)
        area = np.asarray(area, dtype=float)
        if np.any(area < 0):
            raise ValueError("peak areas must be non-negative")
        side = np.abs(k) >= 2
        if not np.any(side):
            raise ValueError("no side peaks (|k| >= 2) to normalize by")
        scale = float(area[side].mean())
        if scale <= 0:
            raise ValueError("side peaks are empty; cannot normalize")
        return cls(k, area, area / scale, np.sqrt(area) / scale, pulse_period, window)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "area", "normalized", "sigma"])
            for row in zip(self.k, self.area, self.normalized, self.sigma):
                w.writerow([int(row[0])] + [repr(float(x)) for x in row[1:]])

    @classmethod
    def read_csv(cls, path) -> "CorrelogramPeaks":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["k", "area", "normalized", "sigma"]:
            raise ValueError(f"{path}: expected header 'k,area,normalized,sigma'")
        body = [r for r in rows[1:] if r]
        if not body:
            raise ValueError(f"{path}: no peaks")
        cols = list(zip(*body))
        return cls(
            np.array([int(x) for x in cols[0]]),
            np.array([float(x) for x in cols[1]]),
            np.array([float(x) for x in cols[2]]),
            np.array([float(x) for x in cols[3]]),
        )


# -- per-pulse moment accounting ---------------------------------------------


def zero_peak_ratio(
    singles: Sequence[float],
    background: float = 0.0,
    pair_rate: float = 0.0,
    interfering: tuple[int, int] | None = None,
    overlap_sq: float = 0.0,
) -> float:
    """Expected normalized zero-delay peak for pulse-synchronous independent sources.

    ``singles`` are per-pulse presence probabilities of independent photons
    routed 50/50; ``background`` is the per-detector stray count probability;
    ``pair_rate`` the probability of a correlated stray photon pair. If
    ``interfering`` names two singles, that pair exits split with probability
    1/2 (1 - overlap_sq) instead of 1/2.
    """
    p = np.asarray(singles, dtype=float)
    total = p.sum()
    mean = total / 2.0 + background + pair_rate
    cross = (total**2 - np.sum(p * p)) / 4.0
    if interfering is not None:
        i, j = interfering
        cross -= p[i] * p[j] * overlap_sq / 2.0
    cross += background * total + background**2
    cross += pair_rate / 2.0 + pair_rate * total + 2.0 * pair_rate * background
    return float(cross / mean**2)


def expected_hbt_g2(brightness: float, residual: float, background: float = 0.0) -> float:
    return zero_peak_ratio([brightness, brightness * residual], background)


def residual_for_g2(target: float, brightness: float, background: float = 0.0) -> float:
    """Two-photon residual ratio that makes the HBT zero peak equal ``target``."""
    f = lambda r: expected_hbt_g2(brightness, r, background) - target
    hi = min(1.0, 1.0 / brightness)
    lo_val, hi_val = f(0.0), f(hi)
    if lo_val > 0 or hi_val < 0:
        raise ValueError(
            f"target g2(0)={target} outside the reachable range "
            f"[{lo_val + target:.4f}, {hi_val + target:.4f}] for this brightness/background"
        )
    if lo_val == 0:
        return 0.0
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14))


def expected_hom_zero_peak(cfg: ExperimentConfig, overlap_sq: float) -> float:
    a, b = cfg.emitters
    ra, rb = cfg.two_photon_residual
    singles = [a.brightness, b.brightness, a.brightness * ra, b.brightness * rb]
    return zero_peak_ratio(
        singles, cfg.background_rate, cfg.stray_pair_rate, (0, 1), cfg.mode_match * overlap_sq
    )


def pulses_for_side_counts(cfg: ExperimentConfig, side_counts: float) -> int:
    """Pulses needed for ``side_counts`` expected coincidences in each |k| >= 2 peak."""
    singles = []
    for e, r in zip(cfg.emitters, cfg.two_photon_residual):
        singles += [e.brightness, e.brightness * r]
    mean = sum(singles) / 2.0 + cfg.background_rate + cfg.stray_pair_rate
    return max(int(math.ceil(side_counts / mean**2)), 1)


def tune_hom_config(
    indist: float,
    g_back: float,
    emitter: EmitterParams,
    n_pulses: int,
    **overrides,
) -> ExperimentConfig:
    """Two identical emitters with stray-pair rate and mode match chosen so that the
    expected normalized zero peak follows 1/2 (1 - indist * <|O|^2>/<|O(0)|^2>) + g_back.
    """
    eta = emitter.brightness
    f = lambda q: zero_peak_ratio([eta, eta], 0.0, q) - (0.5 + g_back)
    # the flat level rises with q up to a maximum, then falls back towards 1/2
    q_peak = optimize.minimize_scalar(lambda q: -f(q), bounds=(0.0, 1.0), method="bounded").x
    if f(0.0) > 0 or f(q_peak) < 0:
        raise ValueError(f"g_back={g_back} is not reachable with brightness {eta}")
    q = optimize.brentq(f, 0.0, q_peak, xtol=1e-15, rtol=1e-14) if f(0.0) < 0 else 0.0
    x0, _ = averaged_overlap_sq(PhysicalPair(emitter, emitter), 0.0)
    mean = eta + q
    mode_match = indist * mean**2 / (eta * eta * x0)
    if mode_match > 1.0:
        raise ValueError(f"indist={indist} needs mode_match {mode_match:.3f} > 1")
    return ExperimentConfig(
        emitters=(emitter, emitter),
        n_pulses=n_pulses,
        stray_pair_rate=q,
        mode_match=mode_match,
        **overrides,
    )


# -- synthesis ----------------------------------------------------------------


def _bernoulli_pulses(rng: np.random.Generator, size: int, p: float) -> np.ndarray:
    """Sorted in-block indices of pulses where an event with probability ``p`` occurs."""
    if p <= 0.0:
        return np.zeros(0, dtype=np.int64)
    if p >= 0.01:
        return np.flatnonzero(rng.random(size) < p)
    k = rng.binomial(size, p)
    return np.sort(rng.choice(size, size=k, replace=False, shuffle=False))


@dataclass
class _Tags:
    channels: list = field(default_factory=list)
    times: list = field(default_factory=list)

    def add(self, channels, times):
        self.channels.append(np.asarray(channels, dtype=np.int64))
        self.times.append(np.asarray(times, dtype=float))

    def stream(self, cfg: ExperimentConfig, seed: int) -> TagStream:
        if not self.times:
            return TagStream(np.zeros(0, np.int64), np.zeros(0, np.int64))
        times = np.concatenate(self.times)
        if cfg.detector_resolution > 0:
            times += substream(seed, "resolution").normal(0.0, cfg.detector_resolution, len(times))
        times = np.maximum(np.rint(times), 0).astype(np.int64)
        return TagStream.from_unsorted(np.concatenate(self.channels), times)


def _block_bounds(n_pulses: int):
    for j, start in enumerate(range(0, n_pulses, PULSE_BLOCK)):
        yield j, start, min(PULSE_BLOCK, n_pulses - start)


def _emission_delays(rng: np.random.Generator, e: EmitterParams, n: int) -> np.ndarray:
    d = rng.exponential(e.tau_r, size=n)
    if e.jitter_sigma > 0:
        d += rng.normal(0.0, e.jitter_sigma, size=n)
    return d


def _stray_counts(tags: _Tags, cfg: ExperimentConfig, seed, j, start, size, pulse_t, chans, ref):
    """Uncorrelated per-detector background and correlated stray pairs (interference-free)."""
    for c_i, ch in enumerate(chans):
        rng = substream(seed, "background", j, c_i)
        idx = _bernoulli_pulses(rng, size, cfg.background_rate)
        t = pulse_t(start + idx) + _emission_delays(rng, ref, len(idx))
        tags.add(np.full(len(idx), ch), t)
    if cfg.stray_pair_rate > 0:
        rng = substream(seed, "background", j, 2)
        idx = np.repeat(_bernoulli_pulses(rng, size, cfg.stray_pair_rate), 2)
        t = pulse_t(start + idx) + _emission_delays(rng, ref, len(idx))
        route = substream(seed, "routing", j, 2).random(len(idx)) < 0.5
        tags.add(np.where(route, chans[0], chans[1]), t)


def simulate_hbt(cfg: ExperimentConfig, seed: int) -> TagStream:
    """Single emitter split 50/50 onto detectors 1 and 2."""
    if len(cfg.emitters) != 1:
        raise ConfigurationError(f"simulate_hbt needs exactly one emitter, got {len(cfg.emitters)}")
    e = cfg.emitters[0]
    r = cfg.two_photon_residual[0]
    pulse_t = lambda idx: (idx + 1.0) * cfg.pulse_period
    tags = _Tags()
    for j, start, size in _block_bounds(cfg.n_pulses):
        for kind, p in ((0, e.brightness), (1, e.brightness * r)):
            rng = substream(seed, "emission" if kind == 0 else "residual", j)
            idx = _bernoulli_pulses(rng, size, p)
            t = pulse_t(start + idx) + _emission_delays(rng, e, len(idx))
            route = substream(seed, "routing", j, kind).random(len(idx)) < 0.5
            tags.add(np.where(route, HBT_CHANNELS[0], HBT_CHANNELS[1]), t)
        _stray_counts(tags, cfg, seed, j, start, size, pulse_t, HBT_CHANNELS, e)
    return tags.stream(cfg, seed)


def _pair_overlaps_sq(pp: PhysicalPair, delay: float, n: int, seed: int, block: int) -> np.ndarray:
    a, b = pp.a, pp.b
    if a.gamma_d == b.gamma_d == 0 and a.jitter_sigma == b.jitter_sigma == 0:
        x, _ = averaged_overlap_sq(pp, delay)  # deterministic packets: every trial is identical
        return np.full(n, x)
    grid = default_grid(a, b)
    out = np.empty(n)
    for c, lo in enumerate(range(0, n, MC_BLOCK)):
        m = min(MC_BLOCK, n - lo)
        pa = sample_wavepackets(a, grid, substream(seed, "phase", block, c, 0), m, fast_trig=True)
        pb = sample_wavepackets(b, grid, substream(seed, "phase", block, c, 1), m, fast_trig=True)
        out[lo : lo + m] = np.abs(batch_overlap(pa, pb, grid.dt, delay)) ** 2
    return out


def simulate_hom(cfg: ExperimentConfig, seed: int) -> TagStream:
    """Two emitters interfering on a 50/50 splitter, detected on channels 3 and 4.

    Photons from the second emitter travel the delayed interferometer arm.
    When both emitters deliver a photon in a pulse the pair exits split with
    probability 1/2 (1 - mode_match |O(delay)|^2), with O sampled per pulse.
    Residual and stray photons route independently and never interfere.
    """
    if len(cfg.emitters) != 2:
        raise ConfigurationError(f"simulate_hom needs exactly two emitters, got {len(cfg.emitters)}")
    ea, eb = cfg.emitters
    pp = PhysicalPair(ea, eb, cfg.mode_match)
    delay = cfg.interferometer_delay
    c3, c4 = HOM_CHANNELS
    pulse_t = lambda idx: (idx + 1.0) * cfg.pulse_period
    tags = _Tags()
    for j, start, size in _block_bounds(cfg.n_pulses):
        sig = [_bernoulli_pulses(substream(seed, "emission", j, i), size, e.brightness) for i, e in enumerate((ea, eb))]
        both = np.intersect1d(sig[0], sig[1], assume_unique=True)
        only = [np.setdiff1d(s, both, assume_unique=True) for s in sig]

        # interfering pairs
        x = _pair_overlaps_sq(pp, delay, len(both), seed, j)
        route = substream(seed, "routing", j, 0)
        split = route.random(len(both)) < 0.5 * (1.0 - cfg.mode_match * x)
        first = route.random(len(both)) < 0.5  # port of emitter a's photon
        ch_a = np.where(first, c3, c4)
        ch_b = np.where(split, np.where(first, c4, c3), ch_a)
        timing = substream(seed, "emission", j, 2)
        t_a = pulse_t(start + both) + _emission_delays(timing, ea, len(both))
        t_b = pulse_t(start + both) + delay + _emission_delays(timing, eb, len(both))
        tags.add(ch_a, t_a)
        tags.add(ch_b, t_b)

        # lone signal photons and residual photons
        for i, e in enumerate((ea, eb)):
            shift = delay if i == 1 else 0.0
            res_rng = substream(seed, "residual", j, i)
            groups = (only[i], _bernoulli_pulses(res_rng, size, e.brightness * cfg.two_photon_residual[i]))
            for g_i, idx in enumerate(groups):
                rng = timing if g_i == 0 else res_rng
                t = pulse_t(start + idx) + shift + _emission_delays(rng, e, len(idx))
                r = substream(seed, "routing", j, 1 + 2 * i + g_i).random(len(idx)) < 0.5
                tags.add(np.where(r, c3, c4), t)
        _stray_counts(tags, cfg, seed, j, start, size, pulse_t, HOM_CHANNELS, ea)

    return tags.stream(cfg, seed)


# -- correlation --------------------------------------------------------------


def correlate(
    tags: TagStream,
    pulse_period: float,
    window: float = 1000.0,
    max_order: int = 10,
    channels: tuple[int, int] | None = None,
    pairing: str = "all",
) -> CorrelogramPeaks:
    """Coarse-grained start-stop histogram: counts within +-window of k * pulse_period.

    ``pairing="all"`` counts every start/stop combination. ``"start-stop"``
    mimics a counting card whose stop line is delayed by
    ``max_order * pulse_period + window``: each start is paired only with the
    first stop that follows it on that delayed line.
    """
    if len(tags) == 0:
        raise ValueError("empty tag stream")
    if not window < pulse_period / 2:
        raise ValueError(f"window {window} ps overlaps neighbouring peaks (period {pulse_period} ps)")
    if max_order < 2:
        raise ValueError("max_order must be >= 2 to leave side peaks for normalization")
    if channels is None:
        present = np.unique(tags.channels)
        if len(present) != 2:
            raise ValueError(f"cannot infer start/stop channels from {present.tolist()}")
        channels = (int(present[0]), int(present[1]))
    start = tags.channel_times(channels[0]).astype(np.float64)
    stop = tags.channel_times(channels[1]).astype(np.float64)
    ks = np.arange(-max_order, max_order + 1)
    areas = np.zeros(len(ks))
    if len(start) and len(stop):
        if pairing == "all":
            for i, k in enumerate(ks):
                lo = np.searchsorted(stop, start + k * pulse_period - window, side="left")
                hi = np.searchsorted(stop, start + k * pulse_period + window, side="left")
                areas[i] = np.sum(hi - lo)
        elif pairing == "start-stop":
            offset = max_order * pulse_period + window
            nxt = np.searchsorted(stop, start - offset, side="left")
            ok = nxt < len(stop)
            delta = stop[nxt[ok]] - start[ok]
            kk = np.rint(delta / pulse_period)
            inside = (np.abs(kk) <= max_order) & (delta >= kk * pulse_period - window) & (
                delta < kk * pulse_period + window
            )
            areas = np.bincount((kk[inside] + max_order).astype(int), minlength=len(ks)).astype(float)
        else:
            raise ValueError(f"unknown pairing {pairing!r}")
    return CorrelogramPeaks.from_areas(ks, areas, pulse_period, window)

"""End-to-end runs: tag synthesis -> correlogram -> estimator.

These are the flows behind the command-line tool and the reproduction table.
Every run is a pure function of its configuration and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .analysis import (
    DIP_DELAYS,
    DipScanData,
    FitResult,
    G2Estimate,
    dip_params,
    fit_hom_dip,
    g2_zero,
    visibility,
)
from .emitter import EmitterParams
from .hom import hom_curve
from .rng import derive_seed
from .stream import (
    HBT_CHANNELS,
    HOM_CHANNELS,
    CorrelogramPeaks,
    ExperimentConfig,
    correlate,
    pulses_for_side_counts,
    residual_for_g2,
    simulate_hbt,
    simulate_hom,
    tune_hom_config,
    zero_peak_ratio,
)

# Reference device: 74 ps lifetime, 13 ns repetition, detection efficiency
# per pulse chosen for desk-scale statistics.
LIFETIME = 74.0
BRIGHTNESS = 0.1
HBT_BACKGROUND = 0.002
REF_INDIST = 0.65
REF_GBACK = 0.51
REPRO_SEED = 12345
SIDE_COUNTS_DIP = 400.0  # per side peak and delay; gives sigma ~ 0.05 on the plateau
SIDE_COUNTS_HBT = 1.0e4


def reference_emitter(brightness: float = BRIGHTNESS) -> EmitterParams:
    return EmitterParams(tau_r=LIFETIME, brightness=brightness)


def hbt_config(
    target_g2: float,
    brightness: float = BRIGHTNESS,
    background: float = HBT_BACKGROUND,
    side_counts: float = SIDE_COUNTS_HBT,
    **overrides,
) -> ExperimentConfig:
    """Single-emitter config whose expected zero peak equals ``target_g2``."""
    r = residual_for_g2(target_g2, brightness, background) if target_g2 > 0 else 0.0
    base = ExperimentConfig(
        emitters=(reference_emitter(brightness),),
        n_pulses=1,
        background_rate=background,
        two_photon_residual=r,
        **overrides,
    )
    return replace(base, n_pulses=pulses_for_side_counts(base, side_counts))


def hom_config(
    indist: float = REF_INDIST,
    g_back: float = REF_GBACK,
    side_counts: float = SIDE_COUNTS_DIP,
    mode_match: float | None = None,
    **overrides,
) -> ExperimentConfig:
    """Two-emitter config whose dip follows (indist, lifetime, g_back).

    ``mode_match`` overrides the tuned value, e.g. 0 to switch interference off.
    """
    cfg = tune_hom_config(indist, g_back, reference_emitter(), 1, **overrides)
    cfg = replace(cfg, n_pulses=pulses_for_side_counts(cfg, side_counts))
    if mode_match is not None:
        cfg = replace(cfg, mode_match=mode_match)
    return cfg


def run_hbt(
    cfg: ExperimentConfig, seed: int, window: float = 1000.0, max_order: int = 10, pairing: str = "all"
):
    tags = simulate_hbt(cfg, seed)
    peaks = correlate(tags, cfg.pulse_period, window, max_order, HBT_CHANNELS, pairing)
    return tags, peaks, g2_zero(peaks)


def dip_point(peaks: CorrelogramPeaks) -> tuple[float, float]:
    """Normalized zero peak and its Poisson sigma (at least one count's worth)."""
    p = peaks[0]
    scale = p.area / p.normalized if p.normalized > 0 else float(np.mean(peaks.area[peaks.side_mask]))
    return p.normalized, math.sqrt(max(p.area, 1.0)) / scale


def simulate_dip_scan(
    cfg: ExperimentConfig,
    seed: int,
    delays: Sequence[float] = DIP_DELAYS,
    window: float = 1000.0,
    max_order: int = 10,
) -> tuple[DipScanData, list[CorrelogramPeaks]]:
    """One independent tag stream per delay, reduced to the normalized zero peak."""
    if not len(delays):
        raise ValueError("scan needs at least one delay")
    g, s, all_peaks = [], [], []
    for i, d in enumerate(delays):
        tags = simulate_hom(replace(cfg, interferometer_delay=float(d)), derive_seed(seed, i))
        peaks = correlate(tags, cfg.pulse_period, window, max_order, channels=HOM_CHANNELS)
        v, e = dip_point(peaks)
        g.append(v)
        s.append(e)
        all_peaks.append(peaks)
    return DipScanData(np.asarray(delays, dtype=float), g, s), all_peaks


# -- reproduction table -----------------------------------------------------------


@dataclass(frozen=True)
class ReproRow:
    name: str
    reference: str
    value: float
    sigma: float
    passed: bool
    criterion: str


@dataclass(frozen=True)
class ReproResult:
    rows: list[ReproRow]
    dip: DipScanData
    fit: FitResult
    g2: tuple[G2Estimate, G2Estimate]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def table(self) -> str:
        head = f"{'quantity':<14}{'reference':>10}{'reproduced':>22}  {'tolerance':<16}result"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            rep = f"{r.value:.4g} +- {r.sigma:.2g}" if math.isfinite(r.sigma) else f"{r.value:.4g}"
            lines.append(
                f"{r.name:<14}{r.reference:>10}{rep:>22}  {r.criterion:<16}{'PASS' if r.passed else 'FAIL'}"
            )
        return "\n".join(lines) + "\n"


def paper_repro(seed: int = REPRO_SEED, mode_match: float | None = None) -> ReproResult:
    """HBT for both devices plus the dip scan and fit, checked against the reference values."""
    g2 = []
    for i, target in enumerate((0.41, 0.25)):
        _, _, est = run_hbt(hbt_config(target), derive_seed(seed, 100 + i))
        g2.append(est)
    cfg = hom_config(mode_match=mode_match)
    dip, _ = simulate_dip_scan(cfg, derive_seed(seed, 200))
    fit = fit_hom_dip(dip)
    hp = dip_params(fit)
    sig = fit.sigmas
    vis = visibility(fit) if fit.converged else float("nan")

    def within(x, ref, tol):
        return bool(math.isfinite(x) and abs(x - ref) <= tol + 1e-12)

    g0 = float(hom_curve(hp, 0.0))
    g200 = float(hom_curve(hp, 200.0))
    rows = [
        ReproRow("g2(0) A", "0.41", g2[0].value, g2[0].sigma, within(g2[0].value, 0.41, 0.03), "0.41 +- 0.03"),
        ReproRow("g2(0) B", "0.25", g2[1].value, g2[1].sigma, within(g2[1].value, 0.25, 0.03), "0.25 +- 0.03"),
        ReproRow("g34(0)", "~0.68", g0, math.nan, within(g0, 0.685, 0.04), "0.685 +- 0.04"),
        ReproRow("g34(200 ps)", "~0.96", g200, math.nan, g200 >= 0.94, ">= 0.94"),
        ReproRow("visibility", "31%", vis, math.nan, within(vis, 0.32, 0.03), "0.32 +- 0.03"),
        ReproRow("I", "0.65", hp.indist, sig["indist"], within(hp.indist, REF_INDIST, 0.13), "0.65 +- 0.13"),
        ReproRow("tau_c [ps]", "74", hp.tau_c, sig["tau_c"], within(hp.tau_c, LIFETIME, 38.0), "74 +- 38"),
        ReproRow("g_back", "0.51", hp.g_back, sig["g_back"], within(hp.g_back, REF_GBACK, 0.06), "0.51 +- 0.06"),
    ]
    return ReproResult(rows, dip, fit, (g2[0], g2[1]))


def expected_flat_level(cfg: ExperimentConfig) -> float:
    """Plateau of the dip for a config: zero peak with no two-photon interference."""
    a, b = cfg.emitters
    ra, rb = cfg.two_photon_residual
    singles = [a.brightness, b.brightness, a.brightness * ra, b.brightness * rb]
    return zero_peak_ratio(singles, cfg.background_rate, cfg.stray_pair_rate)

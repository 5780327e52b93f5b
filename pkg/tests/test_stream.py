import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homsim.emitter import EmitterParams
from homsim.pipelines import hbt_config, hom_config, run_hbt
from homsim.stream import (
    HBT_CHANNELS,
    HOM_CHANNELS,
    ConfigurationError,
    CorrelogramPeaks,
    ExperimentConfig,
    TagStream,
    correlate,
    expected_hom_zero_peak,
    simulate_hbt,
    simulate_hom,
    tune_hom_config,
    zero_peak_ratio,
)

E = EmitterParams(74.0, brightness=0.1)


def brute_zero_peak(singles, background, pair_rate, interfering=None, overlap_sq=0.0):
    """E[nA nB] / (E[nA] E[nB]) by enumerating every per-pulse outcome."""
    sources = [("single", p) for p in singles] + [("bgA", background), ("bgB", background), ("pair", pair_rate)]
    cross = 0.0
    for present in itertools.product((0, 1), repeat=len(sources)):
        w = math.prod(p if on else 1 - p for on, (_, p) in zip(present, sources))
        if w == 0:
            continue
        # photons routed 50/50, each as either 0 (A) or 1 (B)
        photons = []
        for idx, (on, (kind, _)) in enumerate(zip(present, sources)):
            if not on:
                continue
            if kind == "bgA":
                photons.append([(0, 1.0)])
            elif kind == "bgB":
                photons.append([(1, 1.0)])
            elif kind == "pair":
                photons += [[(0, 0.5), (1, 0.5)], [(0, 0.5), (1, 0.5)]]
            elif interfering is not None and idx == interfering[1] and present[interfering[0]]:
                photons.append("partner")
            else:
                photons.append([(0, 0.5), (1, 0.5)])
        lone = [ph for ph in photons if ph != "partner"]
        partnered = "partner" in photons
        if partnered:
            # locate photon of emitter interfering[0]: it is the one at its position among singles
            k = sum(present[: interfering[0]])
            lead = lone.pop(k)
            assert lead == [(0, 0.5), (1, 0.5)]
        for outcome in itertools.product(*lone):
            q = math.prod(pr for _, pr in outcome)
            n = [sum(1 for d, _ in outcome if d == det) for det in (0, 1)]
            if partnered:
                split = 0.5 * (1 - overlap_sq)
                # split: one photon each side; bunched: both on one side (either)
                ab = split * (n[0] + 1) * (n[1] + 1)
                ab += (1 - split) * 0.5 * ((n[0] + 2) * n[1] + n[0] * (n[1] + 2))
                cross += w * q * ab
            else:
                cross += w * q * n[0] * n[1]
    mean = sum(singles) / 2 + background + pair_rate
    return cross / mean**2


# -- configuration -----------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigurationError, match="at least one emitter"):
        ExperimentConfig((), 10)
    with pytest.raises(ConfigurationError, match="n_pulses"):
        ExperimentConfig((E,), 0)
    with pytest.raises(ConfigurationError, match="background_rate"):
        ExperimentConfig((E,), 10, background_rate=1.5)
    with pytest.raises(ConfigurationError, match="two_photon_residual has 1 entries"):
        ExperimentConfig((E, E), 10, two_photon_residual=(0.1,))
    with pytest.raises(ConfigurationError, match="pulse_period"):
        ExperimentConfig((E,), 10, pulse_period=0.0)
    with pytest.raises(ConfigurationError, match="exactly one emitter"):
        simulate_hbt(ExperimentConfig((E, E), 10), 0)
    with pytest.raises(ConfigurationError, match="exactly two emitters"):
        simulate_hom(ExperimentConfig((E,), 10), 0)


def test_tune_rejects_unreachable():
    with pytest.raises(ValueError, match="g_back"):
        tune_hom_config(0.5, 5.0, E, 10)
    with pytest.raises(ValueError, match="mode_match"):
        tune_hom_config(1.0, 0.51, E, 10)


# -- expected moments ----------------------------------------------------------------


@pytest.mark.parametrize(
    "singles,b,q,inter,x",
    [
        ([0.1], 0.0, 0.0, None, 0.0),
        ([0.1, 0.03], 0.002, 0.0, None, 0.0),
        ([0.1, 0.1, 0.01, 0.02], 0.001, 0.003, (0, 1), 0.6),
        ([0.2, 0.15], 0.0, 0.01, (0, 1), 1.0),
    ],
)
def test_zero_peak_ratio_matches_enumeration(singles, b, q, inter, x):
    assert zero_peak_ratio(singles, b, q, inter, x) == pytest.approx(brute_zero_peak(singles, b, q, inter, x), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(p=st.lists(st.floats(0.001, 0.5), min_size=2, max_size=3), b=st.floats(0, 0.01), q=st.floats(0, 0.01), x=st.floats(0, 1))
def test_zero_peak_ratio_property(p, b, q, x):
    assert zero_peak_ratio(p, b, q, (0, 1), x) == pytest.approx(brute_zero_peak(p, b, q, (0, 1), x), rel=1e-10)


def test_tuned_hom_zero_peak():
    cfg = tune_hom_config(0.65, 0.51, E, 10)
    assert expected_hom_zero_peak(cfg, 1.0) == pytest.approx(0.5 * (1 - 0.65) + 0.51, abs=1e-12)
    assert zero_peak_ratio([0.1, 0.1], 0.0, cfg.stray_pair_rate) == pytest.approx(1.01, abs=1e-12)


# -- synthesis ---------------------------------------------------------------------


def test_count_rate_matches_brightness():
    cfg = ExperimentConfig((EmitterParams(74.0, brightness=1e-4),), 100_000_000)
    tags = simulate_hbt(cfg, 1)
    assert abs(len(tags) - 1e4) < 300  # 3 sigma of the Poisson count


def test_ideal_source_has_empty_zero_peak():
    cfg = ExperimentConfig((E,), 200_000)
    peaks = correlate(simulate_hbt(cfg, 2), cfg.pulse_period, channels=HBT_CHANNELS)
    assert peaks[0].area == 0
    assert peaks[3].area > 0


def test_tuned_hbt_recovers_g2():
    _, _, est = run_hbt(hbt_config(0.41), 3)
    assert abs(est.value - 0.41) < 0.02 and not est.one_sided


def test_hbt_without_residual_or_background_is_antibunched():
    _, _, est = run_hbt(hbt_config(0.0, background=0.0, side_counts=2000), 4)
    assert est.value < 0.05


def test_background_only_stream_is_flat():
    cfg = ExperimentConfig((EmitterParams(74.0, brightness=0.0),), 500_000, background_rate=0.02)
    peaks = correlate(simulate_hbt(cfg, 5), cfg.pulse_period, channels=HBT_CHANNELS)
    z = (peaks.normalized - 1.0) / peaks.sigma
    assert np.all(np.abs(z) < 4)
    assert abs(peaks[0].normalized - 1.0) < 3 * peaks[0].sigma * 1.1


def test_hom_ideal_pair_never_coincides():
    cfg = ExperimentConfig((E, E), 200_000)
    peaks = correlate(simulate_hom(cfg, 6), cfg.pulse_period, channels=HOM_CHANNELS)
    assert peaks[0].area == 0 and peaks[2].area > 0


def test_hom_without_mode_match_is_classical():
    cfg = ExperimentConfig((E, E), 400_000, mode_match=0.0)
    p = correlate(simulate_hom(cfg, 7), cfg.pulse_period, channels=HOM_CHANNELS)[0]
    assert abs(p.normalized - 0.5) < 3 * p.sigma


def test_hom_tuned_zero_peak():
    cfg = hom_config(side_counts=4000)
    p = correlate(simulate_hom(cfg, 8), cfg.pulse_period, channels=HOM_CHANNELS)[0]
    assert abs(p.normalized - 0.685) < 0.04


def test_simulation_is_deterministic():
    cfg = ExperimentConfig((EmitterParams(74.0, 0.002, 0.0, 10.0, 0.1),), 50_000, background_rate=0.001, two_photon_residual=0.4)
    a, b, c = simulate_hbt(cfg, 9), simulate_hbt(cfg, 9), simulate_hbt(cfg, 10)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.channels, b.channels)
    assert not (len(a) == len(c) and np.array_equal(a.times, c.times))
    h = hom_config(side_counts=50, interferometer_delay=50.0)
    h = replace(h, emitters=(EmitterParams(74.0, 0.003, brightness=0.1),) * 2)
    x, y = simulate_hom(h, 11), simulate_hom(h, 11)
    assert np.array_equal(x.times, y.times) and np.array_equal(x.channels, y.channels)


# -- correlation -------------------------------------------------------------------


def brute_areas(tags, period, window, max_order, channels):
    s = tags.channel_times(channels[0]).astype(float)
    t = tags.channel_times(channels[1]).astype(float)
    d = t[None, :] - s[:, None]
    out = []
    for k in range(-max_order, max_order + 1):
        lo = k * period - window
        out.append(int(np.sum((d >= lo) & (d < lo + 2 * window))))
    return np.array(out)


def small_stream(seed=12, n=3000):
    cfg = ExperimentConfig((E,), n, background_rate=0.01, two_photon_residual=0.5, pulse_period=1000.0)
    return cfg, simulate_hbt(cfg, seed)


def test_correlate_matches_brute_force():
    cfg, tags = small_stream()
    peaks = correlate(tags, cfg.pulse_period, window=300.0, max_order=6, channels=HBT_CHANNELS)
    assert np.array_equal(peaks.area, brute_areas(tags, cfg.pulse_period, 300.0, 6, HBT_CHANNELS))
    assert np.array_equal(peaks.k, np.arange(-6, 7))


def test_from_areas_normalization():
    p = CorrelogramPeaks.from_areas([-2, -1, 0, 1, 2], [100, 100, 41, 100, 100])
    assert p[0].normalized == pytest.approx(0.41)
    assert p[0].sigma == pytest.approx(math.sqrt(41) / 100)
    again = CorrelogramPeaks.from_areas(p.k, p.normalized)
    assert np.allclose(again.normalized, p.normalized, rtol=1e-14)
    with pytest.raises(ValueError, match="side peaks"):
        CorrelogramPeaks.from_areas([-1, 0, 1], [1, 1, 1])
    with pytest.raises(ValueError, match="non-negative"):
        CorrelogramPeaks.from_areas([-2, 0, 2], [1, -1, 1])
    with pytest.raises(KeyError):
        p[7]


def test_nearest_side_peaks_share_the_plateau():
    _, peaks, _ = run_hbt(hbt_config(0.41, side_counts=4000), 13)
    side = peaks.area[peaks.side_mask]
    with_first = peaks.area[np.abs(peaks.k) >= 1]
    # adding the k = +-1 peaks to the normalization shifts it by less than its own uncertainty
    assert abs(with_first.mean() - side.mean()) < side.std(ddof=1) / math.sqrt(len(side))


def test_start_stop_pairing_agrees_at_low_rate():
    cfg = hbt_config(0.41, brightness=0.01, background=0.0002, side_counts=3000)
    tags = simulate_hbt(cfg, 14)
    full = correlate(tags, cfg.pulse_period, channels=HBT_CHANNELS, pairing="all")
    ss = correlate(tags, cfg.pulse_period, channels=HBT_CHANNELS, pairing="start-stop")
    assert np.all(ss.area <= full.area)
    dropped = full.area - ss.area
    assert dropped.sum() / full.area.sum() < 0.2
    # the two estimates share most pairs; their difference is set by the dropped ones
    scale = full.area[full.side_mask].mean()
    sigma = math.sqrt(max(dropped[full.k == 0][0], 1.0) + dropped[full.side_mask].sum() / 18) / scale
    assert abs(ss[0].normalized - full[0].normalized) < 3 * sigma + 1e-3


def test_correlate_errors():
    cfg, tags = small_stream(n=100)
    with pytest.raises(ValueError, match="empty"):
        correlate(TagStream(np.zeros(0, np.int64), np.zeros(0, np.int64)), 1000.0)
    with pytest.raises(ValueError, match="overlaps"):
        correlate(tags, 1000.0, window=600.0, channels=HBT_CHANNELS)
    with pytest.raises(ValueError, match="max_order"):
        correlate(tags, 1000.0, window=100.0, max_order=1, channels=HBT_CHANNELS)
    with pytest.raises(ValueError, match="pairing"):
        correlate(tags, 1000.0, window=100.0, channels=HBT_CHANNELS, pairing="nope")
    three = TagStream(np.array([1, 2, 3]), np.array([1, 2, 3]))
    with pytest.raises(ValueError, match="infer"):
        correlate(three, 1000.0, window=100.0)


# -- files -------------------------------------------------------------------------


def test_tag_stream_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError, match="sorted"):
        TagStream(np.array([1, 2]), np.array([5, 3]))
    with pytest.raises(ValueError, match="length"):
        TagStream(np.array([1]), np.array([5, 3]))
    _, tags = small_stream(n=500)
    path = tmp_path / "tags.csv"
    tags.write_csv(path)
    back = TagStream.read_csv(path)
    assert np.array_equal(back.times, tags.times) and np.array_equal(back.channels, tags.channels)
    path.write_text("channel,time_ps\n1,10\n2,5\n")
    with pytest.raises(ValueError, match="not sorted"):
        TagStream.read_csv(path)
    path.write_text("chan,t\n1,10\n")
    with pytest.raises(ValueError, match="header"):
        TagStream.read_csv(path)


def test_peaks_round_trip(tmp_path):
    cfg, tags = small_stream()
    peaks = correlate(tags, cfg.pulse_period, window=300.0, channels=HBT_CHANNELS)
    path = tmp_path / "peaks.csv"
    peaks.write_csv(path)
    back = CorrelogramPeaks.read_csv(path)
    for attr in ("k", "area", "normalized", "sigma"):
        assert np.array_equal(getattr(back, attr), getattr(peaks, attr))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from homsim import hom
from homsim.emitter import EmitterParams
from homsim.hom import (
    HomCurveParams,
    NoClosedFormError,
    PhysicalPair,
    QuadratureError,
    averaged_overlap_sq,
    curve_visibility,
    hom_curve,
    mc_hom_scan,
    physical_to_phenomenological,
    quadrature_hom_scan,
)

TAU = 74.0
G = 1 / TAU


def pair(gamma_a=0.0, gamma_b=None, detuning=0.0, jitter=0.0, mode_match=1.0):
    gamma_b = gamma_a if gamma_b is None else gamma_b
    return PhysicalPair(
        EmitterParams(TAU, gamma_a, detuning, jitter),
        EmitterParams(TAU, gamma_b, 0.0, jitter),
        mode_match,
    )


def overlap_sq_dblquad(pp: PhysicalPair, d: float) -> float:
    """Direct 2-D integral of the ensemble-averaged integrand (no jitter)."""
    a, b = pp.a, pp.b
    ga, gb = 1 / a.tau_r, 1 / b.tau_r
    gam = a.gamma_d + b.gamma_d
    delta = a.detuning - b.detuning
    lo = max(0.0, -d)

    def env(t):
        return math.sqrt(ga * gb) * math.exp(-ga * t / 2 - gb * (t + d) / 2)

    def f(s, t):
        return env(t) * env(s) * math.exp(-gam * (t - s)) * math.cos(delta * (t - s))

    # symmetric in (s, t): integrate the s < t triangle so the |t - s| kink sits on an edge
    hi = lo + 40 * max(a.tau_r, b.tau_r)
    val, _ = integrate.dblquad(f, lo, hi, lo, lambda t: t, epsabs=1e-11, epsrel=1e-11)
    return 2 * val


# -- phenomenological curve ---------------------------------------------------


def test_curve_examples():
    p = HomCurveParams(0.65, 74.0, 0.51)
    assert hom_curve(p, 0.0) == pytest.approx(0.685, abs=1e-12)
    assert hom_curve(p, 200.0) == pytest.approx(0.9882, abs=5e-5)
    flat = HomCurveParams(0.0, 33.0, 0.5)
    assert np.allclose(hom_curve(flat, np.array([-500.0, 0.0, 7.0])), 1.0)


def test_curve_params_validation():
    with pytest.raises(ValueError, match="indist"):
        HomCurveParams(1.2, 10.0)
    with pytest.raises(ValueError, match="tau_c"):
        HomCurveParams(0.5, 0.0)
    with pytest.raises(ValueError, match="g_back"):
        HomCurveParams(0.5, 10.0, -0.1)
    with pytest.raises(ValueError, match="mode_match"):
        PhysicalPair(EmitterParams(1.0), EmitterParams(1.0), 1.5)


@settings(max_examples=50, deadline=None)
@given(i1=st.floats(0, 1), i2=st.floats(0, 1), tau=st.floats(1, 500), g=st.floats(0, 2))
def test_dip_deepens_with_indist(i1, i2, tau, g):
    if abs(i1 - i2) < 1e-9:
        return
    lo, hi = sorted((i1, i2))
    assert hom_curve(HomCurveParams(hi, tau, g), 0.0) < hom_curve(HomCurveParams(lo, tau, g), 0.0)


@settings(max_examples=50, deadline=None)
@given(i=st.floats(0, 1), tau=st.floats(1, 500), g=st.floats(0, 2), d=st.floats(-1e3, 1e3))
def test_curve_even_and_visibility_identity(i, tau, g, d):
    p = HomCurveParams(i, tau, g)
    assert hom_curve(p, d) == hom_curve(p, -d)
    assert curve_visibility(p) == pytest.approx(i / (1 + 2 * g), rel=1e-12, abs=1e-15)


# -- closed form ----------------------------------------------------------------


def test_closed_form_examples():
    perfect = physical_to_phenomenological(pair())
    assert perfect.indist == pytest.approx(1.0) and perfect.tau_c == TAU
    assert physical_to_phenomenological(pair(gamma_a=G / 2)).indist == pytest.approx(0.5)
    assert physical_to_phenomenological(pair(detuning=G)).indist == pytest.approx(0.5)
    mm = physical_to_phenomenological(pair(mode_match=0.3))
    assert mm.indist == pytest.approx(0.3)


def test_unequal_lifetimes_have_no_closed_form():
    pp = PhysicalPair(EmitterParams(74.0), EmitterParams(80.0))
    with pytest.raises(NoClosedFormError, match="quadrature_hom_scan"):
        physical_to_phenomenological(pp)
    # the quadrature path still works
    (v,) = quadrature_hom_scan(pp, [0.0])
    ga, gb = 1 / 74, 1 / 80
    assert v == pytest.approx(0.5 * (1 - 4 * ga * gb / (ga + gb) ** 2), abs=1e-8)


def test_jitter_factor_matches_convolution():
    s = 40.0 * math.sqrt(2)
    f = lambda x: math.exp(-abs(x) / TAU) * math.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
    oracle = 2 * integrate.quad(f, 0, np.inf)[0]
    assert hom.jitter_factor(G, 40.0, 40.0) == pytest.approx(oracle, rel=1e-9)


# -- quadrature -------------------------------------------------------------------


def test_quadrature_examples():
    assert quadrature_hom_scan(pair(), [0.0]) == pytest.approx([0.0], abs=1e-10)
    (v,) = quadrature_hom_scan(pair(gamma_a=G / 2), [74.0])
    assert v == pytest.approx(0.5 * (1 - 0.5 * math.exp(-1)), abs=1e-4)
    (v,) = quadrature_hom_scan(pair(detuning=2 * G), [0.0])
    assert v == pytest.approx(0.4, abs=1e-8)


@pytest.mark.parametrize(
    "pp,d",
    [
        (pair(gamma_a=0.3 * G, gamma_b=0.1 * G, detuning=0.7 * G), 0.0),
        (pair(gamma_a=0.3 * G, gamma_b=0.1 * G, detuning=0.7 * G), 60.0),
        (PhysicalPair(EmitterParams(60.0, 0.002, 0.01), EmitterParams(90.0, 0.001)), -45.0),
    ],
)
def test_quadrature_matches_dblquad_oracle(pp, d):
    x, err = averaged_overlap_sq(pp, d)
    assert err < 1e-8
    assert x == pytest.approx(overlap_sq_dblquad(pp, d), abs=1e-7)


@pytest.mark.parametrize("jitter", [0.0, 25.0])
def test_quadrature_agrees_with_closed_form(jitter):
    pp = pair(gamma_a=0.2 * G, gamma_b=0.4 * G, detuning=-0.5 * G, jitter=jitter)
    hp = physical_to_phenomenological(pp)
    (q0,) = quadrature_hom_scan(pp, [0.0])
    assert q0 == pytest.approx(hom_curve(hp, 0.0), abs=1e-8)
    if jitter == 0:
        d = np.array([-150.0, -20.0, 33.0, 120.0])
        assert np.allclose(quadrature_hom_scan(pp, d), hom_curve(hp, d), atol=1e-8)


def test_quadrature_even_in_delay():
    pp = pair(gamma_a=0.1 * G, detuning=0.4 * G, jitter=30.0)
    d = [15.0, 80.0, 210.0]
    assert np.allclose(quadrature_hom_scan(pp, d), quadrature_hom_scan(pp, [-x for x in d]), atol=1e-9)


def test_quadrature_values_in_range():
    pp = pair(gamma_a=0.5 * G, detuning=G, jitter=40.0, mode_match=0.7)
    v = np.array(quadrature_hom_scan(pp, np.linspace(-400, 400, 9)))
    assert np.all((v >= 0) & (v <= 0.5))


def test_quadrature_error_is_reported(monkeypatch):
    monkeypatch.setattr(hom, "averaged_overlap_sq", lambda pp, d: (0.3, 1e-3))
    with pytest.raises(QuadratureError) as info:
        quadrature_hom_scan(pair(), [0.0])
    assert info.value.error_estimate == 1e-3


def test_quadrature_rejects_non_finite_delay():
    with pytest.raises(ValueError):
        quadrature_hom_scan(pair(), [math.inf])


# -- Monte Carlo ------------------------------------------------------------------


def test_mc_deterministic_packets_exact():
    ((m, se),) = mc_hom_scan(pair(), [0.0], 200, 0)
    assert m == pytest.approx(0.0, abs=1e-12) and se == pytest.approx(0.0, abs=1e-9)


def test_mc_requires_trials():
    with pytest.raises(ValueError, match="n_trials"):
        mc_hom_scan(pair(), [0.0], 50, 0)


def test_mc_dephased_pair_half_indist():
    ((m, se),) = mc_hom_scan(pair(gamma_a=G / 2), [0.0], 100_000, 11)
    assert abs(m - 0.25) < 3 * se


def test_mc_jitter_matches_convolution_oracle():
    s = 40.0 * math.sqrt(2)
    f = lambda x: math.exp(-abs(x) / TAU) * math.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
    expect = 0.5 * (1 - 2 * integrate.quad(f, 0, np.inf)[0])
    ((m, se),) = mc_hom_scan(pair(jitter=40.0), [0.0], 100_000, 12)
    # sampled onsets land on the grid with linear interpolation: allow its O(dt^2) bias
    assert abs(m - expect) < 3 * se + 2e-4


def test_mc_independent_of_workers():
    pp = pair(gamma_a=0.2 * G, detuning=0.3 * G, jitter=10.0)
    a = mc_hom_scan(pp, [0.0, 40.0], 4500, 3, workers=1)
    b = mc_hom_scan(pp, [0.0, 40.0], 4500, 3, workers=3)
    assert a == b


def test_mc_even_in_delay_statistically():
    pp = pair(gamma_a=0.2 * G, jitter=20.0)
    (pm, ps), (nm, ns) = mc_hom_scan(pp, [50.0, -50.0], 20_000, 4)
    assert abs(pm - nm) < 3 * math.hypot(ps, ns)

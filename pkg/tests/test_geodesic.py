import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from oracles import bump_multiplier_quad, convolve_direct, periodic_mean_quad
from reebtop import geodesic as G
from reebtop.errors import InvalidSpecError, PreconditionError, ResolutionError, UnsupportedOperationError
from reebtop.fixtures import (
    MOLLIFY_SCALES,
    SANDWICH_DELTA,
    SIGMA_STAR,
    WEIERSTRASS,
    bumpy_metric,
    constant_metric,
    mollified_metrics,
    shipped_metrics,
    weierstrass_metric,
)
from reebtop.integrate import FlowConfig

METRICS = shipped_metrics()
point2 = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(np.array)


def random_states(metric, n, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0, 1, size=(n, 2))
    p = rng.normal(size=(n, 2))
    return np.hstack([q, p])


def fourier(*terms):
    return G.ConformalMetric(G.FourierFactor(terms))


# --- the geodesic field ------------------------------------------------------------


def test_flat_field_is_straight_lines():
    s = random_states(None, 100)
    np.testing.assert_array_equal(G.geodesic_field(G.flat_metric(), s), np.hstack([s[:, 2:], np.zeros((100, 2))]))


def test_constant_factor_rescales_speed():
    c = 0.3
    s = random_states(None, 100, 1)
    F = G.geodesic_field(constant_metric(c), s)
    np.testing.assert_allclose(F[:, :2], math.exp(-2 * c) * s[:, 2:], rtol=1e-15)
    np.testing.assert_array_equal(F[:, 2:], 0.0)


@pytest.mark.parametrize("name", sorted(METRICS))
def test_field_preserves_hamiltonian(name):
    metric = METRICS[name]
    s = random_states(metric, 10_000, 2)
    f, g, _ = metric.factor_derivatives(s[:, :2])
    e = np.exp(-2 * f)
    pp = np.sum(s[:, 2:] ** 2, axis=1)
    dH = np.column_stack([-e * pp * g[:, 0], -e * pp * g[:, 1], e * s[:, 2], e * s[:, 3]])
    assert np.max(np.abs(np.sum(dH * G.geodesic_field(metric, s), axis=1))) <= 1e-12


def test_field_matches_finite_differences_of_factor():
    metric = bumpy_metric()
    q = np.array([0.3, 0.7])
    h = 1e-6
    grad = [(metric.factor(q + h * e) - metric.factor(q - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(metric.factor_derivatives(q)[1], grad, rtol=1e-8, atol=1e-10)


def test_unit_state_is_on_unit_level():
    metric = bumpy_metric()
    for ang in np.linspace(0, 6, 7):
        s = G.unit_state(metric, np.array([0.2, 0.9]), ang)
        assert G.hamiltonian(metric, s) == pytest.approx(0.5, abs=1e-15)


def test_weierstrass_exposes_no_derivatives():
    metric = weierstrass_metric()
    assert not metric.differentiable
    with pytest.raises(UnsupportedOperationError):
        G.geodesic_field(metric, np.array([0.1, 0.2, 1.0, 0.0]))
    with pytest.raises(UnsupportedOperationError):
        G.geodesic_entropy(metric, FlowConfig(T=1.0), N=2)
    # evaluation is still allowed
    assert math.isfinite(float(metric.factor(np.array([0.1, 0.2]))))


@pytest.mark.parametrize(
    "kw", [dict(a=1.0, b=3, K=3), dict(a=0.5, b=1, K=3), dict(a=0.3, b=3, K=3), dict(a=0.5, b=3, K=0),
           dict(a=0.5, b=2.5, K=3)]
)
def test_weierstrass_parameter_validation(kw):
    with pytest.raises(InvalidSpecError):
        G.WeierstrassFactor(**kw)


PERIODIC_FACTORS = [bumpy_metric().factor, weierstrass_metric().factor, mollified_metrics()[0].factor]


@given(point2)
def test_factors_are_periodic(q):
    for f in PERIODIC_FACTORS:
        base = float(f(q))
        for e in np.eye(2):
            assert float(f(q + e)) == pytest.approx(base, abs=1e-9)


def test_weierstrass_sup_bound():
    w = G.WeierstrassFactor(**WEIERSTRASS)
    assert np.max(np.abs(w(G.torus_grid(256)))) <= w.sup_bound() + 1e-15
    assert float(w(np.zeros(2))) == pytest.approx(w.sup_bound(), rel=1e-14)


# --- area ----------------------------------------------------------------------------------


def test_flat_area():
    assert G.metric_area(G.flat_metric()).value == 1.0


def test_constant_area():
    assert G.metric_area(constant_metric(0.5 * math.log(2))).value == pytest.approx(2.0, rel=1e-14)


def test_bessel_area():
    metric = fourier((0.1, (1, 0)))
    rep = G.metric_area(metric, 64)
    oracle = periodic_mean_quad(lambda t: math.exp(0.2 * math.cos(2 * math.pi * t)))
    assert rep.value == pytest.approx(oracle, abs=1e-8)
    assert oracle == pytest.approx(special.i0(0.2), abs=1e-12)
    assert set(rep.refinement) == {32, 64}


def test_normalize_area():
    metric = G.normalize_area(bumpy_metric())
    assert G.metric_area(metric).value == pytest.approx(1.0, abs=1e-12)
    assert G.metric_area(weierstrass_metric()).value == pytest.approx(1.0, abs=1e-12)


# --- sandwich --------------------------------------------------------------------------


def test_sandwich_identity():
    g = bumpy_metric()
    res = G.sandwich_check(g, g, 0.05)
    assert res.passed and res.margin == 0.05


def test_sandwich_shift_fails():
    g = bumpy_metric()
    delta = 0.05
    shifted = G.ConformalMetric(g.factor.shifted(2 * delta))
    res = G.sandwich_check(g, shifted, delta)
    assert not res
    assert res.margin == pytest.approx(-delta, abs=1e-12)


def test_sandwich_precondition():
    with pytest.raises(PreconditionError):
        G.sandwich_check(G.flat_metric(), G.flat_metric(), 0.0)


# --- mollification ------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 3, 9, 27])
@pytest.mark.parametrize("sigma", [0.02, 0.07, 0.2])
def test_bump_multiplier_matches_quadrature(k, sigma):
    assert G.bump_multiplier(k, sigma, 256)[0] == pytest.approx(bump_multiplier_quad(k, sigma), abs=1e-12)


def test_single_mode_multiplier_in_unit_interval_and_increasing():
    base = fourier((0.4, (2, 1)))
    coefs = []
    for sigma in (0.3, 0.2, 0.1, 0.05, 0.01):
        m = G.MollifiedFactor(base.factor, sigma).modes()[0][0] / 0.4
        assert 0 < m < 1
        coefs.append(m)
    assert all(b > a for a, b in zip(coefs, coefs[1:]))
    assert coefs[-1] > 0.99


def test_mollification_matches_direct_convolution():
    base = fourier((0.3, (1, 2), 0.4), (0.1, (3, 0)))
    sigma = 0.08
    moll = G.MollifiedFactor(base.factor, sigma)
    for q in ([0.1, 0.2], [0.55, 0.9], [0.73, 0.31]):
        q = np.array(q)
        assert float(moll(q)) == pytest.approx(convolve_direct(base.factor, q, sigma), abs=1e-9)


def test_mollified_derivatives_match_finite_differences():
    metric = mollified_metrics()[1]
    q = np.array([0.37, 0.61])
    h = 1e-6
    grad = [(metric.factor(q + h * e) - metric.factor(q - h * e)) / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(metric.factor_derivatives(q)[1], grad, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("scales", [[0.05, 0.05], [0.01, 0.02], [0.05, -0.01], []])
def test_mollify_sequence_preconditions(scales):
    with pytest.raises(PreconditionError):
        G.mollify_sequence(weierstrass_metric(), scales)


def test_mollify_sequence_distances_decrease():
    base = weierstrass_metric()
    seq = G.mollify_sequence(base, MOLLIFY_SCALES)
    d = [G.sup_distance(m, base, 512) for m in seq]
    assert all(b < a for a, b in zip(d, d[1:]))


def test_uncertifiable_grid_raises():
    # a sine mode of frequency 3 vanishes on the 3x3 lattice, so every distance is 0
    base = fourier((0.2, (3, 0), math.pi / 2))
    with pytest.raises(ResolutionError):
        G.mollify_sequence(base, [0.1, 0.05], grid=3)


def test_underresolved_quadrature_raises():
    w = G.WeierstrassFactor(**WEIERSTRASS)
    with pytest.raises(ResolutionError):
        G.MollifiedFactor(w, 0.4, resolution=16).modes()


def test_frozen_sigma_star():
    s = G.sigma_star(weierstrass_metric(), SANDWICH_DELTA)
    assert s >= SIGMA_STAR
    assert s - SIGMA_STAR <= 1e-4
    assert MOLLIFY_SCALES[0] == SIGMA_STAR


def test_mollified_fixtures_are_sandwiched_with_area_bound():
    base = weierstrass_metric()
    delta = SANDWICH_DELTA
    for m in mollified_metrics():
        assert G.sandwich_check(base, m, delta).passed
        area = G.metric_area(m).value
        assert math.exp(-2 * delta) <= area <= math.exp(2 * delta)
        assert 0.75 <= area <= 1.25


# --- geodesic flow --------------------------------------------------------------------


@pytest.mark.parametrize("name", ["constant", "bumpy"])
def test_hamiltonian_drift(name):
    metric = METRICS[name]
    rows, _, _, _, stats = G.integrate_geodesic(metric, G.unit_state(metric, np.array([0.1, 0.3]), 0.7),
                                                FlowConfig(T=1000.0, record_every=100))
    assert stats[0] <= 1e-7
    assert rows[-1, 0] == 1000.0


def test_flat_momentum_conserved():
    metric = G.flat_metric()
    s0 = G.unit_state(metric, np.array([0.1, 0.3]), 0.7)
    rows, _, _, _, _ = G.integrate_geodesic(metric, s0, FlowConfig(T=1000.0))
    assert np.max(np.abs(rows[:, 3:5] - s0[2:])) <= 1e-10
    np.testing.assert_allclose(rows[-1, 1:3], s0[:2] + 1000.0 * s0[2:], rtol=1e-12)


def test_constant_metric_speed():
    c = 0.3
    metric = constant_metric(c)
    s0 = G.unit_state(metric, np.array([0.0, 0.0]), 0.0)
    rows, _, _, _, _ = G.integrate_geodesic(metric, s0, FlowConfig(T=2.0), t_out=np.array([0.0, 2.0]))
    assert rows[-1, 1] == pytest.approx(2.0 * math.exp(-2 * c) * s0[2], rel=1e-12)


@pytest.mark.parametrize("name", ["flat", "constant"])
def test_integrable_tori_have_zero_entropy(name):
    est = G.geodesic_entropy(METRICS[name], FlowConfig(T=1000.0), N=10, seed=0)
    assert est.value <= 0.01


def test_geodesic_entropy_deterministic_and_ensemble_precondition():
    metric = bumpy_metric()
    a = G.geodesic_entropy(metric, FlowConfig(T=50.0), N=3, seed=4)
    b = G.geodesic_entropy(metric, FlowConfig(T=50.0), N=3, seed=4, workers=3)
    assert a.as_dict() == b.as_dict()
    with pytest.raises(PreconditionError):
        G.geodesic_entropy(metric, FlowConfig(T=10.0), N=1)

import math

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

from gsfcalc import riemann_app as ra
from gsfcalc import varcalc as vc
from gsfcalc.gauge_ring import make_gauge

pytestmark = pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")


@pytest.fixture(scope="module")
def G():
    return make_gauge()


@pytest.fixture(scope="module")
def flat2(G):
    return ra.regularize_metric(ra.flat(2), gauge=G)


@pytest.fixture(scope="module")
def curved(G):
    return ra.regularize_metric(ra.curved_1d(), gauge=G)


def _all_k(G, x):
    K = len(G)
    x = np.atleast_2d(x)
    return np.repeat(np.arange(K), len(x)), np.tile(x, (K, 1))


def test_flat_metric_is_exact(G, flat2):
    kk, x = _all_k(G, [[0.1, -0.3], [2.0, 1.0]])
    np.testing.assert_array_equal(flat2.metric(kk, x), np.broadcast_to(np.eye(2), (len(x), 2, 2)))
    np.testing.assert_array_equal(flat2.christoffel(kk, x), 0.0)


def test_quadratic_metric_reproduced(G, curved):
    kk, x = _all_k(G, [[0.3], [-1.2], [0.0]])
    np.testing.assert_allclose(curved.metric(kk, x)[:, 0, 0], 1 + x[:, 0] ** 2, rtol=1e-14)
    np.testing.assert_allclose(curved.christoffel(kk, x)[:, 0, 0, 0], x[:, 0] / (1 + x[:, 0] ** 2),
                               rtol=1e-13, atol=1e-15)


def test_conformal_metric_against_direct_convolution(conformal):
    Rg, spec = conformal["Rg"], conformal["spec"]
    m = Rg.mollifier
    b = Rg.b
    probes = [-0.7, -1e-3, 0.0, 0.05, 0.6]
    g1 = lambda s: math.exp(0.2 * s * abs(s))
    gaps, effect = [], []
    for k in range(10, 20):
        got = Rg.metric(np.full(len(probes), k), np.array([[p, 0.3] for p in probes]))
        ref = [quad(lambda y: g1(p - y / b[k]) * float(m(y)), -1, 1, points=[p * b[k]] if
                    abs(p * b[k]) < 1 else None, epsabs=1e-15, epsrel=1e-14)[0] for p in probes]
        gaps.append(np.max(np.abs(got[:, 0, 0] - ref)))
        effect.append(np.max(np.abs(np.array(ref) - [g1(p) for p in probes])))
        np.testing.assert_allclose(got[:, 1, 1], got[:, 0, 0], rtol=1e-15)
        np.testing.assert_array_equal(got[:, 0, 1], 0.0)
    # the discrete kernel tracks the exact convolution; both gaps and the mollification
    # effect itself shrink with b
    assert max(gaps) <= 5e-7
    assert gaps[-1] <= 1e-8
    assert effect[-1] < effect[0]


def test_conformal_christoffel_matches_fd_of_metric(conformal, G):
    Rg = conformal["Rg"]
    for k in (12, 19):
        for x0 in (-0.4, 0.01, 0.7):
            x = np.array([[x0, 0.2]])
            kk = np.array([k])
            g = lambda dx: Rg.metric(kk, x + [dx, 0])[0, 0, 0]
            D = lambda h: (g(h) - g(-h)) / (2 * h)
            # conformal factor: Gamma^0_00 = d_0 g / (2 g), derivative by Richardson
            fd = (4 * D(1e-4) - D(2e-4)) / 3 / (2 * g(0.0))
            assert Rg.christoffel(kk, x)[0, 0, 0, 0] == pytest.approx(fd, rel=1e-7, abs=1e-10)


def test_not_positive_definite_is_rejected(G):
    # the j = 2 kernel has a negative third absolute moment, so |x|^3 dips below zero at 0
    spec = ra.MetricSpec(1, lambda x: (1e-30 + np.abs(np.reshape(x, (-1, 1))[:, 0]) ** 3)[:, None, None],
                         probes=np.array([[0.0], [0.5]]))
    with pytest.raises(ra.RegularizationError, match="not positive-definite"):
        ra.regularize_metric(spec, gauge=G)


def test_spec_validation():
    with pytest.raises(ra.RiemannError):
        ra.MetricSpec(1, lambda x: -np.ones((len(np.reshape(x, (-1, 1))), 1, 1)))
    with pytest.raises(ra.RiemannError):
        ra.builtin_metric("torus")
    with pytest.raises(ra.RiemannError):
        ra.MetricSpec(2, ra.flat(2).g, kinks=((0, 0.0),))


def test_flat_ivp_is_straight(G, flat2):
    y = ra.geodesic_ivp(flat2, (0.5, -1.0), (1.0, 2.0), steps=100)
    t = y.t
    np.testing.assert_allclose(y.u[:, :, 0], 0.5 + t, atol=1e-14)
    np.testing.assert_allclose(y.u[:, :, 1], -1.0 + 2 * t, atol=1e-14)


def test_zero_velocity_stays_put(G, curved):
    y = ra.geodesic_ivp(curved, (0.4,), (0.0,), steps=50)
    np.testing.assert_array_equal(y.u[:, :, 0], 0.4)


def test_curved_ivp_against_reference(G, curved):
    y = ra.geodesic_ivp(curved, (0.2,), (1.5,), t_end=1.0, steps=1000)
    rhs = lambda _, s: [s[1], -s[0] / (1 + s[0] ** 2) * s[1] ** 2]
    ref = solve_ivp(rhs, (0, 1), [0.2, 1.5], method="DOP853", rtol=1e-12, atol=1e-13,
                    t_eval=y.t[0])
    assert np.max(np.abs(y.u[:, :, 0] - ref.y[0])) <= 1e-6
    # speed is conserved along geodesics
    assert np.max(ra.speed_drift(curved, y).samples) <= 1e-9


def test_flat_bvp(G, flat2):
    r = ra.geodesic_bvp(flat2, (0.0, 0.0), (1.0, 1.0))
    np.testing.assert_allclose(r.c0, 1.0, atol=1e-12)
    np.testing.assert_allclose(r.length.samples, math.sqrt(2), rtol=1e-12)
    assert ra.standard_length(r).value == pytest.approx(math.sqrt(2), abs=1e-12)
    same = ra.geodesic_bvp(flat2, (1.0, 1.0), (1.0, 1.0))
    np.testing.assert_array_equal(same.c0, 0.0)
    np.testing.assert_array_equal(same.length.samples, 0.0)


def test_curved_bvp_hits_endpoint(G, curved):
    r = ra.geodesic_bvp(curved, (-0.5,), (1.0,))
    np.testing.assert_allclose(r.y.u[:, -1, 0], 1.0, atol=1e-9)
    # 1-D length is the arc length of the metric, independent of the path
    exact = quad(lambda s: math.sqrt(1 + s * s), -0.5, 1.0)[0]
    np.testing.assert_allclose(r.length.samples, exact, rtol=1e-10)


def _semicircle(G, flat2, speed):
    dom = vc.IntervalDomain.of(G, 0.0, 1.0)

    def u(k, t):
        s = math.pi * speed(t)
        return np.stack([np.cos(s), np.sin(s)], axis=-1)

    def du(k, t):
        s = math.pi * speed(t)
        ds = math.pi * (speed(t + 1e-7) - speed(t - 1e-7)) / 2e-7
        return np.stack([-np.sin(s) * ds, np.cos(s) * ds], axis=-1)

    return vc.trajectory(dom, u, du, 2000)


def test_semicircle_length_and_reparametrization(G, flat2):
    L1 = ra.length(flat2, _semicircle(G, flat2, lambda t: t))
    L2 = ra.length(flat2, _semicircle(G, flat2, lambda t: (t + t ** 2) / 2))
    np.testing.assert_allclose(L1.samples, math.pi, rtol=1e-9)
    np.testing.assert_allclose(L2.samples, math.pi, rtol=1e-7)


def test_degenerate_velocity_rejected(G, flat2):
    dom = vc.IntervalDomain.of(G, 0.0, 1.0)
    lam = vc.trajectory(dom, lambda k, t: np.stack([t ** 2, 0 * t], -1),
                        lambda k, t: np.stack([2 * t, 0 * t], -1), 100)
    with pytest.raises(ra.GeodesicError, match="degenerate"):
        ra.length(flat2, lam)


def test_flat_minimality(G, flat2):
    r = ra.geodesic_bvp(flat2, (0.0, 0.0), (1.0, 2.0))
    assert ra.minimality_report(flat2, r).verdict == "passes-necessary"
    dom = vc.IntervalDomain.of(G, 0.0, 1.0)
    # same path, non-affine speed: not a critical point of the energy
    bent = vc.trajectory(dom, lambda k, t: np.stack([t ** 2, 2 * t ** 2], -1),
                         lambda k, t: np.stack([2 * t, 4 * t], -1), 1000)
    assert vc.minimizer_report(flat2.energy_lagrangian(), bent).verdict == "violates-necessary"


def test_standard_length_missing(G, flat2):
    r = ra.geodesic_bvp(flat2, (0.0, 0.0), (1.0, 0.0))
    fake = ra.GeodesicResult(r.y, r.c0, G.from_eps(lambda e: 1 + np.sin(1 / e)), r.speed_drift,
                             r.residual, r.iterations)
    with pytest.raises(Exception, match="standard part"):
        ra.standard_length(fake)


def test_conformal_geodesic(conformal):
    res, oracle = conformal["res"], conformal["oracle"]
    err = ra.c0_error(res, oracle)
    assert np.all(np.diff(err[-5:]) <= 0)
    assert err[-1] <= 1e-7
    assert ra.standard_length(res, oracle).oracle_gap <= 1e-8
    assert np.max(res.speed_drift.samples) <= 1e-6
    c1 = ra.c1_error(res, oracle)
    assert np.all(np.diff(c1[-5:]) < 0) and c1[-1] <= 1e-5


def test_conformal_minimality(conformal_minimality):
    assert conformal_minimality.verdict == "passes-necessary"


def test_oracle_roundtrip(conformal):
    o = conformal["oracle"]
    back = ra.ClassicalGeodesic.from_csv(o.to_csv(), conformal["spec"])
    np.testing.assert_array_equal(back.y, o.y)
    assert back.length == o.length
    np.testing.assert_allclose(o.at(o.t[::1000]), o.y[::1000], atol=1e-14)


def test_csv_outputs(flat2):
    r = ra.geodesic_bvp(flat2, (0.0, 0.0), (3.0, 4.0), steps=20)
    assert ra.lengths_to_csv(r).splitlines()[0].split(",")[-1] == "length"
    assert ra.geodesic_to_csv(r).splitlines()[0].startswith("k,eps")

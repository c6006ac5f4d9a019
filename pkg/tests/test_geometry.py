import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from conftest import cplx, random_point, seeds
from sbscycles import ChartError, ConfigurationError, GeometryError, Section, cp1, cp2, quadric
from sbscycles.geometry import (
    chordal_distance,
    complex_jacobian,
    enclosed_area,
    from_sphere,
    integrate_density,
    metric_matrix,
    norm_sq,
    omega_matrix,
    symplectic_density,
    to_sphere,
    transition,
)
from sbscycles.potential import random_section


def circle(model, r, n=400, center=0.0, reverse=False):
    t = np.linspace(0, 2 * np.pi, n + 1)
    if reverse:
        t = t[::-1]
    return [model.point(0, center + r * np.exp(1j * a)) for a in t]


# norm squared

def test_norm_sq_examples():
    m = cp1(2)
    assert norm_sq(m, Section(m, [0, 1, 0]), m.point(0, 1.0)) == pytest.approx(0.25, abs=1e-15)
    assert norm_sq(m, Section(m, [1, 0, 1]), m.point(0, 1j)) == pytest.approx(0.0, abs=1e-15)
    q = quadric()
    s = Section(q, np.eye(2))
    assert norm_sq(q, s, q.point(0, (0.0, 0.0))) == pytest.approx(1.0, abs=1e-15)


def test_norm_sq_rejects_foreign_section():
    with pytest.raises(ConfigurationError):
        norm_sq(cp1(3), Section(cp1(2), [1, 0, 1]), cp1(3).point(0, 0.5))


@given(seeds, cplx(3), cplx(3))
def test_norm_sq_scales_quadratically(seed, c, z):
    rng = np.random.default_rng(seed)
    m = cp1(3)
    s = random_section(m, rng)
    if abs(c) < 1e-3:
        c = 1.0
    p = m.point(0, z)
    assert norm_sq(m, s.scaled(c), p) == pytest.approx(abs(c) ** 2 * norm_sq(m, s, p), rel=1e-12, abs=1e-300)


@given(seeds)
def test_norm_sq_is_chart_independent(seed):
    rng = np.random.default_rng(seed)
    for model in (cp1(4), quadric(), cp2()):
        s = random_section(model, rng)
        p = random_point(model, rng)
        for ch in range(model.chart_count):
            try:
                q = transition(p, ch)
            except ChartError:
                continue
            assert norm_sq(model, s, q) == pytest.approx(norm_sq(model, s, p), rel=1e-12, abs=1e-300)


# symplectic density and areas

@pytest.mark.parametrize("d", [1, 2, 5])
def test_density_at_origin(d):
    m = cp1(d)
    assert symplectic_density(m, m.point(0, 0.0)) == pytest.approx(d / np.pi, rel=1e-14)


@pytest.mark.parametrize("d", [1, 3])
def test_density_total_by_two_chart_quadrature(d):
    # oracle: polar quadrature of the unit disc in chart 0 and in chart 1
    m = cp1(d)
    tot = 0.0
    for ch in (0, 1):
        f = lambda th, r: symplectic_density(m, m.point(ch, r * np.exp(1j * th))) * r
        tot += integrate.dblquad(f, 0, 1, 0, 2 * np.pi, epsabs=1e-12, epsrel=1e-12)[0]
    assert tot == pytest.approx(d, rel=1e-9)


@pytest.mark.parametrize("model, total", [(cp1(3), 3.0), (quadric(), 2.0), (cp2(), 4.0)])
def test_integrate_density_matches_degree(model, total):
    assert integrate_density(model) == pytest.approx(total, rel=1e-6)


def test_quadric_factor_area_is_one():
    # omega restricted to a slice {y = const} integrates to 1
    q = quadric()
    v0 = 0.3 - 0.2j

    def f(th, r):
        p = q.point(0, (r * np.exp(1j * th), v0))
        W = omega_matrix(q, p)
        return W[0, 2] * r  # omega(d Re u, d Im u)

    val = integrate.dblquad(f, 0, np.inf, 0, 2 * np.pi, epsabs=1e-10, epsrel=1e-10)[0]
    assert val == pytest.approx(1.0, rel=1e-8)


def test_metric_is_compatible_with_omega(rng):
    for model in (cp1(2), quadric(), cp2()):
        p = random_point(model, rng, 0.7)
        n = model.dim
        J = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
        g, W = metric_matrix(model, p), omega_matrix(model, p)
        assert np.allclose(W, -W.T, atol=1e-15)
        assert np.allclose(g, g.T, atol=1e-15)
        assert np.all(np.linalg.eigvalsh(g) > 0)
        # g(u, v) = omega(u, J v)
        assert np.allclose(g, W @ J, atol=1e-14)


@pytest.mark.parametrize("d, r", [(2, 1.0), (3, 0.4), (5, 2.5)])
def test_enclosed_area_of_round_disc(d, r):
    # analytic oracle d r^2 / (1 + r^2); the inscribed polygon converges at second order
    m = cp1(d)
    exact = d * r * r / (1 + r * r)
    err = [abs(enclosed_area(m, circle(m, r, n)) - exact) for n in (400, 800, 1600)]
    assert err[0] / err[1] == pytest.approx(4.0, rel=2e-2)
    assert err[1] / err[2] == pytest.approx(4.0, rel=2e-2)
    assert err[2] < 5e-6 * d


def test_equator_area_is_one_on_o2():
    m = cp1(2)
    quad = integrate.quad(lambda r: symplectic_density(m, m.point(0, r)) * 2 * np.pi * r, 0, 1)[0]
    assert quad == pytest.approx(1.0, abs=1e-12)
    assert enclosed_area(m, circle(m, 1.0, 4000)) == pytest.approx(quad, abs=1e-6)


@given(seeds, st.integers(1, 6))
def test_inner_and_outer_areas_sum_to_degree(seed, d):
    rng = np.random.default_rng(seed)
    m = cp1(d)
    t = np.linspace(0, 2 * np.pi, 300)
    a = rng.standard_normal(3) * 0.15
    r = 0.8 + a[0] * np.cos(t) + a[1] * np.sin(2 * t) + a[2] * np.cos(3 * t)
    c = complex(*rng.standard_normal(2)) * 0.3
    loop = [m.point(0, c + rr * np.exp(1j * tt)) for rr, tt in zip(r, t)]
    loop[-1] = loop[0]
    inner_ = enclosed_area(m, loop)
    outer = enclosed_area(m, loop[::-1])
    assert inner_ + outer == pytest.approx(d, abs=1e-9)
    assert 0 < inner_ < d


def test_open_polyline_is_rejected():
    m = cp1(2)
    pts = circle(m, 1.0)[:-5]
    with pytest.raises(GeometryError):
        enclosed_area(m, pts)


# charts

def test_transition_examples():
    m = cp1(2)
    assert transition(m.point(0, 2.0), 1).affine[0] == pytest.approx(0.5, abs=1e-15)
    assert transition(m.point(0, 1j), 1).affine[0] == pytest.approx(-1j, abs=1e-15)
    with pytest.raises(ChartError):
        transition(m.point(0, 0.0), 1)


def test_quadric_and_cp2_transitions():
    q = quadric()
    p = q.point(0, (2.0, 0.5j))
    assert transition(p, 3).affine == pytest.approx((0.5, -2j), abs=1e-15)
    c = cp2()
    p = c.point(0, (2.0, 4.0))  # [1:2:4]
    assert transition(p, 2).affine == pytest.approx((0.25, 0.5), abs=1e-15)


@given(seeds)
def test_chart_round_trip(seed):
    rng = np.random.default_rng(seed)
    for model in (cp1(3), quadric(), cp2()):
        p = random_point(model, rng)
        q = p
        for ch in list(range(model.chart_count)) + [p.chart]:
            try:
                q = transition(q, ch)
            except ChartError:
                continue
        assert q.chart == p.chart
        assert np.allclose(q.affine, p.affine, rtol=1e-14, atol=1e-14)
        assert chordal_distance(p, q) < 1e-14


def test_complex_jacobian_matches_finite_differences(rng):
    for model in (cp1(1), quadric(), cp2()):
        p = random_point(model, rng, 0.5)
        z = np.array(p.affine)
        dst = (p.chart + 1) % model.chart_count
        J = complex_jacobian(model, p.chart, dst, z)
        h = 1e-6
        for k in range(model.dim):
            e = np.zeros(model.dim, complex)
            e[k] = h
            fp = np.array(transition(model.point(p.chart, tuple(z + e)), dst).affine)
            fm = np.array(transition(model.point(p.chart, tuple(z - e)), dst).affine)
            assert np.allclose((fp - fm) / (2 * h), J[:, k], atol=1e-8)


@given(seeds)
def test_sphere_round_trip(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((20, 3))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    assert np.allclose(to_sphere(from_sphere(X)), X, atol=1e-14)


def test_sphere_poles():
    assert np.allclose(to_sphere(np.array([[1, 0]], complex)), [[0, 0, -1]])
    assert np.allclose(to_sphere(np.array([[0, 1]], complex)), [[0, 0, 1]])

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import seeds
from sbscycles import (
    PreconditionError,
    Section,
    cp1,
    fermat,
    find_critical_points,
    integrate_flow,
    quadric,
    reconstruct_base_sphere,
    trace_separatrices,
)
from sbscycles.critical import solve_quadric_lagrange
from sbscycles.flow import mesh_euler
from sbscycles.geometry import chordal_distance, omega_matrix
from sbscycles.potential import phi, random_section
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


def oracle_flow(coeffs, z0, t_end, sign=-1.0):
    """Gradient flow of -ln|F| + (d/2) ln(1 + |z|^2) in chart 0 with scipy's DOP853."""
    c = np.asarray(coeffs, complex)
    d = len(c) - 1
    F = np.polynomial.Polynomial(c)
    dF = F.deriv()

    def rhs(t, y):
        z = y[0] + 1j * y[1]
        pz = -dF(z) / (2 * F(z)) + 0.5 * d * np.conj(z) / (1 + abs(z) ** 2)
        grad_euc = np.array([2 * pz.real, -2 * pz.imag])
        g = d / np.pi / (1 + abs(z) ** 2) ** 2
        return sign * grad_euc / g

    sol = solve_ivp(rhs, (0, t_end), [z0.real, z0.imag], method="DOP853", rtol=1e-13, atol=1e-14, dense_output=True)
    return sol


def dist_to_curve(p, curve):
    return min(chordal_distance(p, q) for q in curve)


@pytest.mark.parametrize("d", [3, 4])
def test_fermat_real_axis_flow_stays_real(d):
    m = cp1(d)
    s = fermat(m)
    crit = find_critical_points(s)
    tr = integrate_flow(s, m.point(0, 0.9), "descending", criticals=list(crit))
    assert tr.terminus.is_minimum
    assert abs(tr.terminus.location.affine[0]) < 1e-10
    for c, z in zip(tr.charts, tr.coords):
        assert abs(complex(z[0]).imag) < 1e-8


def test_fermat_conic_start_on_critical_circle_is_rejected():
    # z0^2 + z1^2 has antipodal zeros; the real circle through 0.9 is critical
    m = cp1(2)
    with pytest.raises(PreconditionError):
        integrate_flow(fermat(m), m.point(0, 0.9))


def oracle_phi(coeffs, z):
    c = np.asarray(coeffs, complex)
    return -np.log(abs(np.polynomial.Polynomial(c)(z))) + 0.5 * (len(c) - 1) * np.log(1 + abs(z) ** 2)


@pytest.mark.parametrize("coeffs, z0", [([1, 0, 0, 1], 0.5 + 0.3j), ([0.7, -0.2j, 1, 0.4], -0.3 + 0.2j)])
def test_trajectory_lies_on_oracle_curve(coeffs, z0):
    # match samples by potential level on the scipy DOP853 reference
    m = cp1(len(coeffs) - 1)
    s = Section(m, coeffs)
    tr = integrate_flow(s, m.point(0, z0), tau_max=1.0)
    sol = oracle_flow(coeffs, z0, 100.0)
    zt = lambda t: complex(*sol.sol(t))
    pairs = list(zip(tr.points, tr.phis))[:-1]  # the last sample is the captured minimum
    for p, ph in pairs[:: max(1, len(pairs) // 30)]:
        t = brentq(lambda t: oracle_phi(coeffs, zt(t)) - ph, 0.0, sol.t[-1], xtol=1e-15)
        assert chordal_distance(p, m.point(0, zt(t))) < 1e-7


def test_ascending_run_escapes_to_divisor():
    m = cp1(3)
    s = fermat(m)
    zero = np.exp(1j * np.pi / 3)
    tr = integrate_flow(s, m.point(0, 0.9 * zero), "ascending")
    assert tr.terminus == "divisor-escape"
    end = tr.points[-1]
    assert chordal_distance(end, m.point(0, zero)) < 1e-3


def test_reversal_retraces_the_curve():
    m = cp1(3)
    s = Section(m, [0.7, -0.2j, 1, 0.4])
    start = m.point(0, -0.3 + 0.2j)
    down = integrate_flow(s, start, tau_max=1.5)
    # restart halfway in potential; near the minimum the reversed flow is ill-conditioned
    k = int(np.argmin(np.abs(np.array(down.phis) - 0.5 * (down.phis[0] + down.phis[-1]))))
    mid = down.points[k]
    rise = phi(s, start) - phi(s, mid)
    up = integrate_flow(s, mid, "ascending", tau_max=rise)
    assert chordal_distance(up.points[-1], start) < 1e-5
    seg = down.points[: k + 1]
    for p in up.points:
        assert dist_to_curve(p, seg) < 1e-5 + down.max_step()


def test_tolerance_refinement_converges():
    m = cp1(4)
    s = Section(m, [1, 0.3, -0.5j, 0.2, 0.8])
    start = m.point(0, 0.2 + 0.4j)
    a = integrate_flow(s, start, rtol=1e-10, tau_max=1.0)
    b = integrate_flow(s, start, rtol=1e-12, tau_max=1.0)
    c = integrate_flow(s, start, rtol=1e-10, h_max=0.02, tau_max=1.0)
    assert chordal_distance(a.points[-1], b.points[-1]) < 1e-7
    assert chordal_distance(a.points[-1], c.points[-1]) < 1e-7


@settings(max_examples=10)
@given(seeds)
def test_flow_is_monotone_with_bounded_steps(seed):
    rng = np.random.default_rng(seed)
    for model in (cp1(3), quadric()):
        s = random_section(model, rng)
        crit = find_critical_points(s)
        z = tuple(0.3 * (rng.standard_normal(model.dim) + 1j * rng.standard_normal(model.dim)))
        p = model.point(0, z)
        try:
            tr = integrate_flow(s, p, criticals=list(crit), h_max=0.05)
        except PreconditionError:
            continue
        ph = np.diff(tr.phis)
        assert np.all(ph < 0)
        assert tr.max_step() <= 0.05 * (1 + 1e-6) + 1e-4  # the final capture jump is bounded by the linear radius
        assert tr.terminus.is_minimum or tr.terminus.is_saddle


def test_start_at_critical_point_is_rejected():
    m = cp1(3)
    with pytest.raises(PreconditionError):
        integrate_flow(fermat(m), m.point(0, 1.0))


# separatrices

def test_fermat_cubic_separatrices_are_rays():
    m = cp1(3)
    s = fermat(m)
    crit = find_critical_points(s)
    seps, warns = trace_separatrices(s, list(crit))
    assert len(seps) == 6 and not warns
    for sp in seps:
        z = sp.saddle.location.homogeneous[0]
        w = z[1] / z[0]
        w /= abs(w)
        for p in sp.points:
            h = p.homogeneous[0]
            assert abs((np.conj(w) * h[1] * np.conj(h[0])).imag) < 1e-7
        assert sp.sink.is_minimum
        assert chordal_distance(sp.points[-1], sp.sink.location) < 1e-6
        # initial tangent follows the negative eigenvector
        v = sp.saddle.neg_eigenvectors[0].components
        t0 = sp.end_tangents[0].components
        cos = abs(v @ t0) / np.linalg.norm(v) / np.linalg.norm(t0)
        assert cos > 1 - 1e-8
    # one branch of each saddle ends at [1:0], the other at [0:1]
    assert sorted(round(abs(sp.sink.location.homogeneous[0][0])) for sp in seps) == [0, 0, 0, 1, 1, 1]


def test_generic_conic_separatrices_end_at_minimum():
    m = cp1(2)
    s = Section(m, [1, 0.5 + 0.2j, -0.3])
    crit = find_critical_points(s)
    seps, _ = trace_separatrices(s, list(crit))
    assert len(seps) == 2
    assert all(sp.sink is crit.minima[0] for sp in seps)


def test_double_zero_has_no_separatrices():
    m = cp1(2)
    s = Section(m, [1, 0, 0])
    seps, warns = trace_separatrices(s, list(find_critical_points(s)))
    assert seps == [] and warns == []


# the quadric sphere

def test_diagonal_quadric_sphere():
    alpha = np.diag([1.0, 0.5]).astype(complex)
    for n in (64, 256):
        M = reconstruct_base_sphere(alpha, n_theta=n)
        assert M.closed and M.euler_characteristic == 2
        assert M.omega_residual <= 1e-5
        assert M.isotropy <= 1e-8
        assert M.min_norm_sq > 0


def test_perturbed_identity_sphere():
    rng = np.random.default_rng(5)
    alpha = np.eye(2) + 1e-2 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    M = reconstruct_base_sphere(alpha, n_theta=64)
    assert M.closed and M.euler_characteristic == 2
    assert M.omega_residual <= 1e-5


def test_sphere_pulls_back_omega_to_zero_on_triangles():
    # an independent check: omega on the two edges of each triangle, relative to their size
    alpha = np.array([[1.0, 0.3j], [-0.2, 0.6]])
    M = reconstruct_base_sphere(alpha, n_theta=64)
    q = quadric()
    verts = M.vertices
    worst = 0.0
    for tri in M.triangles[:: max(1, len(M.triangles) // 200)]:
        a, b, c = (verts[i] for i in tri)
        ch = a.chart
        try:
            from sbscycles.geometry import transition

            zb, zc = np.array(transition(b, ch).affine), np.array(transition(c, ch).affine)
        except Exception:
            continue
        za = np.array(a.affine)
        e1, e2 = zb - za, zc - za
        u = np.concatenate([e1.real, e1.imag])
        v = np.concatenate([e2.real, e2.imag])
        W = omega_matrix(q, q.point(ch, tuple((za + zb + zc) / 3)))
        size = np.sqrt(abs(np.linalg.det(np.array([[u @ u, u @ v], [u @ v, v @ v]]))))
        if size > 1e-12:
            worst = max(worst, abs(u @ W @ v) / size)
    # triangles are flat chords of a curved Lagrangian: the defect is second order in the mesh size
    assert worst < 5e-3


def test_rank_one_quadric_has_no_sphere():
    with pytest.raises(PreconditionError):
        reconstruct_base_sphere(np.array([[1, 0], [0, 0]], complex))


def test_identity_quadric_needs_perturbation():
    with pytest.raises(PreconditionError):
        reconstruct_base_sphere(np.eye(2, dtype=complex))


def test_mesh_euler_examples():
    tet = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    assert mesh_euler(tet, 4) == (2, True)
    assert mesh_euler(tet[:3], 4) == (1, False)


def test_saddle_of_sphere_is_the_lagrange_saddle():
    alpha = np.diag([1.0, 0.5]).astype(complex)
    _, crits = solve_quadric_lagrange(alpha)
    sd = next(c for c in crits if c.morse_index == 2)
    M = reconstruct_base_sphere(alpha, n_theta=64)
    assert chordal_distance(M.vertices[0], sd.location) < 1e-12

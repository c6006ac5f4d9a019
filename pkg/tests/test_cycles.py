import numpy as np
import pytest
from hypothesis import given, settings

from conftest import seeds
from sbscycles import (
    FamilySpec,
    Section,
    StabilityError,
    count_sbs,
    cp1,
    cycle_distance,
    fermat,
    quadric,
    scan_moduli,
    verify_cycle,
    verify_parametrized,
)
from sbscycles.cycles import meridian_cycle, preset
from sbscycles.geometry import symplectic_density
from sbscycles.potential import random_section
from scipy import integrate


def sector_area(d, angle):
    """Symplectic area of a sector {0 < arg z < angle} by quadrature of the density."""
    m = cp1(d)
    f = lambda th, r: symplectic_density(m, m.point(0, r)) * r  # rotation invariant
    return integrate.dblquad(f, 0, np.inf, 0, angle, epsabs=1e-12, epsrel=1e-12)[0]


@pytest.fixture(scope="module")
def fermat3():
    return count_sbs(fermat(cp1(3)))


@pytest.fixture(scope="module")
def fermat4():
    return count_sbs(fermat(cp1(4)))


def test_fermat_cubic_has_three_cycles(fermat3):
    assert fermat3.count == 3
    oracle = sector_area(3, 2 * np.pi / 3)
    assert oracle == pytest.approx(1.0, abs=1e-9)
    for c in fermat3.certified:
        assert len(c.corners) == 2 and not c.smooth
        assert c.enclosed_area == pytest.approx(oracle, abs=1e-4)
        assert c.calibration_residual <= 1e-6
        assert abs(c.loop_integral) <= 1e-6
        assert c.chain_gap() <= 1e-6
        assert c.min_norm_sq > 0


def test_fermat_quartic_areas(fermat4):
    # adjacent rays cut a sector of area 1; opposite rays split the sphere 2 + 2
    assert fermat4.count == 6
    areas = sorted(round(c.enclosed_area, 6) for c in fermat4.certified)
    assert sector_area(4, np.pi / 2) == pytest.approx(1.0, abs=1e-9)
    assert sector_area(4, np.pi) == pytest.approx(2.0, abs=1e-9)
    assert areas == [1.0, 1.0, 1.0, 1.0, 2.0, 2.0]
    # the two straight lines through the poles are smooth
    assert sorted(c.smooth for c in fermat4.certified) == [False] * 4 + [True] * 2


def test_generic_conic_has_one_cycle():
    r = count_sbs(Section(cp1(2), [1, 0.5 + 0.2j, -0.3]))
    assert r.count == 1
    assert r.certified[0].enclosed_area == pytest.approx(1.0, abs=1e-4)


def test_double_zero_has_no_cycle():
    assert count_sbs(Section(cp1(2), [1, 0, 0])).count == 0


def test_antipodal_conic_gives_critical_circle():
    r = count_sbs(Section(cp1(2), [0, 1, 0]))
    assert r.count == 1
    c = r.certified[0]
    assert c.kind == "critical-circle"
    assert c.enclosed_area == pytest.approx(1.0, abs=1e-4)


@settings(max_examples=8)
@given(seeds)
def test_degree_one_has_no_cycles(seed):
    s = random_section(cp1(1), np.random.default_rng(seed))
    r = count_sbs(s)
    assert r.count == 0 and not r.errors


def test_meridian_is_not_stable():
    m = cp1(2)
    with pytest.raises(StabilityError):
        verify_cycle(Section(m, [0, 1, 0]), meridian_cycle())
    s, sampler = preset("meridian")
    assert not verify_parametrized(s, sampler).stable


@pytest.mark.parametrize("name", ["s0", "rp2"])
def test_parametrized_presets_are_sbs(name):
    s, sampler = preset(name)
    rep = verify_parametrized(s, sampler, n=200)
    assert rep.stable
    assert rep.lagrangian_residual <= 1e-8
    assert rep.sbs_residual <= 1e-8
    assert rep.gradient_residual <= 1e-8


def test_perturbation_breaks_s0_linearly():
    r1 = verify_parametrized(*preset("s0", 1e-2, seed=4))
    r2 = verify_parametrized(*preset("s0", 2e-2, seed=4))
    assert r1.sbs_residual > 1e-3
    assert r2.sbs_residual / r1.sbs_residual == pytest.approx(2.0, rel=0.05)


def test_quadric_counts():
    assert count_sbs(Section(quadric(), np.diag([1.0, 0.5]))).count == 1
    assert count_sbs(Section(quadric(), np.outer([1, 2], [1, -1]))).count == 0
    r = count_sbs(Section(quadric(), np.eye(2)))
    assert r.count == 1 and r.certified[0].kind == "critical-manifold"


def test_scaling_leaves_cycles_unchanged(fermat3):
    r = count_sbs(fermat(cp1(3)).scaled(2.5 - 1.5j))
    assert r.count == fermat3.count
    # the lines are resampled in other charts; chords of length h differ by h^2 / 8
    for c in fermat3.certified:
        e = min(r.certified, key=lambda e: cycle_distance(c, e))
        assert cycle_distance(c, e) < 1e-4
        assert e.enclosed_area == pytest.approx(c.enclosed_area, abs=1e-6)


def test_cycle_distance_is_symmetric_and_zero_on_self(fermat3):
    a, b = fermat3.certified[:2]
    assert cycle_distance(a, a) < 1e-12
    assert cycle_distance(a, b) == pytest.approx(cycle_distance(b, a), abs=1e-15)
    assert cycle_distance(a, b) > 0.1


def test_sample_refinement_does_not_change_certificates(fermat3):
    c = fermat3.certified[0]
    area, res = c.enclosed_area, c.calibration_residual
    verify_cycle(fermat(cp1(3)), c, min_samples=3000)
    assert c.enclosed_area == pytest.approx(area, abs=1e-8)
    assert c.calibration_residual <= max(2 * res, 1e-9)


def test_random_cubic_scan_is_deterministic():
    fam = FamilySpec("cp1", degree=3, samples=4, seed=11)
    a = scan_moduli(fam)
    b = scan_moduli(fam, threads=2)
    assert a.counts == b.counts == [3, 3, 3, 3]
    assert a.histogram == {3: 4} and a.invariant
    assert a.discriminants == b.discriminants


def test_path_to_antipodal_conic():
    fam = FamilySpec("cp1", degree=2, family="path", samples=4, start=[1, 0.5, -0.3], end=[0, 1, 0])
    r = scan_moduli(fam)
    assert r.counts == [1, 1, 1, 1]
    assert r.classifications[-1] == "antipodal"
    assert r.classifications[0] == "generic"


def test_quadric_scan():
    r = scan_moduli(FamilySpec("quadric", samples=3, seed=2))
    assert r.counts == [1, 1, 1]


def face_bipartitions(lines, max_cut=4):
    """Count face bipartitions with a connected side and at most ``max_cut`` cut lines."""
    from sbscycles.cycles import _components

    edges = [(ln.faces["left"], ln.faces["right"]) for ln in lines]
    faces = sorted({f for e in edges for f in e})
    count = 0
    for mask in range(1, 2 ** (len(faces) - 1)):
        A = {faces[k] for k in range(len(faces)) if mask >> k & 1}
        B = set(faces) - A
        if sum((a in A) != (b in A) for a, b in edges) > max_cut:
            continue
        conn = lambda X: _components(sorted(X), [e for e in edges if e[0] in X and e[1] in X]) == 1
        count += conn(A) or conn(B)
    return count


@pytest.mark.parametrize("index, expected", [(0, 6), (5, 7)])
def test_quartic_counts_follow_face_bipartitions(index, expected):
    # a quartic whose basin graph is a star admits a seventh disc; the count is not d(d-1)/2
    s = FamilySpec("cp1", degree=4, samples=6, seed=3).sections()[index]
    r = count_sbs(s)
    assert r.count == expected
    assert face_bipartitions(r.lines) == expected
    for c in r.certified:
        assert 1 <= round(c.enclosed_area) <= 3
        assert c.area_defect <= 1e-4

"""Acceptance suite: one PASS/FAIL line per criterion.

Each test records ``CRITERION n: PASS|FAIL | detail | time`` and fails when a
tolerance is missed.  Runtime budgets are printed for information only.  The
collected lines are repeated in the terminal summary by ``conftest.py``.
"""

import time

import numpy as np
import pytest

from sbscycles import (
    FamilySpec,
    Section,
    count_sbs,
    cp1,
    cp2,
    cycle_distance,
    detect_degenerate,
    fermat,
    find_critical_points,
    quadric,
    reconstruct_base_sphere,
    section_is_generic,
    solve_quadric_lagrange,
    verify_parametrized,
)
from sbscycles.cycles import preset
from sbscycles.geometry import omega_matrix
from sbscycles.potential import im_rho, path_integral_re_rho, phi, random_section

RESULTS: dict = {}
REPORTS: list = []  # every count_sbs report produced here
CRITICALS: list = []  # (model dimension, critical point) for every isolated point found here

SEED = 20240611


def record(n, ok, detail, t0, budget):
    dt = time.perf_counter() - t0
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'} | {detail} | {dt:.1f} s (budget {budget})"
    RESULTS[n] = line
    print(line)
    assert ok, line


def run(s, **kw):
    r = count_sbs(s, **kw)
    REPORTS.append(r)
    CRITICALS.extend((s.model.dim, c) for c in r.critical_points)
    return r


def inventory(s):
    inv = find_critical_points(s)
    CRITICALS.extend((s.model.dim, c) for c in inv)
    return inv


def chordal_to(p, hom):
    b = np.asarray(hom, complex) / np.linalg.norm(hom)
    a = p.homogeneous[0]
    return float(np.linalg.norm(a - b * np.vdot(b, a)))


@pytest.fixture(scope="module")
def fermat_reports():
    return {d: run(fermat(cp1(d))) for d in (2, 3, 4, 5)}


def generic_cubics(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        s = random_section(cp1(3), rng)
        g = section_is_generic(s)
        if g.classification == "generic" and g.discriminant >= 1e-3:
            out.append(s)
    return out


def away_from_divisor(s, rng, scale=0.7):
    m = s.model
    while True:
        ch = int(rng.integers(m.chart_count))
        z = scale * (rng.standard_normal(m.dim) + 1j * rng.standard_normal(m.dim))
        p = m.point(ch, tuple(z))
        if abs(phi(s, p)) < 6:
            return p


def test_criterion_01_fermat_inventory():
    t0 = time.perf_counter()
    bad, slow = [], []
    for d in range(2, 7):
        t = time.perf_counter()
        inv = inventory(fermat(cp1(d)))
        if time.perf_counter() - t > 2:
            slow.append(d)
        roots = [np.exp(2j * np.pi * k / d) for k in range(d)]
        mins, sads = inv.minima, inv.saddles
        ok = (len(mins) == 2 and len(sads) == d
              and min(chordal_to(c.location, [1, 0]) for c in mins) < 1e-8
              and min(chordal_to(c.location, [0, 1]) for c in mins) < 1e-8
              and all(min(chordal_to(c.location, [1, r]) for r in roots) < 1e-8 for c in sads))
        if not ok:
            deg = f", {len(inv.degenerate_points)} points on a degenerate critical set" if inv.degenerate_points else ""
            bad.append(f"d={d}: {len(mins)} minima, {len(sads)} saddles{deg}")
    detail = "; ".join(bad) if bad else "d=2..6 located within 1e-8"
    if slow:
        detail += f"; over 2 s for d={slow}"
    record(1, not bad, detail, t0, "2 s per d")


def test_criterion_02_cycle_counts(fermat_reports):
    t0 = time.perf_counter()
    counts = {d: fermat_reports[d].count for d in (2, 3, 4, 5)}
    ok = counts == {2: 1, 3: 3, 4: 6, 5: 10}
    t1 = time.perf_counter()
    random_counts = [run(s).count for s in generic_cubics(100, SEED)]
    scan_time = time.perf_counter() - t1
    hist = {c: random_counts.count(c) for c in sorted(set(random_counts))}
    ok = ok and hist == {3: 100}
    record(2, ok, f"Fermat counts {counts}; 100 generic cubics {hist}; scan {scan_time:.1f} s", t0, "60 s scan")


def test_criterion_03_smoothness(fermat_reports):
    t0 = time.perf_counter()

    def smooth(c):
        return all(a <= 1e-3 for _, a in c.corners)

    n_smooth = {d: sum(smooth(c) for c in fermat_reports[d].certified) for d in (2, 3, 4, 5)}
    ok = n_smooth[2] >= 1 and n_smooth[4] >= 1 and n_smooth[3] == 0 and n_smooth[5] == 0
    record(3, ok, f"smooth certified cycles per degree {n_smooth}", t0, "5 s")


def test_criterion_04_conic_trichotomy():
    t0 = time.perf_counter()
    m = cp1(2)
    double = run(Section(m, [1, 0, 0])).count
    distinct = run(Section(m, [1, 0.5 + 0.2j, -0.3])).count
    deg = detect_degenerate(Section(m, [0, 1, 0]))
    ok = double == 0 and distinct == 1 and deg.dimension == 1
    record(4, ok, f"double zero {double}, distinct zeros {distinct}, antipodal critical set dim {deg.dimension}",
           t0, "5 s")


def test_criterion_05_degree_one_is_empty():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    counts = [run(random_section(cp1(1), rng)).count for _ in range(20)]
    record(5, max(counts) == 0, f"20 sections, total certified {sum(counts)}", t0, "5 s")


MODELS = {"cp1(3)": cp1(3), "quadric": quadric(), "cp2": cp2()}


def test_criterion_07_rho_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst_curl, worst_path = 0.0, 0.0
    # fourth-order stencil: the central one leaves h^2 truncation near the divisor
    h = 1e-4
    for name, m in MODELS.items():
        n = m.dim
        for k in range(100):
            s = random_section(m, rng)
            p = away_from_divisor(s, rng)
            z = np.array(p.affine)
            f = lambda dz: im_rho(s, m.point(p.chart, tuple(z + dz)))
            D = np.zeros((2 * n, 2 * n))
            for j in range(2 * n):
                e = np.zeros(n, complex)
                e[j % n] = h if j < n else 1j * h
                D[:, j] = (8 * (f(e) - f(-e)) - (f(2 * e) - f(-2 * e))) / (12 * h)
            W = 2 * np.pi * omega_matrix(m, p)
            worst_curl = max(worst_curl, np.abs(D.T - D - W).max() / np.abs(W).max())
            # straight chart path to a nearby point
            w = z + 0.2 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
            path = [m.point(p.chart, tuple(z + t * (w - z))) for t in np.linspace(0, 1, 21)]
            try:
                vals = [phi(s, q) for q in path]
            except Exception:
                continue
            if max(abs(v) for v in vals) > 6:
                continue
            worst_path = max(worst_path, abs(path_integral_re_rho(s, path) + vals[-1] - vals[0]))
    ok = worst_curl <= 1e-5 and worst_path <= 1e-8
    record(7, ok, f"curl relative error {worst_curl:.1e}, Re rho path error {worst_path:.1e}", t0, "10 s")


def test_criterion_09_quadric_trichotomy():
    t0 = time.perf_counter()
    notes, ok = [], True
    system, crits = solve_quadric_lagrange(np.eye(2), samples=50, rng=np.random.default_rng(SEED))
    dev = 0.0
    for sol in system.solutions:
        # (x, y) is a point of P1 x P1, so each factor carries its own phase
        ph = np.vdot(np.conj(sol.x), sol.y)
        dev = max(dev, np.linalg.norm(sol.y - np.conj(sol.x) * ph / abs(ph)))
    ok &= system.degenerate and len(system.solutions) == 50 and dev <= 1e-8 and not crits
    notes.append(f"identity: {len(system.solutions)} solutions, |y - conj x| {dev:.1e}")
    r1 = run(Section(quadric(), np.array([[1, 0], [0, 0]], complex)))
    ok &= len(r1.critical_points) == 1 and r1.count == 0
    notes.append(f"rank 1: {len(r1.critical_points)} point, {r1.count} cycles")
    bad = 0
    for s in FamilySpec("quadric", samples=50, seed=SEED).sections():
        r = run(s)
        idx = sorted(c.morse_index for c in r.critical_points)
        spheres = [c for c in r.certified if c.kind == "sphere"]
        bad += not (idx == [0, 2] and r.count == 1 and len(spheres) == 1)
    ok &= bad == 0
    notes.append(f"generic: {50 - bad}/50 with indices (0, 2) and one sphere")
    record(9, ok, "; ".join(notes), t0, "90 s")


def test_criterion_10_base_sphere():
    t0 = time.perf_counter()
    M = reconstruct_base_sphere(np.diag([1.0, 0.5]).astype(complex))
    ok = M.closed and M.euler_characteristic == 2 and M.omega_residual <= 1e-5 and M.isotropy <= 1e-8
    detail = (f"closed {M.closed}, chi {M.euler_characteristic}, omega residual {M.omega_residual:.1e}, "
              f"isotropy {M.isotropy:.1e}")
    record(10, ok, detail, t0, "30 s")


def test_criterion_11_parametrized():
    t0 = time.perf_counter()
    s0 = verify_parametrized(*preset("s0"))
    rp2 = verify_parametrized(*preset("rp2"), n=200)
    mer = verify_parametrized(*preset("meridian"))
    ok = s0.sbs_residual <= 1e-8 and rp2.gradient_residual <= 1e-8 and not mer.stable
    detail = (f"S0 sbs residual {s0.sbs_residual:.1e}; RP2 gradient residual {rp2.gradient_residual:.1e}; "
              f"meridian stable {mer.stable}")
    record(11, ok, detail, t0, "10 s")


def perturbed(s, rng, eps=1e-4):
    c = np.asarray(s.coefficients, complex)
    d = rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape)
    return Section(s.model, c + eps * np.linalg.norm(c) * d / np.linalg.norm(d))


def test_criterion_12_stability():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    cases = {f"Fermat d={d}": fermat(cp1(d)) for d in (3, 4, 5)}
    cases["O(2) distinct zeros"] = Section(cp1(2), [1, 0.5 + 0.2j, -0.3])
    for k, s in enumerate(generic_cubics(3, SEED + 1)):
        cases[f"random cubic {k}"] = s
    cases["quadric diag(1, 1/2)"] = Section(quadric(), np.diag([1.0, 0.5]))
    cases["random quadric"] = random_section(quadric(), rng)
    bad, worst = [], 0.0
    for name, s in cases.items():
        # sphere meshes are compared at 32 x 24: vertex-to-chord distances of two
        # meshes fall as the square of the edge length (1.2e-2 at 16 x 12, 3.2e-3 here)
        kw = {"sphere_directions": 32, "sphere_rings": 24} if s.model.kind == "Quadric" else {}
        a, b = run(s, **kw), run(perturbed(s, rng), **kw)
        if a.count != b.count:
            bad.append(f"{name}: {a.count} -> {b.count}")
            continue
        for c in a.certified:
            dist = min(cycle_distance(c, e) for e in b.certified)
            worst = max(worst, dist)
            if dist > 1e-2:
                bad.append(f"{name}: cycle moved {dist:.1e}")
    detail = f"{len(cases)} sections, worst Hausdorff move {worst:.1e}"
    if bad:
        detail += "; " + "; ".join(bad)
    record(12, not bad, detail, t0, "none stated")


# run last: these audit everything collected above


def test_criterion_06_certificates(fermat_reports):
    t0 = time.perf_counter()
    cycles = [c for r in REPORTS for c in r.certified]
    worst_cal = max(c.calibration_residual for c in cycles)
    # spheres are simply connected and carry no area condition
    worst_area = max(c.area_defect for c in cycles if c.kind != "sphere")
    adjacent = [c.enclosed_area for c in fermat_reports[3].certified]
    ok = worst_cal <= 1e-6 and worst_area <= 1e-4 and all(abs(a - 1) <= 1e-4 for a in adjacent)
    detail = (f"{len(cycles)} certified cycles, worst calibration {worst_cal:.1e}, worst area defect "
              f"{worst_area:.1e}; Fermat d=3 areas {[round(a, 6) for a in adjacent]}")
    record(6, ok, detail, t0, "none stated")


def test_criterion_08_morse_index_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    for m in (cp1(4), quadric(), cp2()):
        for _ in range(10):
            inventory(random_section(m, rng))
    violations = sum(c.morse_index > n for n, c in CRITICALS)
    # the index must also be the actual count of negative Hessian eigenvalues
    mismatched = sum(int(np.sum(c.eigenvalues < 0)) != c.morse_index for _, c in CRITICALS)
    ok = violations == 0 and mismatched == 0 and len(CRITICALS) > 0
    record(8, ok, f"{len(CRITICALS)} critical points, {violations} index violations, {mismatched} index mismatches",
           t0, "none stated")

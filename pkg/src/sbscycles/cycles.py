"""Assembly, verification and counting of special Bohr-Sommerfeld cycles.

On CP1 a candidate cycle is a closed chain of separatrix lines (a line is the
pair of branches through one saddle).  A set of lines is accepted when every
minimum it touches has even degree, the chain is connected, and it bounds a
disc: colouring the basins of the zeros so that the colour flips across chain
lines, one colour class must be connected through the remaining lines.  The
disc boundary may touch itself at a minimum (an immersed loop with corners);
there the branch ends are paired around the sectors on the disc side.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import make_interp_spline

from .critical import (
    CriticalPoint,
    _null_space,
    detect_degenerate,
    find_critical_points,
    projector_features,
    section_is_generic,
    solve_quadric_lagrange,
)
from .errors import (
    IntegrationError,
    PreconditionError,
    ReconstructionError,
    SBSError,
    StabilityError,
    UnsupportedModelError,
)
from .flow import Separatrix, ascend_to_divisor, reconstruct_base_sphere, trace_separatrices
from .geometry import (
    ProjPoint,
    cp1,
    cp2,
    enclosed_area_hom,
    from_sphere,
    kahler_terms,
    metric_from_H,
    omega_from_H,
    quadric,
    to_sphere,
)
from .potential import Section, derivatives, im_rho_covector, random_section, riemannian_gradient

log = logging.getLogger(__name__)

SMOOTH_TOL = 1e-3
MAX_CHAIN = 4
CALIBRATION_TOL = 1e-6
AREA_TOL = 1e-4
LOOP_TOL = 1e-6
CHAIN_TOL = 1e-6
MIN_SAMPLES = 1000
LAGRANGIAN_TOL = 1e-5
NEAR_DISCRIMINANT = 1e-3
# node spacing of traced separatrices; the dense resampling interpolates between them
SEPARATRIX_H_MAX = 0.01


# ---------------------------------------------------------------------------
# data types

@dataclass(eq=False)
class SeparatrixLine:
    """Both branches through one index-1 saddle and the zeros on either side.

    ``faces`` maps 'left'/'right' (relative to the +1 branch direction at the
    saddle) to an index into the list of zeros, or None when unknown.
    """

    saddle: CriticalPoint
    halves: dict
    faces: dict

    def sink(self, branch: int) -> CriticalPoint:
        return self.halves[branch].sink

    def outward_left_face(self, branch: int):
        # traversal saddle -> sink runs along branch * v; the outward direction
        # at the sink is reversed, so its left side is the traversal's right
        if branch == 1:
            return self.faces.get("right")
        return self.faces.get("left")

    def outward_right_face(self, branch: int):
        if branch == 1:
            return self.faces.get("left")
        return self.faces.get("right")


@dataclass(eq=False)
class SBSCycle:
    """A candidate cycle with its certificates.

    ``segments`` is the ordered list of separatrix branches and
    ``orientations[k]`` is +1 when segment k is run from saddle to sink and
    -1 otherwise.  Cycles made of critical points (circles or spheres of a
    degenerate critical set) keep their samples in ``samples``.
    """

    segments: list = field(default_factory=list)
    orientations: list = field(default_factory=list)
    corners: list = field(default_factory=list)
    calibration_residual: float = math.nan
    enclosed_area: float = math.nan
    area_defect: float = math.nan
    loop_integral: float = math.nan
    smooth: bool = False
    kind: str = "chain"
    samples: list | None = None
    frames: list | None = None
    mesh: object = None
    lines: tuple = ()
    certified: bool = False
    min_norm_sq: float = math.nan
    lagrangian_residual: float = math.nan
    n_samples: int = 0
    failure: str = ""

    def polyline(self) -> list:
        """Closed polyline of ProjPoints (first point repeated at the end)."""
        if self.kind == "chain":
            pts = []
            for sp, o in zip(self.segments, self.orientations):
                seg = sp.trajectory.points if o > 0 else sp.trajectory.points[::-1]
                pts.extend(seg if not pts else seg[1:])
            return pts
        if self.samples is None:
            return []
        pts = list(self.samples)
        if self.kind in ("critical-circle", "curve") and pts and pts[0] is not pts[-1]:
            pts.append(pts[0])
        return pts

    @property
    def vertices(self) -> list:
        return [c for c, _ in self.corners]

    def chain_gap(self) -> float:
        """Largest distance between consecutive segment endpoints."""
        if self.kind != "chain" or not self.segments:
            return 0.0
        from .geometry import chordal_distance

        ends = []
        for sp, o in zip(self.segments, self.orientations):
            pts = sp.trajectory.points
            ends.append((pts[0], pts[-1]) if o > 0 else (pts[-1], pts[0]))
        gap = 0.0
        for k in range(len(ends)):
            gap = max(gap, chordal_distance(ends[k][1], ends[(k + 1) % len(ends)][0]))
        return gap


@dataclass(eq=False)
class VerificationReport:
    section: Section
    genericity: object
    inventory: object
    separatrices: list
    lines: list
    cycles: list
    warnings: list
    degeneracy: object = None
    errors: list = field(default_factory=list)

    @property
    def certified(self) -> list:
        return [c for c in self.cycles if c.certified]

    @property
    def count(self) -> int:
        return len(self.certified)

    @property
    def critical_points(self) -> list:
        return list(self.inventory.points) if self.inventory is not None else []


@dataclass(eq=False)
class FamilySpec:
    """Random or one-parameter family of sections."""

    kind: str
    degree: int | None = None
    family: str = "random"
    samples: int = 10
    seed: int = 0
    ensemble: str = "gaussian"
    start: object = None
    end: object = None
    near: float = NEAR_DISCRIMINANT

    def model(self):
        return {"cp1": lambda: cp1(self.degree), "quadric": quadric, "cp2": cp2}[self.kind.lower()]()

    def sections(self) -> list:
        m = self.model()
        if self.family == "random":
            rng = np.random.default_rng(self.seed)
            return [random_section(m, rng, self.ensemble) for _ in range(self.samples)]
        if self.family == "path":
            if self.start is None or self.end is None:
                raise PreconditionError("path family needs start and end coefficients")
            a = np.asarray(self.start, dtype=complex)
            b = np.asarray(self.end, dtype=complex)
            ts = np.linspace(0.0, 1.0, self.samples)
            return [Section(m, (1 - t) * a + t * b) for t in ts]
        raise PreconditionError(f"unknown family {self.family!r}")


@dataclass(eq=False)
class ScanReport:
    family: FamilySpec
    counts: list
    classifications: list
    discriminants: list
    near_discriminant: list
    failures: dict
    reports: list = field(default_factory=list, repr=False)

    @property
    def histogram(self) -> dict:
        h = {}
        for i, c in enumerate(self.counts):
            if c is None or i in self.near_discriminant or self.classifications[i] != "generic":
                continue
            h[c] = h.get(c, 0) + 1
        return dict(sorted(h.items()))

    @property
    def invariant(self) -> bool:
        return len(self.histogram) <= 1


# ---------------------------------------------------------------------------
# lines and faces

def _nearest_zero(zeros: list, p: ProjPoint) -> int:
    h = p.homogeneous[0]
    return int(np.argmax([abs(np.vdot(z, h)) for z, _ in zeros]))


def separatrix_lines(s: Section, separatrices, warnings=None, faces: bool = True) -> list:
    """Group branches by saddle; attach the zeros on the two sides (CP1)."""
    warnings = warnings if warnings is not None else []
    by_saddle = {}
    for sp in separatrices:
        by_saddle.setdefault(id(sp.saddle), (sp.saddle, {}))[1][sp.branch] = sp
    zeros = s.zeros() if (faces and s.model.kind == "CP1") else None
    lines = []
    for saddle, halves in by_saddle.values():
        if set(halves) != {1, -1}:
            warnings.append(f"saddle at {saddle.location.affine} has an incomplete separatrix line")
            continue
        fc = {}
        if zeros is not None and saddle.pos_eigenvectors:
            v = saddle.neg_eigenvectors[0].complex[0]
            w = saddle.pos_eigenvectors[0]
            left_sign = 1.0 if (np.conj(v) * w.complex[0]).imag > 0 else -1.0
            for sign, side in ((left_sign, "left"), (-left_sign, "right")):
                try:
                    end = ascend_to_divisor(s, saddle, w, sign)
                    fc[side] = _nearest_zero(zeros, end)
                except (IntegrationError, StabilityError) as exc:
                    warnings.append(f"face ascent from saddle failed: {exc}")
                    fc[side] = None
        lines.append(SeparatrixLine(saddle, halves, fc))
    return lines


# ---------------------------------------------------------------------------
# assembly

def _components(nodes, edges) -> int:
    parent = {x: x for x in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        parent[find(a)] = find(b)
    return len({find(x) for x in nodes})


def _disc_colour(lines, T):
    """Colouring of zero basins and the colour of the disc side, or None.

    Returns (colour dict, disc colour) with disc colour None when neither
    class is connected through non-chain lines; returns None when the faces
    are unknown and "inconsistent" when no 2-colouring exists.
    """
    edges = []
    for i, ln in enumerate(lines):
        a, b = ln.faces.get("left"), ln.faces.get("right")
        if a is None or b is None:
            return None
        edges.append((a, b, i in T))
    faces = {f for a, b, _ in edges for f in (a, b)}
    colour = {}
    for root in sorted(faces):
        if root in colour:
            continue
        colour[root] = 0
        stack = [root]
        while stack:
            x = stack.pop()
            for a, b, t in edges:
                if x not in (a, b):
                    continue
                y = b if x == a else a
                c = colour[x] ^ int(t)
                if y in colour:
                    if colour[y] != c:
                        return "inconsistent"
                else:
                    colour[y] = c
                    stack.append(y)
    for c in (0, 1):
        cls = [f for f in faces if colour[f] == c]
        if not cls:
            continue
        inner = [(a, b) for a, b, t in edges if not t and colour[a] == c]
        if _components(cls, inner) == 1:
            return colour, c
    return colour, None


def _end_angle(sp: Separatrix) -> float:
    t = sp.end_tangents[1].complex[0]
    return float(np.angle(t))


def _order_angle(sp: Separatrix, level: float) -> float:
    """Angle, seen from the sink, where the branch crosses phi = level.

    Branches may enter a minimum tangent to one another; their crossing
    points with a low level curve around the minimum still separate them and
    have the same cyclic order as the branches.
    """
    from .geometry import transition

    tr = sp.trajectory
    ph = np.asarray(tr.phis)
    idx = np.nonzero(ph >= level)[0]
    k = int(idx.max()) if len(idx) else 0
    k = min(k, len(ph) - 2)
    a, b = ph[k], ph[k + 1]
    w = 0.0 if a == b else (a - level) / (a - b)
    sink = sp.sink.location
    from .geometry import model_of

    model = model_of(tr.kind)
    pa = transition(model.point(tr.charts[k], tr.coords[k]), sink.chart, model)
    pb = transition(model.point(tr.charts[k + 1], tr.coords[k + 1]), sink.chart, model)
    z = (1 - w) * pa.z + w * pb.z
    return float(np.angle(z[0] - sink.z[0]))


def _face_orders(lines, ends, limit: int = 64) -> list:
    """Cyclic orders of all ends at a vertex that are consistent with the faces.

    Going counterclockwise, the sector after an end is the face on its left,
    which must be the face on the right of the next end.
    """
    L = {e: lines[e[0]].outward_left_face(e[1]) for e in ends}
    R = {e: lines[e[0]].outward_right_face(e[1]) for e in ends}
    if any(v is None for v in L.values()) or any(v is None for v in R.values()):
        return []
    start = ends[0]
    out = []

    def walk(seq, used):
        if len(out) >= limit:
            return
        if len(seq) == len(ends):
            if R[start] == L[seq[-1]]:
                out.append(list(seq))
            return
        for e in ends:
            if e not in used and R[e] == L[seq[-1]]:
                used.add(e)
                seq.append(e)
                walk(seq, used)
                seq.pop()
                used.discard(e)

    walk([start], {start})
    return out


def _cyclic_order(lines, vertex, T, level):
    """Counterclockwise order of the chain ends at ``vertex``."""
    ends = [(i, b) for i in range(len(lines)) for b in (1, -1) if lines[i].sink(b) is vertex]
    in_T = [e for e in ends if e[0] in T]
    pos = {e: _order_angle(lines[e[0]].halves[e[1]], level) for e in ends}
    orders = _face_orders(lines, ends)
    if len(orders) > 1:
        # several face-consistent orders: keep the one closest to the geometry
        geo = sorted(ends, key=lambda e: pos[e])
        rank = {e: k for k, e in enumerate(geo)}

        def disagreement(order):
            r = [rank[e] for e in order]
            k0 = r.index(0)
            r = r[k0:] + r[:k0]
            return sum(a > b for a, b in zip(r[:-1], r[1:]))

        orders = [min(orders, key=disagreement)]
    if orders:
        return [e for e in orders[0] if e[0] in T]
    return sorted(in_T, key=lambda e: pos[e])


def _pair_ends(lines, vertex, T, colour_info):
    """Pair chain ends at one vertex; returns list of (end_a, end_b, sector)."""
    ends = [(i, b) for i in T for b in (1, -1) if lines[i].sink(b) is vertex]
    halves = {e: lines[e[0]].halves[e[1]] for e in ends}
    ang = {e: _end_angle(h) for e, h in halves.items()}
    gap = min(ln.saddle.phi_value for ln in lines) - vertex.phi_value
    order = _cyclic_order(lines, vertex, T, vertex.phi_value + 0.25 * gap)
    k = len(order)
    pairs = []
    if colour_info is not None:
        colour, disc = colour_info
        for i in range(k):
            e, nxt = order[i], order[(i + 1) % k]
            face = lines[e[0]].outward_left_face(e[1])
            if colour.get(face) == disc:
                pairs.append((e, nxt, (ang[nxt] - ang[e]) % (2 * np.pi)))
        used = [x for p in pairs for x in p[:2]]
        if len(used) == k and len(set(used)) == k:
            return pairs
    # fallback: consecutive pairing
    pairs = []
    for i in range(0, k, 2):
        e, nxt = order[i], order[(i + 1) % k]
        pairs.append((e, nxt, (ang[nxt] - ang[e]) % (2 * np.pi)))
    return pairs


def _build_chain(lines, T, colour_info, warnings):
    """Walk the chain through the vertex pairings; None if it is not one loop."""
    at_vertex = {}
    for i in T:
        for b in (1, -1):
            v = lines[i].sink(b)
            at_vertex.setdefault(id(v), (v, []))[1].append((i, b))
    partner, corner = {}, {}
    for vid, (v, ends) in at_vertex.items():
        for a, b, sector in _pair_ends(lines, v, set(T), colour_info):
            partner[a], partner[b] = b, a
            ext = abs(np.pi - sector)
            corner[a] = corner[b] = (v, ext)
    start = (min(T), 1)
    e = start
    segs, ors, corners, seen = [], [], [], []
    for _ in range(2 * len(T) + 2):
        i, b = e
        seen.append(i)
        segs += [lines[i].halves[b], lines[i].halves[-b]]
        ors += [-1, 1]
        arrive = (i, -b)
        corners.append(corner[arrive])
        e = partner[arrive]
        if e == start:
            break
    else:
        warnings.append("chain walk did not close")
        return None
    if sorted(seen) != sorted(T):
        return None
    return segs, ors, corners


def assemble_cycles(s: Section, separatrices, warnings=None, lines=None) -> list:
    """Closed chains of separatrix lines that bound discs (CP1)."""
    warnings = warnings if warnings is not None else []
    if s.model.kind != "CP1":
        return []
    if lines is None:
        lines = separatrix_lines(s, separatrices, warnings)
    m = len(lines)
    if m > MAX_CHAIN:
        warnings.append(f"{m} separatrix lines: chains longer than {MAX_CHAIN} lines were not enumerated")
    cycles = []
    for size in range(1, min(MAX_CHAIN, m) + 1):
        for T in itertools.combinations(range(m), size):
            deg = {}
            ends = []
            for i in T:
                for b in (1, -1):
                    v = id(lines[i].sink(b))
                    deg[v] = deg.get(v, 0) + 1
                ends.append((id(lines[i].sink(1)), id(lines[i].sink(-1))))
            if any(x % 2 for x in deg.values()) or _components(list(deg), ends) != 1:
                continue
            info = _disc_colour(lines, set(T))
            if info == "inconsistent":
                continue
            if info is None:
                warnings.append(f"faces unknown for lines {T}; accepted on parity alone")
            elif info[1] is None:
                continue
            built = _build_chain(lines, T, info if info is not None else None, warnings)
            if built is None:
                continue
            segs, ors, corners = built
            smooth = all(c <= SMOOTH_TOL for _, c in corners)
            cycles.append(SBSCycle(segs, ors, corners, smooth=smooth, lines=T))
    return cycles


# ---------------------------------------------------------------------------
# verification on CP1

def _sphere_to_chart(S: np.ndarray, D: np.ndarray):
    """Chart index, coordinates and coordinate velocity for Bloch-sphere samples."""
    x, y, z3 = S[:, 0], S[:, 1], S[:, 2]
    dx, dy, dz3 = D[:, 0], D[:, 1], D[:, 2]
    chart = (z3 > 0).astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = 1 - z3
        Z0 = (x + 1j * y) / a
        V0 = (dx + 1j * dy) / a + (x + 1j * y) * dz3 / a ** 2
        b = 1 + z3
        Z1 = (x - 1j * y) / b
        V1 = (dx - 1j * dy) / b - (x - 1j * y) * dz3 / b ** 2
    Z = np.where(chart == 0, Z0, Z1)
    V = np.where(chart == 0, V0, V1)
    return chart, Z, V


def _pieces(cycle: SBSCycle) -> list:
    """Lists of unit homogeneous vectors for the smooth pieces of the cycle."""
    if cycle.kind == "chain":
        out = []
        for k in range(0, len(cycle.segments), 2):
            a, b = cycle.segments[k], cycle.segments[k + 1]
            pa = a.trajectory.points[::-1] if cycle.orientations[k] < 0 else a.trajectory.points
            pb = b.trajectory.points if cycle.orientations[k + 1] > 0 else b.trajectory.points[::-1]
            pts = pa + pb[1:]
            out.append(np.array([p.homogeneous[0] for p in pts]))
        return out
    return [np.array([p.homogeneous[0] for p in cycle.polyline()])]


def _spline_samples(X: np.ndarray, n: int, periodic: bool):
    """Quintic interpolation in chord length; returns parameters, points, velocities."""
    seg = np.linalg.norm(np.diff(X, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-14])
    X = X[keep]
    if periodic:
        X = X.copy()
        X[-1] = X[0]
    t = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(X, axis=0), axis=1))])
    sp = make_interp_spline(t, X, k=5, bc_type="periodic" if periodic else None)
    tt = np.linspace(0.0, t[-1], n)
    return tt, sp(tt), sp(tt, 1)


def dense_samples(cycle: SBSCycle, min_samples: int = MIN_SAMPLES):
    """Dense resampling of the cycle on the Bloch sphere, piece by piece.

    Returns a list of (t, points, velocities) with points on the unit sphere
    and velocities projected to its tangent planes.
    """
    pieces = [to_sphere(h) for h in _pieces(cycle)]
    lens = [np.sum(np.linalg.norm(np.diff(P, axis=0), axis=1)) for P in pieces]
    total = sum(lens)
    periodic = cycle.kind != "chain"
    out = []
    for P, L in zip(pieces, lens):
        n = max(16, int(math.ceil(min_samples * L / total)) + 1)
        t, S, D = _spline_samples(P, n, periodic)
        nrm = np.linalg.norm(S, axis=1, keepdims=True)
        S = S / nrm
        D = D / nrm
        D = D - np.sum(D * S, axis=1, keepdims=True) * S
        out.append((t, S, D))
    return out


def _wrap(x: float, d: int) -> float:
    return float((x + d / 2) % d - d / 2)


def _polygon_area(d: int, homs: list, kind: str) -> float:
    hom_all = np.concatenate(homs)
    if kind == "chain":
        hom_all = np.concatenate([hom_all, hom_all[:1]])
    return enclosed_area_hom(d, hom_all)


def verify_cycle(s: Section, cycle: SBSCycle, min_samples: int = MIN_SAMPLES) -> SBSCycle:
    """Recompute calibration, area and stability certificates on CP1.

    Raises StabilityError when a sample of the cycle enters the divisor tube.
    """
    model = s.model
    if model.kind != "CP1":
        raise UnsupportedModelError("verify_cycle works on CP1 cycles")
    d = model.degree
    raw = np.concatenate(_pieces(cycle))
    nsq_raw = s.norm_sq_hom((raw,))
    if nsq_raw.min() < s.tube:
        raise StabilityError("cycle passes through the divisor tube", float(nsq_raw.min()))
    pieces = dense_samples(cycle, min_samples)
    res, loop, count = 0.0, 0.0, 0
    homs, min_nsq = [], np.inf
    tangents = []
    for t, S, D in pieces:
        chart, Z, V = _sphere_to_chart(S, D)
        hom = from_sphere(S)
        nsq = s.norm_sq_hom((hom,))
        min_nsq = min(min_nsq, float(nsq.min()))
        if nsq.min() < s.tube:
            raise StabilityError("cycle passes through the divisor tube", float(nsq.min()))
        vals = np.empty(len(t))
        gnorm = np.empty(len(t))
        for ch in (0, 1):
            sel = chart == ch
            if not sel.any():
                continue
            _, pz, _, _, _ = derivatives(s, ch, Z[sel][:, None])
            cov = im_rho_covector(pz)
            vec = np.stack([V[sel].real, V[sel].imag], axis=1)
            vals[sel] = np.sum(cov * vec, axis=1)
            gnorm[sel] = np.sqrt(d / np.pi) * np.abs(V[sel]) / (1 + np.abs(Z[sel]) ** 2)
        ok = gnorm > 0
        res = max(res, float(np.max(np.abs(vals[ok]) / gnorm[ok])))
        loop += float(simpson(vals, x=t))
        homs.append(hom if not homs else hom[1:])
        tangents.append((S[0], D[0], S[-1], D[-1]))
        count += len(t)
    # polygon areas converge like h^2: extrapolate from n and 2n samples
    a1 = _polygon_area(d, homs, cycle.kind)
    fine = [from_sphere(S) for _, S, _ in dense_samples(cycle, 2 * min_samples)]
    a2 = _polygon_area(d, [h if k == 0 else h[1:] for k, h in enumerate(fine)], cycle.kind)
    area = float(np.mod(a2 + (_wrap(a2 - a1, d)) / 3.0, d))
    # the two sides have areas A and d - A; report the smaller one
    area = min(area, d - area)
    cycle.calibration_residual = res
    cycle.loop_integral = loop
    cycle.enclosed_area = area
    cycle.area_defect = abs(area - round(area))
    cycle.min_norm_sq = min_nsq / s.scale ** 2
    cycle.n_samples = count
    if cycle.kind == "chain":
        corners = []
        for k in range(len(tangents)):
            _, _, _, d_in = tangents[k]
            _, d_out, _, _ = tangents[(k + 1) % len(tangents)]
            c = float(np.dot(d_in, d_out) / (np.linalg.norm(d_in) * np.linalg.norm(d_out)))
            corners.append((cycle.corners[k][0], float(np.arccos(np.clip(c, -1.0, 1.0)))))
        cycle.corners = corners
        cycle.smooth = all(c <= SMOOTH_TOL for _, c in corners)
    else:
        cycle.smooth = True
    k = round(area)
    cycle.certified = bool(
        res <= CALIBRATION_TOL
        and cycle.area_defect <= AREA_TOL
        and abs(loop) <= LOOP_TOL
        and 1 <= k <= d - 1
        and cycle.chain_gap() <= CHAIN_TOL
    )
    if not cycle.certified:
        cycle.failure = (f"calibration {res:.2e}, area {area:.6f}, loop {loop:.2e}")
    return cycle


# ---------------------------------------------------------------------------
# parametrized candidates

@dataclass(eq=False)
class ParametrizedReport:
    n_samples: int
    lagrangian_residual: float
    sbs_residual: float
    gradient_residual: float
    min_norm_sq: float
    stable: bool


def hom_tangent_to_chart(model, chart: int, hom: tuple, dhom: tuple) -> np.ndarray:
    """Chart velocity of a curve given by homogeneous vectors and their derivatives."""
    cols = []
    for h, dh, a in zip(hom, dhom, model.factor_charts(chart)):
        piv, dpiv = h[a], dh[a]
        rest, drest = np.delete(h, a), np.delete(dh, a)
        cols.append((drest * piv - rest * dpiv) / piv ** 2)
    return np.concatenate(cols)


def verify_parametrized(s: Section, sampler, n: int = 200, seed: int = 0) -> ParametrizedReport:
    """Residuals of a sampled candidate submanifold.

    ``sampler(n, rng)`` returns ``(points, frames)`` where ``frames[k]`` is an
    array of real tangent vectors (rows, length 2n) in the chart of
    ``points[k]``.
    """
    rng = np.random.default_rng(seed)
    points, frames = sampler(n, rng)
    model = s.model
    lag = sbs = grad = 0.0
    min_nsq = np.inf
    for p, F in zip(points, frames):
        F = np.atleast_2d(F)
        nsq = float(s.norm_sq_hom(tuple(h[None, :] for h in p.homogeneous))[0]) / s.scale ** 2
        min_nsq = min(min_nsq, nsq)
        if nsq * s.scale ** 2 < s.tube:
            continue
        H = kahler_terms(model, p.z[None, :])[3]
        G = metric_from_H(H)[0]
        W = omega_from_H(H)[0]
        _, pz, _, _, Hk = derivatives(s, p.chart, p.z[None, :])
        cov = im_rho_covector(pz)[0]
        g = riemannian_gradient(pz, Hk)[0]
        grad = max(grad, float(np.sqrt(max(g @ G @ g, 0.0))))
        norms = np.sqrt(np.einsum("ki,ij,kj->k", F, G, F))
        for i in range(len(F)):
            sbs = max(sbs, abs(cov @ F[i]) / norms[i])
            for j in range(i + 1, len(F)):
                lag = max(lag, abs(F[i] @ W @ F[j]) / (norms[i] * norms[j]))
    return ParametrizedReport(len(points), float(lag), float(sbs), float(grad), float(min_nsq),
                              bool(min_nsq * s.scale ** 2 >= s.tube))


def _unit(v):
    return v / np.linalg.norm(v)


def _s0_sampler(n, rng):
    m = quadric()
    pts, frames = [], []
    for _ in range(n):
        x = _unit(rng.standard_normal(2) + 1j * rng.standard_normal(2))
        y = np.conj(x)
        p = m.from_homogeneous((x, y))
        perp = np.array([-np.conj(x[1]), np.conj(x[0])])
        F = []
        for dlt in (perp, 1j * perp):
            dv = hom_tangent_to_chart(m, p.chart, (x, y), (dlt, np.conj(dlt)))
            F.append(np.concatenate([dv.real, dv.imag]))
        pts.append(p)
        frames.append(np.array(F))
    return pts, frames


def _rp2_sampler(n, rng):
    m = cp2()
    pts, frames = [], []
    for _ in range(n):
        x = _unit(rng.standard_normal(3))
        h = x.astype(complex)
        p = m.from_homogeneous((h,))
        basis = np.linalg.svd(x[None, :])[2][1:]
        F = []
        for dlt in basis:
            dv = hom_tangent_to_chart(m, p.chart, (h,), (dlt.astype(complex),))
            F.append(np.concatenate([dv.real, dv.imag]))
        pts.append(p)
        frames.append(np.array(F))
    return pts, frames


def _meridian_points(n):
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    hom = np.stack([np.cos(t / 2), np.sin(t / 2)], axis=1).astype(complex)
    return hom, t


def _meridian_sampler(n, rng):
    m = cp1(2)
    hom, t = _meridian_points(n)
    pts, frames = [], []
    for h, tk in zip(hom, t):
        p = m.from_homogeneous((h,))
        dh = 0.5 * np.array([-np.sin(tk / 2), np.cos(tk / 2)], dtype=complex)
        dv = hom_tangent_to_chart(m, p.chart, (h,), (dh,))
        pts.append(p)
        frames.append(np.array([[dv[0].real, dv[0].imag]]))
    return pts, frames


PRESETS = ("s0", "rp2", "meridian")


def preset(name: str, perturbation: float = 0.0, seed: int = 0):
    """Section and sampler of a named candidate: 's0', 'rp2' or 'meridian'.

    ``perturbation`` adds a random complex Gaussian of that size to the
    section coefficients.
    """
    rng = np.random.default_rng(seed)
    if name == "s0":
        m, coeff, sampler = quadric(), np.eye(2, dtype=complex), _s0_sampler
    elif name == "rp2":
        m, coeff, sampler = cp2(), np.eye(3, dtype=complex), _rp2_sampler
    elif name == "meridian":
        m, coeff, sampler = cp1(2), np.array([0, 1, 0], dtype=complex), _meridian_sampler
    else:
        raise PreconditionError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if perturbation:
        coeff = coeff + perturbation * (rng.standard_normal(coeff.shape) + 1j * rng.standard_normal(coeff.shape))
    return Section(m, coeff), sampler


def meridian_cycle(n: int = 400) -> SBSCycle:
    """The great circle through [1:0] and [0:1] as a candidate cycle on CP1/O(2)."""
    m = cp1(2)
    hom, _ = _meridian_points(n)
    return SBSCycle(kind="curve", samples=[m.from_homogeneous((h,)) for h in hom])


# ---------------------------------------------------------------------------
# critical manifolds as cycles

def _critical_component_cycle(s: Section, ds) -> SBSCycle:
    """A closed critical component of real dimension n as a candidate cycle."""
    model = s.model
    frames = []
    for p in ds.samples:
        N = _null_space(s, p)
        frames.append(N.T)
    pts = list(ds.samples)
    rep = verify_parametrized(s, lambda n, rng: (pts, frames), n=len(pts))
    kind = "critical-circle" if ds.dimension == 1 else "critical-manifold"
    cyc = SBSCycle(kind=kind, samples=pts, frames=frames)
    cyc.lagrangian_residual = rep.lagrangian_residual
    cyc.calibration_residual = rep.sbs_residual
    cyc.min_norm_sq = rep.min_norm_sq
    cyc.n_samples = rep.n_samples
    cyc.smooth = True
    cyc.certified = bool(rep.sbs_residual <= CALIBRATION_TOL and rep.lagrangian_residual <= LAGRANGIAN_TOL
                         and rep.stable and ds.dimension == model.dim)
    return cyc


# ---------------------------------------------------------------------------
# pipeline

def count_sbs(s: Section, sphere_directions: int = 16, sphere_rings: int = 12) -> VerificationReport:
    """Full pipeline: genericity, critical points, separatrices, assembly, verification."""
    kind = s.model.kind
    warnings, errors = [], []
    if kind == "Quadric":
        return _count_quadric(s, warnings, errors, sphere_directions, sphere_rings)
    inv = find_critical_points(s)
    warnings.extend(inv.warnings)
    gen = section_is_generic(s, inv)
    cycles, seps, lines, deg = [], [], [], None
    if inv.degenerate_points:
        deg = detect_degenerate(s, inv)
        for ds in deg.sets:
            if ds.dimension != s.model.dim or (ds.dimension == 1 and not ds.closed):
                warnings.append(f"critical set of dimension {ds.dimension} is not a closed candidate")
                continue
            cyc = _critical_component_cycle(s, ds)
            if kind == "CP1" and cyc.certified:
                try:
                    verify_cycle(s, cyc)
                except StabilityError as exc:
                    cyc.certified = False
                    cyc.failure = str(exc)
            cycles.append(cyc)
    if kind == "CP1":
        try:
            seps, w = trace_separatrices(s, inv.points, h_max=SEPARATRIX_H_MAX)
            warnings.extend(w)
            lines = separatrix_lines(s, seps, warnings)
            for cyc in assemble_cycles(s, seps, warnings, lines=lines):
                try:
                    verify_cycle(s, cyc)
                except StabilityError as exc:
                    cyc.failure = f"non-stable: {exc}"
                    warnings.append(cyc.failure)
                cycles.append(cyc)
        except SBSError as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
    elif kind == "CP2" and inv.points:
        warnings.append("flow-based cycle assembly is not available on CP2; isolated critical points reported only")
    for c in cycles:
        if not c.certified and c.failure:
            warnings.append(f"candidate rejected: {c.failure}")
    return VerificationReport(s, gen, inv, seps, lines, cycles, warnings, deg, errors)


def _count_quadric(s, warnings, errors, n_theta, n_rings):
    from .critical import CriticalInventory

    system, crits = solve_quadric_lagrange(s.coefficients)
    warnings.extend(system.warnings)
    inv = CriticalInventory(crits, [], [], "certified", {})
    gen = section_is_generic(s, inv)
    cycles, deg = [], None
    if system.degenerate:
        from .critical import DegeneracyReport, DegenerateSet

        pts = [s.model.from_homogeneous((sol.x, sol.y)) for sol in system.solutions]
        ds = DegenerateSet(2, pts, True, 0.0)
        deg = DegeneracyReport([ds])
        cycles.append(_critical_component_cycle(s, ds))
    elif any(c.morse_index == 2 for c in crits):
        try:
            mesh = reconstruct_base_sphere(s.coefficients, n_theta=n_theta, n_rings=n_rings, refine=False)
            cyc = SBSCycle(kind="sphere", mesh=mesh, smooth=True)
            cyc.calibration_residual = mesh.sbs_residual
            cyc.lagrangian_residual = mesh.omega_residual
            cyc.min_norm_sq = mesh.min_norm_sq
            cyc.n_samples = len(mesh.coords)
            cyc.certified = bool(mesh.closed and mesh.euler_characteristic == 2
                                 and mesh.omega_residual <= LAGRANGIAN_TOL
                                 and mesh.sbs_residual <= CALIBRATION_TOL
                                 and mesh.min_norm_sq >= s.tube)
            if not cyc.certified:
                cyc.failure = f"sphere residuals omega {mesh.omega_residual:.2e}, sbs {mesh.sbs_residual:.2e}"
            cycles.append(cyc)
        except (ReconstructionError, IntegrationError, StabilityError, PreconditionError) as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
    return VerificationReport(s, gen, inv, [], [], cycles, warnings, deg, errors)


def scan_moduli(family: FamilySpec, threads: int = 1) -> ScanReport:
    """count_sbs over a family; per-sample failures are recorded, not raised."""
    sections = family.sections()
    failures = {}

    def job(i):
        try:
            return count_sbs(sections[i])
        except SBSError as exc:
            failures[i] = f"{type(exc).__name__}: {exc}"
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reports = list(ex.map(job, range(len(sections))))
    else:
        reports = [job(i) for i in range(len(sections))]
    counts, classes, discs, near = [], [], [], []
    for i, (s, r) in enumerate(zip(sections, reports)):
        g = r.genericity if r is not None else section_is_generic(s)
        classes.append(g.classification)
        discs.append(float(g.discriminant))
        if g.discriminant < family.near:
            near.append(i)
        counts.append(r.count if r is not None else None)
        if r is not None and r.errors:
            failures[i] = "; ".join(r.errors)
    return ScanReport(family, counts, classes, discs, near, dict(sorted(failures.items())), reports)


def _point_triangle_dist(P: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Distance from each row of P to the nearest triangle T[j] = (a, b, c)."""
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    e0, e1 = b - a, c - a
    G = np.stack([np.einsum("ij,ij->i", e0, e0), np.einsum("ij,ij->i", e0, e1),
                  np.einsum("ij,ij->i", e1, e1)], axis=1)
    det = np.maximum(G[:, 0] * G[:, 2] - G[:, 1] ** 2, 1e-300)
    out = np.empty(len(P))
    for k, x in enumerate(P):
        w = x - a
        r0 = np.einsum("ij,ij->i", w, e0)
        r1 = np.einsum("ij,ij->i", w, e1)
        u = (G[:, 2] * r0 - G[:, 1] * r1) / det
        v = (G[:, 0] * r1 - G[:, 1] * r0) / det
        inside = (u >= 0) & (v >= 0) & (u + v <= 1)
        best = np.full(len(T), np.inf)
        q = a + u[:, None] * e0 + v[:, None] * e1
        best[inside] = np.linalg.norm(x - q[inside], axis=1)
        # closest point on each edge otherwise
        for p0, p1 in ((a, b), (b, c), (c, a)):
            e = p1 - p0
            t = np.clip(np.einsum("ij,ij->i", x - p0, e) / np.maximum(np.einsum("ij,ij->i", e, e), 1e-300), 0, 1)
            best = np.minimum(best, np.linalg.norm(x - p0 - t[:, None] * e, axis=1))
        out[k] = best.min()
    return out


def _mesh_distance(ma, mb) -> float:
    fa = projector_features(ma.homogeneous())
    fb = projector_features(mb.homogeneous())
    dab = _point_triangle_dist(fa, fb[mb.triangles])
    dba = _point_triangle_dist(fb, fa[ma.triangles])
    return float(max(dab.max(), dba.max()) / np.sqrt(2.0))


def _point_segment_dist(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Distance from each row of P to the polyline through the rows of Q."""
    a, e = Q[:-1], np.diff(Q, axis=0)
    ee = np.maximum(np.einsum("ij,ij->i", e, e), 1e-300)
    out = np.empty(len(P))
    for k, x in enumerate(P):
        t = np.clip(np.einsum("ij,ij->i", x - a, e) / ee, 0.0, 1.0)
        out[k] = np.sqrt(np.min(np.einsum("ij,ij->i", x - a - t[:, None] * e, x - a - t[:, None] * e)))
    return out


def cycle_distance(a: SBSCycle, b: SBSCycle) -> float:
    """Symmetric Hausdorff distance (chordal) between two cycles.

    Curves are compared by vertex to segment distances of their polylines,
    spheres by vertex to triangle distances of their meshes, both in the
    projector embedding.
    """
    if a.mesh is not None or b.mesh is not None:
        if a.mesh is None or b.mesh is None:
            return float("inf")
        return _mesh_distance(a.mesh, b.mesh)
    pa, pb = a.polyline(), b.polyline()
    fa = projector_features(tuple(np.array([p.homogeneous[k] for p in pa]) for k in range(len(pa[0].homogeneous))))
    fb = projector_features(tuple(np.array([p.homogeneous[k] for p in pb]) for k in range(len(pb[0].homogeneous))))
    dab = _point_segment_dist(fa, fb)
    dba = _point_segment_dist(fb, fa)
    return float(max(dab.max(), dba.max()) / np.sqrt(2.0))

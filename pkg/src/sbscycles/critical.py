"""Critical points of phi: multi-start Newton, Morse data, degenerate sets.

Newton runs in every chart from a grid of seeds, converged points are merged by
chordal distance and classified through the generalized eigenproblem
``Hess v = lambda G v`` with ``G`` the Fubini-Study metric.  Using the metric
makes the negative eigenspace exactly isotropic: the spectrum of
``G^{-1} Hess`` pairs as ``pi + m, pi - m`` and the complex structure swaps the
two members of each pair.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InvariantViolation, PreconditionError
from .geometry import (
    R_SWITCH,
    PolarizedModel,
    ProjPoint,
    TangentVector,
    affine_to_homogeneous,
    chordal_distance,
    chordal_matrix,
    from_sphere,
    homogeneous_to_affine,
    kahler_terms,
    metric_from_H,
    omega_from_H,
    to_sphere,
    transition,
)
from .potential import (
    Section,
    derivatives,
    real_gradient,
    real_hessian,
    riemannian_gradient,
)

log = logging.getLogger(__name__)

DEGENERACY_THRESHOLD = 1e-6
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
DEDUP_TOL = 1e-6
CRIT_TOL = 1e-10
STALL_TOL = 1e-9
DEGENERATE_SPACING = 2e-2


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    location: ProjPoint
    morse_index: int | str
    eigenvalues: np.ndarray
    neg_eigenvectors: tuple
    phi_value: float
    pos_eigenvectors: tuple = ()
    grad_norm: float = 0.0

    @property
    def degenerate(self) -> bool:
        return self.morse_index == "degenerate"

    @property
    def is_minimum(self) -> bool:
        return self.morse_index == 0

    @property
    def is_saddle(self) -> bool:
        return isinstance(self.morse_index, int) and self.morse_index > 0

    @property
    def ph_index(self) -> int:
        """Poincare-Hopf index of grad phi (sign of the Hessian determinant)."""
        if self.degenerate:
            raise PreconditionError("degenerate point has no Morse index")
        return (-1) ** int(self.morse_index)


@dataclass
class CriticalInventory:
    """Result of the multi-start search.

    Iterating over the inventory yields the isolated Morse critical points.
    """

    points: list
    degenerate_points: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    status: str = "best-effort"
    audit: dict = field(default_factory=dict)
    seeds: int = 0
    converged: int = 0

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    @property
    def minima(self):
        return [c for c in self.points if c.morse_index == 0]

    @property
    def saddles(self):
        return [c for c in self.points if c.is_saddle]


# ---------------------------------------------------------------------------
# batched Newton

def _grad_hess(s: Section, chart: int, Z: np.ndarray):
    _, pz, A, B, _ = derivatives(s, chart, Z, check=False)
    return real_gradient(pz), real_hessian(A, B)


def _merit(s: Section, chart: int, Z: np.ndarray) -> np.ndarray:
    """Fubini-Study norm of the gradient; chart-independent unlike |dphi|."""
    F, dF, _ = s.chart_jet(chart, Z)
    _, Pz, _, H = kahler_terms(s.model, Z)
    with np.errstate(all="ignore"):
        pz = -0.5 * dF / F[:, None] + 0.5 * Pz
        if Z.shape[1] == 1:
            m2 = 4 * np.pi * np.abs(pz[:, 0]) ** 2 / H[:, 0, 0].real
        else:
            c = np.linalg.solve(np.swapaxes(H, 1, 2), np.conj(pz)[..., None])[..., 0]
            m2 = 4 * np.pi * np.real(np.sum(pz * c, axis=1))
    return np.sqrt(np.abs(m2))


def _tikhonov_step(Hs: np.ndarray, g: np.ndarray, mu2: np.ndarray) -> np.ndarray:
    """-(Hs^2 + mu^2)^{-1} Hs g, closed form for 2x2 blocks."""
    if Hs.shape[1] == 2:
        a, b, c = Hs[:, 0, 0], Hs[:, 0, 1], Hs[:, 1, 1]
        # M = Hs^2 + mu^2 I
        m11 = a * a + b * b + mu2
        m12 = a * b + b * c
        m22 = b * b + c * c + mu2
        r1 = a * g[:, 0] + b * g[:, 1]
        r2 = b * g[:, 0] + c * g[:, 1]
        det = m11 * m22 - m12 * m12
        return -np.stack([(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det], axis=1)
    w, V = np.linalg.eigh(Hs)
    coef = w / (w ** 2 + mu2[:, None]) * np.einsum("nji,nj->ni", V, g)
    return -np.einsum("nij,nj->ni", V, coef)


def _newton_batch(s: Section, chart: int, Z: np.ndarray, maxit: int = NEWTON_MAXIT, tol: float = NEWTON_TOL):
    """Damped, regularized Newton on the chart gradient.

    The step is the Tikhonov-regularized Newton step with parameter |g|; it
    reduces to Newton near nondegenerate zeros and stays short along the
    near-null directions of degenerate critical sets.  Step halving enforces
    decrease of the Fubini-Study gradient norm.  Returns final Z, chart
    gradient norms and a mask of seeds that stayed in the chart and off the
    divisor tube.
    """
    Z = np.array(Z, dtype=complex)
    n = Z.shape[1]
    alive = np.ones(len(Z), dtype=bool)
    done = np.zeros(len(Z), dtype=bool)
    gnorm = np.full(len(Z), np.inf)
    for _ in range(maxit):
        idx = np.nonzero(alive & ~done & (gnorm > tol))[0]
        if len(idx) == 0:
            break
        z = Z[idx]
        with np.errstate(all="ignore"):
            g, Hs = _grad_hess(s, chart, z)
        gn = np.linalg.norm(g, axis=1)
        gnorm[idx] = gn
        bad = ~np.isfinite(gn)
        alive[idx[bad]] = False
        work = (gn > tol) & ~bad
        idx, z, g, Hs, gn = idx[work], z[work], g[work], Hs[work], gn[work]
        if len(idx) == 0:
            break
        with np.errstate(all="ignore"):
            mer = _merit(s, chart, z)
            step = _tikhonov_step(Hs, g, gn ** 2)
            ln = np.linalg.norm(step, axis=1)
            step *= np.minimum(1.0, 0.5 / np.maximum(ln, 1e-300))[:, None]
        dz = step[:, :n] + 1j * step[:, n:]
        t = np.ones(len(idx))
        accepted = np.zeros(len(idx), dtype=bool)
        newz = z.copy()
        for _h in range(8):
            todo = np.nonzero(~accepted)[0]
            if len(todo) == 0:
                break
            trial = z[todo] + t[todo, None] * dz[todo]
            with np.errstate(all="ignore"):
                gt = _merit(s, chart, trial)
            better = np.isfinite(gt) & (gt < mer[todo] * (1 - 1e-4 * t[todo]) + 1e-15)
            sel = todo[better]
            newz[sel] = trial[better]
            accepted[sel] = True
            t[todo] *= 0.5
        # a seed without any decrease has either reached roundoff level or
        # stalled away from a critical point
        at_roundoff = ~accepted & (gn <= STALL_TOL)
        done[idx[at_roundoff]] = True
        alive[idx[~accepted & ~at_roundoff]] = False
        Z[idx] = newz
        far = np.abs(newz).max(axis=1) > 2 * R_SWITCH
        hom = affine_to_homogeneous(s.model, chart, newz)
        nsq = s.norm_sq_hom(hom)
        dead = far | (nsq < s.tube) | ~np.isfinite(nsq)
        alive[idx[dead]] = False
    if np.any(alive):
        with np.errstate(all="ignore"):
            g, _ = _grad_hess(s, chart, Z[alive])
        gnorm[alive] = np.linalg.norm(g, axis=1)
    return Z, gnorm, alive


def _seed_grid(n: int, per_axis: int) -> np.ndarray:
    xs = np.linspace(-R_SWITCH, R_SWITCH, per_axis)
    w = (xs[:, None] + 1j * xs[None, :]).ravel()
    w = w[np.abs(w) <= R_SWITCH]
    if n == 1:
        return w[:, None]
    a, b = np.meshgrid(w, w, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


def default_grid(model: PolarizedModel) -> int:
    return 64 if model.dim == 1 else 8


def polish(s: Section, p: ProjPoint, maxit: int = 30, tol: float = NEWTON_TOL) -> ProjPoint:
    """Newton-polish a point in its best chart."""
    ch = s.model.best_chart_of(p)
    q = transition(p, ch, s.model)
    Z, gn, alive = _newton_batch(s, ch, q.z[None, :], maxit=maxit, tol=tol)
    if not alive[0]:
        return q
    return s.model.from_homogeneous(tuple(h[0] for h in affine_to_homogeneous(s.model, ch, Z)))


def riemannian_grad_norm(s: Section, p: ProjPoint) -> float:
    _, pz, _, _, H = derivatives(s, p.chart, p.z[None, :])
    g = riemannian_gradient(pz, H)[0]
    G = metric_from_H(H)[0]
    return float(np.sqrt(max(g @ G @ g, 0.0)))


# ---------------------------------------------------------------------------
# classification

def morse_data(s: Section, p: ProjPoint):
    """Generalized eigen-decomposition of the Hessian against the metric."""
    _, _, A, B, H = derivatives(s, p.chart, p.z[None, :])
    Hs = real_hessian(A, B)[0]
    Hs = 0.5 * (Hs + Hs.T)
    G = metric_from_H(H)[0]
    w, V = linalg.eigh(Hs, G)
    return w, V, Hs, G


def classify(s: Section, location: ProjPoint, crit_tol: float = 1e-8) -> CriticalPoint:
    """Morse classification of a critical point."""
    p = transition(location, s.model.best_chart_of(location), s.model)
    gn = riemannian_grad_norm(s, p)
    if gn > crit_tol:
        raise PreconditionError(f"point is not critical (|grad| = {gn:.3e})")
    w, V, _, _ = morse_data(s, p)
    scale = np.max(np.abs(w))
    from .potential import phi as _phi

    phv = _phi(s, p)
    if np.min(np.abs(w)) <= DEGENERACY_THRESHOLD * scale:
        return CriticalPoint(p, "degenerate", w, (), phv, (), gn)
    neg = tuple(TangentVector(p, V[:, k]) for k in range(len(w)) if w[k] < 0)
    pos = tuple(TangentVector(p, V[:, k]) for k in range(len(w)) if w[k] > 0)
    idx = len(neg)
    if idx > s.model.dim:
        raise InvariantViolation(f"Morse index {idx} exceeds complex dimension {s.model.dim}")
    return CriticalPoint(p, idx, w, neg, phv, pos, gn)


def isotropy_defect(s: Section, c: CriticalPoint) -> float:
    """max |omega(u, v)| over pairs of stored negative eigenvectors."""
    if len(c.neg_eigenvectors) < 2:
        return 0.0
    W = omega_from_H(kahler_terms(s.model, c.location.z[None, :])[3])[0]
    vs = [v.components for v in c.neg_eigenvectors]
    return max(abs(vs[i] @ W @ vs[j]) for i in range(len(vs)) for j in range(i + 1, len(vs)))


# ---------------------------------------------------------------------------
# search

def projector_features(hom: tuple) -> np.ndarray:
    """Real coordinates of the hermitian projectors h h^*.

    Euclidean distance between features equals sqrt(2) times the chordal
    distance and is computed without cancellation for nearby points.
    """
    feats = []
    for h in hom:
        P = h[:, :, None] * np.conj(h[:, None, :])
        P = P.reshape(len(h), -1)
        feats += [P.real, P.imag]
    return np.concatenate(feats, axis=1)


def cluster_points(hom: tuple, order: np.ndarray, tol: float) -> list:
    """Greedy clustering in the given priority order; returns representative indices."""
    from scipy.spatial import cKDTree

    X = projector_features(hom)
    tree = cKDTree(X)
    taken = np.zeros(len(X), dtype=bool)
    reps = []
    for i in order:
        if taken[i]:
            continue
        reps.append(int(i))
        taken[tree.query_ball_point(X[i], np.sqrt(2) * tol)] = True
    return reps


def _screen_degenerate(s: Section, chart: int, Z: np.ndarray) -> np.ndarray:
    """Cheap rank test of the metric-relative Hessian for a batch."""
    _, _, A, B, H = derivatives(s, chart, Z, check=False)
    Hs = real_hessian(A, B)
    G = metric_from_H(H)
    L = np.linalg.cholesky(G)
    Li = np.linalg.inv(L)
    M = Li @ Hs @ np.swapaxes(Li, 1, 2)
    w = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))
    aw = np.abs(w)
    return aw.min(axis=1) <= 10 * DEGENERACY_THRESHOLD * aw.max(axis=1)


def _zero_ring_seeds(s: Section) -> np.ndarray:
    """Seeds on small rings around each zero of a CP1 section.

    Ring radii scale with the distance to the nearest other zero, so saddles
    squeezed between close zeros are seeded at any separation.
    """
    zeros = [z for z, _ in s.zeros()]
    if len(zeros) < 2:
        return np.zeros((0, 2), dtype=complex)
    X = to_sphere(np.array(zeros))
    ang = np.arccos(np.clip(X @ X.T, -1.0, 1.0))
    np.fill_diagonal(ang, np.inf)
    out = []
    th = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    for k, x in enumerate(X):
        e1 = np.cross(x, [1.0, 0.0, 0.0] if abs(x[0]) < 0.9 else [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(x, e1)
        for f in (0.25, 0.5, 0.75):
            r = f * ang[k].min()
            out.append(np.cos(r) * x + np.sin(r) * (np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2))
    return from_sphere(np.concatenate(out))


def find_critical_points(s: Section, grid: int | None = None) -> CriticalInventory:
    """All isolated critical points of phi found by multi-start Newton.

    On CP1 the grid is doubled (up to twice) while the Poincare-Hopf audit
    fails.
    """
    per_axis = grid or default_grid(s.model)
    inv = _find_critical_points(s, per_axis)
    for _ in range(2):
        if s.model.kind != "CP1" or not inv.audit.get("applicable") or inv.audit["passed"]:
            break
        per_axis *= 2
        log.info("Poincare-Hopf audit failed; reseeding with a %d grid", per_axis)
        inv = _find_critical_points(s, per_axis)
    return inv


def _find_critical_points(s: Section, per_axis: int) -> CriticalInventory:
    model = s.model
    seeds0 = _seed_grid(model.dim, per_axis)
    extra = _zero_ring_seeds(s) if model.kind == "CP1" else None
    homs, gns, dflags = [[] for _ in model.factor_dims], [], []
    nseeds = nconv = 0
    warnings = []
    for ch in range(model.chart_count):
        hom0 = affine_to_homogeneous(model, ch, seeds0)
        keep = s.norm_sq_hom(hom0) > 1e-6 * s.scale ** 2
        Z0 = seeds0[keep]
        if extra is not None and len(extra):
            mine = extra[np.argmax(np.abs(extra), axis=1) == ch]
            if len(mine):
                Z0 = np.concatenate([Z0, homogeneous_to_affine(model, ch, (mine,))])
        nseeds += len(Z0)
        Z, gn, alive = _newton_batch(s, ch, Z0)
        ok = alive & (gn <= 1e-9)
        nconv += int(ok.sum())
        if not np.any(ok):
            continue
        hom = affine_to_homogeneous(model, ch, Z[ok])
        for k, h in enumerate(hom):
            homs[k].append(h)
        gns.append(gn[ok])
        dflags.append(_screen_degenerate(s, ch, Z[ok]))
    pts, degen = [], []
    if gns:
        homs = tuple(np.concatenate(h) for h in homs)
        gns = np.concatenate(gns)
        dflag = np.concatenate(dflags)
        cand = []
        # isolated candidates: merge at the dedup tolerance and polish
        iso = np.nonzero(~dflag)[0]
        if len(iso):
            sub = tuple(h[iso] for h in homs)
            reps = cluster_points(sub, np.argsort(gns[iso]), DEDUP_TOL)
            polished = [polish(s, model.from_homogeneous(tuple(h[i] for h in sub))) for i in reps]
            hh = tuple(np.array([c.homogeneous[k] for c in polished]) for k in range(len(homs)))
            gg = np.array([riemannian_grad_norm(s, c) for c in polished])
            cand += [polished[i] for i in cluster_points(hh, np.argsort(gg), DEDUP_TOL)]
        # points on positive-dimensional critical sets: thin out
        deg = np.nonzero(dflag)[0]
        if len(deg):
            sub = tuple(h[deg] for h in homs)
            reps = cluster_points(sub, np.argsort(gns[deg]), DEGENERATE_SPACING)
            cand += [model.from_homogeneous(tuple(h[i] for h in sub)) for i in reps]
        for p in cand:
            try:
                c = classify(s, p, crit_tol=CRIT_TOL)
            except PreconditionError as exc:
                warnings.append(f"discarded a Newton limit: {exc}")
                continue
            if c.degenerate:
                degen.append(c)
            else:
                pts.append(c)
        # an isolated point too close to a degenerate set is part of that set
        if degen and pts:
            dh = tuple(np.array([c.location.homogeneous[k] for c in degen]) for k in range(len(homs)))
            keep = []
            for c in pts:
                d = chordal_matrix(tuple(h[None, :] for h in c.location.homogeneous), dh)[0]
                if d.min() > 10 * DEDUP_TOL:
                    keep.append(c)
            pts = keep
    pts.sort(key=lambda c: (c.morse_index, c.phi_value))
    inv = CriticalInventory(pts, degen, warnings, "best-effort", {}, nseeds, nconv)
    if model.kind == "CP1":
        inv.audit = poincare_hopf_audit(s, inv)
        if inv.audit.get("applicable") and not inv.audit["passed"]:
            inv.warnings.append(
                "incomplete critical search: Poincare-Hopf audit gives "
                f"{inv.audit['total']} instead of 2"
            )
        elif inv.audit.get("applicable"):
            inv.status = "certified"
    if nconv == 0:
        inv.warnings.append("no Newton run converged")
    return inv


def poincare_hopf_audit(s: Section, inv: CriticalInventory) -> dict:
    """Sum of gradient indices plus one source per distinct zero must equal 2."""
    zeros = s.zeros()
    if inv.degenerate_points:
        return {"applicable": False, "reason": "positive-dimensional critical set", "distinct_zeros": len(zeros)}
    total = sum(c.ph_index for c in inv.points) + len(zeros)
    return {"applicable": True, "total": int(total), "passed": total == 2, "distinct_zeros": len(zeros)}


# ---------------------------------------------------------------------------
# the quadric's Lagrange system

@dataclass(frozen=True, eq=False)
class LagrangeSolution:
    x: np.ndarray
    y: np.ndarray
    multipliers: tuple
    residual: float


@dataclass(eq=False)
class LagrangeSystem:
    alpha: np.ndarray
    solutions: list
    residual: float
    degenerate: bool = False
    warnings: list = field(default_factory=list)


def _phase_normalize(v: np.ndarray) -> np.ndarray:
    k = int(np.nonzero(np.abs(v) > 1e-12)[0][0])
    return v * (np.conj(v[k]) / abs(v[k]))


def lagrange_residual(alpha: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float, mu: float) -> float:
    """Max modulus of the eight partial derivatives of F_{lambda,mu}."""
    B = x @ alpha @ y
    ay = alpha @ y
    ax = alpha.T @ x
    eqs = np.concatenate([
        ay * np.conj(B) - lam * np.conj(x),
        B * np.conj(ay) - lam * x,
        ax * np.conj(B) - mu * np.conj(y),
        B * np.conj(ax) - mu * y,
    ])
    return float(np.max(np.abs(eqs)))


def _lagrange_solution(alpha, x, sigma):
    y = np.conj(alpha.T @ x) / sigma
    x = _phase_normalize(x)
    y = _phase_normalize(y / np.linalg.norm(y))
    lam = mu = float(abs(x @ alpha @ y) ** 2)
    return LagrangeSolution(x, y, (lam, mu), lagrange_residual(alpha, x, y, lam, mu))


def solve_quadric_lagrange(alpha, samples: int = 50, rng=None):
    """Constrained critical points of |x^T alpha y|^2 on the unit spheres.

    Returns ``(LagrangeSystem, critical points)``.  The stationarity equations
    reduce to ``alpha y = B conj(x)``, ``alpha^T x = B conj(y)`` with
    ``lambda = mu = |B|^2``, so ``x`` is an eigenvector of the hermitian matrix
    ``conj(alpha) alpha^T``.  A repeated eigenvalue means a 2-sphere of
    solutions; then ``samples`` random solutions are returned.
    """
    from .geometry import quadric

    alpha = np.asarray(alpha, dtype=complex)
    if not np.any(alpha):
        raise PreconditionError("alpha must be nonzero")
    model = quadric()
    s = Section(model, alpha)
    M = np.conj(alpha) @ alpha.T
    ev, X = np.linalg.eigh(M)
    ev = np.clip(ev, 0, None)
    smax = np.sqrt(ev.max())
    sig = np.sqrt(ev)
    sols = []
    degenerate = bool(sig[0] > 1e-8 * smax and abs(sig[1] - sig[0]) <= 1e-10 * smax)
    if degenerate:
        rng = rng or np.random.default_rng(0)
        for _ in range(samples):
            x = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            x /= np.linalg.norm(x)
            sols.append(_lagrange_solution(alpha, x, sig[1]))
    else:
        for k in (1, 0):
            if sig[k] <= 1e-8 * smax:
                continue  # lies on the divisor
            sols.append(_lagrange_solution(alpha, X[:, k], sig[k]))
    system = LagrangeSystem(alpha, sols, max((x.residual for x in sols), default=0.0), degenerate)
    crits = []
    if not degenerate:
        for sol in sols:
            p = model.from_homogeneous((sol.x, sol.y))
            crits.append(classify(s, p, crit_tol=CRIT_TOL))
    return system, crits


# ---------------------------------------------------------------------------
# positive-dimensional critical sets

@dataclass(eq=False)
class DegenerateSet:
    dimension: int
    samples: list
    closed: bool = False
    max_grad: float = 0.0


@dataclass(eq=False)
class DegeneracyReport:
    sets: list

    @property
    def degenerate(self) -> bool:
        return bool(self.sets)

    @property
    def dimension(self) -> int:
        return max((d.dimension for d in self.sets), default=0)


def _null_space(s: Section, p: ProjPoint):
    w, V, _, _ = morse_data(s, p)
    scale = np.max(np.abs(w))
    null = np.abs(w) <= DEGENERACY_THRESHOLD * scale
    return V[:, null]


def _step_and_correct(s: Section, p: ProjPoint, v: np.ndarray, h: float) -> ProjPoint:
    n = s.model.dim
    q = s.model.point(p.chart, p.z + h * (v[:n] + 1j * v[n:]))
    return polish(s, q)


def trace_critical_curve(s: Section, start: ProjPoint, h: float = 0.02, max_steps: int = 5000) -> DegenerateSet:
    """Follow a one-dimensional critical set by continuation until it closes."""
    model = s.model
    pts = [start]
    p = start
    prev_dir = None
    for k in range(max_steps):
        N = _null_space(s, p)
        if N.shape[1] != 1:
            break
        v = N[:, 0]
        v = v / np.sqrt(v @ metric_from_H(kahler_terms(model, p.z[None, :])[3])[0] @ v)
        if prev_dir is not None:
            # keep orientation: compare with the previous direction in this chart
            from .geometry import transport

            pd = transport(prev_dir, p.chart, model).components
            if pd @ v < 0:
                v = -v
        q = _step_and_correct(s, p, v, h)
        prev_dir = TangentVector(p, v)
        step = chordal_distance(p, q)
        if k > 3 and chordal_distance(q, start) <= step:
            # the curve came back: close it at the starting sample
            if chordal_distance(p, start) <= 0.5 * step:
                pts[-1] = start
            else:
                pts.append(start)
            break
        pts.append(q)
        p = q
    closed = len(pts) > 4 and pts[-1] is start
    gmax = max(riemannian_grad_norm(s, q) for q in pts)
    return DegenerateSet(1, pts, closed, gmax)


def sample_critical_manifold(s: Section, start: ProjPoint, n_samples: int = 200, h: float = 0.05, rng=None) -> DegenerateSet:
    """Random-walk continuation on a critical set of dimension >= 2."""
    rng = rng or np.random.default_rng(0)
    pts = [start]
    p = start
    dim = _null_space(s, start).shape[1]
    while len(pts) < n_samples:
        N = _null_space(s, p)
        if N.shape[1] == 0:
            p = pts[rng.integers(len(pts))]
            continue
        v = N @ rng.standard_normal(N.shape[1])
        v /= np.linalg.norm(v)
        q = _step_and_correct(s, p, v, h)
        if riemannian_grad_norm(s, q) <= 1e-9:
            pts.append(q)
            p = q
        else:
            p = pts[rng.integers(len(pts))]
    gmax = max(riemannian_grad_norm(s, q) for q in pts)
    return DegenerateSet(dim, pts, False, gmax)


def degenerate_components(points: list, link: float = 0.15) -> list:
    """Split sampled degenerate points into connected components (single linkage)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    if not points:
        return []
    hom = tuple(np.array([p.homogeneous[k] for p in points]) for k in range(len(points[0].homogeneous)))
    X = projector_features(hom)
    pairs = np.array(sorted(cKDTree(X).query_pairs(np.sqrt(2) * link)), dtype=int).reshape(-1, 2)
    n = len(points)
    A = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(A, directed=False)
    return [[points[i] for i in np.nonzero(labels == k)[0]] for k in range(labels.max() + 1)]


def detect_degenerate(s: Section, inventory: CriticalInventory | None = None, n_samples: int = 200) -> DegeneracyReport:
    """Positive-dimensional critical sets: rank deficiency plus continuation."""
    inv = inventory if inventory is not None else find_critical_points(s)
    sets = []
    for comp in degenerate_components([c.location for c in inv.degenerate_points]):
        start = comp[0]
        dim = _null_space(s, start).shape[1]
        if dim == 1:
            ds = trace_critical_curve(s, start)
        else:
            ds = sample_critical_manifold(s, start, n_samples=n_samples)
        ds.dimension = dim
        sets.append(ds)
    return DegeneracyReport(sets)


# ---------------------------------------------------------------------------
# genericity

def _sylvester(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Sylvester matrix of two binary forms given by full coefficient vectors."""
    m, n = len(f) - 1, len(g) - 1
    S = np.zeros((m + n, m + n), dtype=complex)
    for i in range(n):
        S[i, i:i + m + 1] = f
    for i in range(m):
        S[n + i, i:i + n + 1] = g
    return S


def binary_discriminant(c) -> complex:
    """Discriminant of sum c_k z0^(d-k) z1^k after normalizing ||c||_2 = 1.

    Computed as Res(F_z0, F_z1) / d^(d-2), which treats zeros at infinity like
    any other zero.
    """
    c = np.asarray(c, dtype=complex)
    c = c / np.linalg.norm(c)
    d = len(c) - 1
    if d == 1:
        return 1.0 + 0j
    k = np.arange(d + 1)
    # coefficients of F_z0 and F_z1 in the basis z0^(d-1-j) z1^j
    f0 = ((d - k) * c)[:d]
    f1 = (k * c)[1:]
    return complex(np.linalg.det(_sylvester(f0, f1)) / d ** (d - 2))


@dataclass(frozen=True)
class Genericity:
    classification: str
    discriminant: float
    near_discriminant: bool
    detail: str = ""


def section_is_generic(s: Section, inventory: CriticalInventory | None = None, near: float = 1e-3) -> Genericity:
    """Algebraic genericity tests, optionally combined with the critical search."""
    model = s.model
    if model.kind == "CP1":
        disc = abs(binary_discriminant(s.coefficients))
        zeros = s.zeros()
        if any(m > 1 for _, m in zeros) or disc < 1e-12:
            return Genericity("multiple-zero", disc, True, f"zeros with multiplicities {[m for _, m in zeros]}")
        if model.degree == 2:
            a, b = zeros[0][0], zeros[1][0]
            if abs(np.vdot(a, b)) < 1e-8:
                return Genericity("antipodal", disc, disc < near, "zeros are antipodal")
    elif model.kind == "Quadric":
        a = s.coefficients / np.linalg.norm(s.coefficients)
        disc = abs(np.linalg.det(a))
        if disc < 1e-12:
            return Genericity("reducible", disc, True, "det alpha = 0")
    else:
        a = s.coefficients / np.linalg.norm(s.coefficients)
        disc = abs(np.linalg.det(a))
        if disc < 1e-12:
            return Genericity("reducible", disc, True, "singular conic")
    if inventory is not None and inventory.degenerate_points:
        return Genericity("degenerate-critical", disc, disc < near, "positive-dimensional critical set")
    if model.kind == "Quadric":
        sv = np.linalg.svd(s.coefficients, compute_uv=False)
        if abs(sv[0] - sv[1]) <= 1e-10 * sv[0]:
            return Genericity("degenerate-critical", disc, disc < near, "alpha is a multiple of a unitary matrix")
    return Genericity("generic", disc, disc < near)

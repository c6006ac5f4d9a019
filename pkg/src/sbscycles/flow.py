"""Gradient flow of phi, separatrices and the quadric base sphere.

Trajectories are integrated in the potential parametrization: with
``tau = |phi - phi(start)|`` the flow ``dx/dtau = +-grad phi / |grad phi|^2``
moves along the same curves as the gradient flow but reaches the divisor and
the sinks after a finite, predictable parameter range, and rings of points
from different trajectories land on common level sets.  A Dormand-Prince 5(4)
pair with relative tolerance 1e-10 is used; for CP1 and the quadric the vector
field is evaluated with scalar complex arithmetic because the Kahler matrix is
diagonal there.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .critical import (
    CriticalPoint,
    polish,
    riemannian_grad_norm,
    solve_quadric_lagrange,
)
from .errors import IntegrationError, PreconditionError, ReconstructionError, StabilityError
from .geometry import (
    R_SWITCH,
    ProjPoint,
    TangentVector,
    affine_to_homogeneous,
    homogeneous_to_affine,
    chordal_distance,
    kahler_terms,
    metric_from_H,
    omega_from_H,
    quadric,
)
from .potential import Section, derivatives, im_rho_covector, riemannian_gradient

log = logging.getLogger(__name__)

RTOL = 1e-10
ATOL = 1e-12
H_MAX = 0.05
LAUNCH_EPS = 1e-5
LINEAR_RADIUS = 1e-4
# Hessian scale above which the launch radii shrink proportionally
STEEP_HESSIAN = 20.0
CAPTURE = 1e-8
DIVERGE = 0.05

# Dormand-Prince 5(4)
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = _A[6] + (0.0,)
_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)
_E = tuple(a - b for a, b in zip(_B5, _B4))


# ---------------------------------------------------------------------------
# vector fields

class GradientField:
    """Riemannian gradient of phi in complex form ``c`` plus phi and |grad|^2.

    ``field(chart, z)`` returns ``(c, phi, g2)`` where ``z`` and ``c`` are
    tuples of complex numbers.
    """

    def __init__(self, s: Section):
        self.s = s
        self.model = s.model
        self.n = s.model.dim
        kind = s.model.kind
        if kind == "CP1":
            c = [complex(x) for x in s.coefficients]
            self._polys = (c, c[::-1])
            self._d = float(s.model.degree)
            self.field = self._cp1
        elif kind == "Quadric":
            al = s.coefficients
            self._bil = []
            for ch in range(4):
                cx, cy = ch // 2, ch % 2
                a = al[::-1, :] if cx else al
                a = a[:, ::-1] if cy else a
                self._bil.append(tuple(complex(x) for x in (a[0, 0], a[1, 0], a[0, 1], a[1, 1])))
            self.field = self._quad
        else:
            self.field = self._generic

    def _cp1(self, chart, z):
        (z,) = z
        F = 0j
        dF = 0j
        for a in reversed(self._polys[chart]):
            dF = dF * z + F
            F = F * z + a
        if F == 0:
            raise StabilityError("flow reached the divisor", 0.0)
        r = 1.0 + (z.real * z.real + z.imag * z.imag)
        d = self._d
        c = (math.pi / d) * r * r * (d * z / r - (dF / F).conjugate())
        g2 = d / math.pi * (c.real * c.real + c.imag * c.imag) / (r * r)
        ph = -math.log(abs(F)) + 0.5 * d * math.log(r)
        return (c,), ph, g2

    def _quad(self, chart, z):
        u, v = z
        a00, a10, a01, a11 = self._bil[chart]
        F = a00 + a10 * u + a01 * v + a11 * u * v
        if F == 0:
            raise StabilityError("flow reached the divisor", 0.0)
        Fu = a10 + a11 * v
        Fv = a01 + a11 * u
        ru = 1.0 + (u.real * u.real + u.imag * u.imag)
        rv = 1.0 + (v.real * v.real + v.imag * v.imag)
        cu = math.pi * ru * ru * (u / ru - (Fu / F).conjugate())
        cv = math.pi * rv * rv * (v / rv - (Fv / F).conjugate())
        g2 = ((cu.real ** 2 + cu.imag ** 2) / (ru * ru) + (cv.real ** 2 + cv.imag ** 2) / (rv * rv)) / math.pi
        ph = -math.log(abs(F)) + 0.5 * (math.log(ru) + math.log(rv))
        return (cu, cv), ph, g2

    def _generic(self, chart, z):
        Z = np.array(z, dtype=complex)[None, :]
        ph, pz, _, _, H = derivatives(self.s, chart, Z)
        g = riemannian_gradient(pz, H)[0]
        G = metric_from_H(H)[0]
        n = self.n
        c = tuple(complex(a, b) for a, b in zip(g[:n], g[n:]))
        return c, float(ph[0]), float(g @ G @ g)


def _switch_chart(model, chart, z, b=None):
    """Move to the chart where every factor coordinate has modulus <= 1."""
    if all(abs(x) <= R_SWITCH for x in z):
        return chart, z, b
    kind = model.kind
    if kind == "CP1":
        (w,) = z
        nz = (1 / w,)
        nb = None if b is None else (-b[0] / (w * w),)
        return 1 - chart, nz, nb
    if kind == "Quadric":
        cx, cy = chart // 2, chart % 2
        nz, nb = list(z), None if b is None else list(b)
        fc = [cx, cy]
        for k in range(2):
            if abs(z[k]) > 1.0:
                nz[k] = 1 / z[k]
                if nb is not None:
                    nb[k] = -b[k] / (z[k] * z[k])
                fc[k] = 1 - fc[k]
        return 2 * fc[0] + fc[1], tuple(nz), None if nb is None else tuple(nb)
    p = model.point(chart, z)
    q_chart = model.best_chart_of(p)
    from .geometry import complex_jacobian, transition

    q = transition(p, q_chart, model)
    nb = None
    if b is not None:
        nb = tuple(complex_jacobian(model, chart, q_chart, p.z) @ np.array(b))
    return q_chart, tuple(q.affine), nb


# ---------------------------------------------------------------------------
# trajectories

def points_from_charts(kind: str, charts, coords) -> list:
    """ProjPoints for parallel lists of chart indices and affine tuples (batched)."""
    from .geometry import model_of

    m = model_of(kind)
    charts = np.asarray(charts, dtype=int)
    Z = np.array(coords, dtype=complex).reshape(len(charts), -1)
    out = [None] * len(charts)
    for ch in np.unique(charts):
        idx = np.nonzero(charts == ch)[0]
        hom = affine_to_homogeneous(m, int(ch), Z[idx])
        for j, i in enumerate(idx):
            out[i] = ProjPoint(kind, int(ch), tuple(complex(x) for x in Z[i]), tuple(h[j] for h in hom))
    return out


@dataclass(eq=False)
class Trajectory:
    """Ordered samples of a flow line with their charts and potential values."""

    charts: list
    coords: list
    phis: list
    direction: str
    origin: object
    terminus: object
    kind: str
    h_max: float = H_MAX
    levels: dict = field(default_factory=dict)
    _points: list | None = field(default=None, repr=False)

    @property
    def points(self) -> list:
        if self._points is None:
            self._points = points_from_charts(self.kind, self.charts, self.coords)
        return self._points

    def homogeneous(self) -> tuple:
        from .geometry import model_of

        m = model_of(self.kind)
        pts = self.points
        return tuple(np.array([p.homogeneous[k] for p in pts]) for k in range(len(m.factor_dims)))

    @property
    def arc_length(self) -> float:
        hom = self.homogeneous()
        tot = 0.0
        for h in hom:
            a, b = h[:-1], h[1:]
            ov = np.sum(np.conj(b) * a, axis=1)
            r = a - b * ov[:, None]
            tot = tot + np.sum(np.abs(r) ** 2, axis=1)
        return float(np.sum(np.sqrt(tot)))

    def max_step(self) -> float:
        hom = self.homogeneous()
        tot = 0.0
        for h in hom:
            a, b = h[:-1], h[1:]
            ov = np.sum(np.conj(b) * a, axis=1)
            r = a - b * ov[:, None]
            tot = tot + np.sum(np.abs(r) ** 2, axis=1)
        return float(np.sqrt(tot).max()) if len(hom[0]) > 1 else 0.0

    def reversed_points(self) -> list:
        return self.points[::-1]

    def check_monotone(self):
        ph = np.array(self.phis)
        dif = np.diff(ph)
        bad = dif >= 0 if self.direction == "descending" else dif <= 0
        if np.any(bad):
            k = int(np.argmax(bad))
            raise IntegrationError(f"phi is not strictly monotone at sample {k}")


class _Integrator:
    def __init__(self, s: Section, rtol=RTOL, atol=ATOL, h_max=H_MAX, variational=False):
        self.s = s
        self.F = GradientField(s)
        self.model = s.model
        self.rtol, self.atol, self.h_max = rtol, atol, h_max
        self.variational = variational

    def rhs(self, chart, z, sgn):
        c, ph, g2 = self.F.field(chart, z)
        if g2 == 0.0:
            raise IntegrationError("flow reached a critical point exactly")
        f = tuple(sgn * ck / g2 for ck in c)
        return f, ph, g2

    def rhs_var(self, chart, z, b, sgn):
        f, ph, g2 = self.rhs(chart, z, sgn)
        nb = math.sqrt(sum(abs(x) ** 2 for x in b))
        eta = 1e-6 * max(1.0, max(abs(x) for x in z))
        u = tuple(x / nb for x in b)
        fp, _, _ = self.rhs(chart, tuple(a + eta * e for a, e in zip(z, u)), sgn)
        fm, _, _ = self.rhs(chart, tuple(a - eta * e for a, e in zip(z, u)), sgn)
        db = tuple((p - m) / (2 * eta) * nb for p, m in zip(fp, fm))
        return f, db, ph, g2

    def run(self, chart, z, sgn, *, tau_max=np.inf, levels=(), max_steps=20000, b=None,
            targets=(), phi_floor=-np.inf, stop_radius=LINEAR_RADIUS, escape_nsq=None, capture=True):
        """Integrate until capture, divisor escape, tau_max or the step budget.

        Returns (charts, coords, phis, bs, level_hits, terminus) where
        terminus is ('critical', ProjPoint), ('divisor', None) or
        ('budget', None) / ('tau', None).
        """
        model = self.model
        n = self.F.n
        var = b is not None
        charts, coords, phis, bs = [chart], [tuple(z)], [], [b] if var else []
        if var:
            f, db, ph, g2 = self.rhs_var(chart, z, b, sgn)
        else:
            f, ph, g2 = self.rhs(chart, z, sgn)
        phis.append(ph)
        phi0 = ph
        levels = list(levels)
        hits = {}
        tau = 0.0
        h = min(1e-2, 1e-2 * g2) if g2 < 1 else 1e-2
        tube = self.s.tube
        esc = tube if escape_nsq is None else max(escape_nsq, tube)
        cached = None
        for _step in range(max_steps):
            # step limits: next level, tau_max and the potential floor
            lim = tau_max - tau
            if levels:
                lim = min(lim, abs(phi0 - levels[0]) - tau)
            if sgn < 0 and np.isfinite(phi_floor):
                lim = min(lim, 0.5 * (ph - phi_floor))
            if lim <= 0:
                break
            land = h >= lim
            hh = min(h, lim)
            k = [f]
            kb = [db] if var else None
            ok = True
            try:
                for i in range(1, 7):
                    zi = tuple(z[j] + hh * sum(_A[i][m] * k[m][j] for m in range(i)) for j in range(n))
                    if var:
                        bi = tuple(b[j] + hh * sum(_A[i][m] * kb[m][j] for m in range(i)) for j in range(n))
                        fi, dbi, _, _ = self.rhs_var(chart, zi, bi, sgn)
                        kb.append(dbi)
                    else:
                        fi, _, _ = self.rhs(chart, zi, sgn)
                    k.append(fi)
            except (StabilityError, IntegrationError, ZeroDivisionError, OverflowError, ValueError):
                ok = False
            if ok:
                znew = tuple(z[j] + hh * sum(_B5[m] * k[m][j] for m in range(7)) for j in range(n))
                err = 0.0
                disp = 0.0
                for j in range(n):
                    e = hh * sum(_E[m] * k[m][j] for m in range(7))
                    sc = self.atol + self.rtol * max(abs(z[j]), abs(znew[j]))
                    err = max(err, abs(e) / sc)
                    disp += abs(znew[j] - z[j]) ** 2
                disp = math.sqrt(disp)
                if not math.isfinite(err):
                    ok = False
            if not ok or err > 1.0 or disp > self.h_max:
                if not ok:
                    h = hh * 0.25
                elif disp > self.h_max and err <= 1.0:
                    h = hh * 0.9 * self.h_max / disp
                else:
                    h = hh * max(0.1, 0.9 * err ** -0.2)
                if h < 1e-300:
                    raise IntegrationError("step size collapsed")
                continue
            # accept
            tau += hh
            z = znew
            if var:
                b = tuple(b[j] + hh * sum(_B5[m] * kb[m][j] for m in range(7)) for j in range(n))
            nchart, z2, b2 = _switch_chart(model, chart, z, b if var else None)
            chart, z = nchart, z2
            if var:
                b = b2
            try:
                if var:
                    f, db, ph, g2 = self.rhs_var(chart, z, b, sgn)
                else:
                    f, ph, g2 = self.rhs(chart, z, sgn)
            except StabilityError:
                ph, g2 = np.inf, np.inf
            charts.append(chart)
            coords.append(z)
            phis.append(ph)
            if var:
                bs.append(b)
            if levels and land and abs(abs(phi0 - levels[0]) - tau) < 1e-15 * max(1.0, tau):
                hits[len(hits)] = len(coords) - 1
                levels.pop(0)
            h = hh * min(5.0, max(0.2, 0.9 * max(err, 1e-10) ** -0.2)) if not land else max(h, hh)
            # divisor escape
            nsq = math.exp(-2 * ph) if math.isfinite(ph) else 0.0
            if sgn < 0 and nsq < tube:
                raise StabilityError("descending trajectory entered the divisor tube", nsq)
            if sgn > 0 and nsq < esc:
                return charts, coords, phis, bs, hits, ("divisor", None)
            # capture near a critical point
            g = math.sqrt(g2)
            if capture and g < 1e-2:
                here = model.point(chart, z)
                hit = None
                for t in targets:
                    if chordal_distance(here, t.location) <= stop_radius:
                        hit = t.location
                        break
                if hit is None and not targets:
                    if cached is None or chordal_distance(here, cached) > 10 * stop_radius:
                        cached = polish(self.s, here)
                    if riemannian_grad_norm(self.s, cached) <= 1e-10 and chordal_distance(here, cached) <= stop_radius:
                        hit = cached
                if hit is not None:
                    return charts, coords, phis, bs, hits, ("critical", hit)
            if tau >= tau_max:
                return charts, coords, phis, bs, hits, ("tau", None)
        else:
            return charts, coords, phis, bs, hits, ("budget", None)
        return charts, coords, phis, bs, hits, ("tau", None)


def integrate_flow(s: Section, start: ProjPoint, direction: str = "descending", budget: int = 20000,
                   h_max: float = H_MAX, rtol: float = RTOL, criticals=None, tau_max: float = np.inf) -> Trajectory:
    """Integrate the gradient flow of phi from ``start``.

    Stops when the trajectory comes within the linearization radius of a
    critical point (the critical point is then appended as the last sample),
    when it enters the divisor tube (ascending runs), or when the step budget
    or the potential range ``tau_max`` is exhausted.
    """
    if direction not in ("descending", "ascending"):
        raise ValueError("direction must be 'descending' or 'ascending'")
    gn = riemannian_grad_norm(s, start)
    if gn <= 1e-9:
        raise PreconditionError("start point is critical")
    sgn = -1.0 if direction == "descending" else 1.0
    integ = _Integrator(s, rtol=rtol, h_max=h_max)
    targets = tuple(criticals or ())
    floor = min((c.phi_value for c in targets), default=-np.inf) if sgn < 0 else -np.inf
    charts, coords, phis, _, _, term = integ.run(
        start.chart, tuple(start.affine), sgn, tau_max=tau_max, max_steps=budget,
        targets=targets, phi_floor=floor,
    )
    terminus = _finish(s, charts, coords, phis, term, targets)
    traj = Trajectory(charts, coords, phis, direction, start, terminus, s.model.kind, h_max)
    traj.check_monotone()
    return traj


def _finish(s, charts, coords, phis, term, targets):
    kind, where = term
    if kind == "critical":
        from .potential import phi as _phi

        c = where
        for t in targets:
            if chordal_distance(t.location, where) <= 1e-6:
                c = t
                break
        loc = c.location if isinstance(c, CriticalPoint) else c
        charts.append(loc.chart)
        coords.append(tuple(loc.affine))
        phis.append(c.phi_value if isinstance(c, CriticalPoint) else _phi(s, loc))
        return c
    if kind == "divisor":
        return "divisor-escape"
    if kind == "budget":
        return "budget-exhausted"
    return "range-exhausted"


# ---------------------------------------------------------------------------
# separatrices

@dataclass(eq=False)
class Separatrix:
    """Descending flow line from a saddle to a critical point (one half-branch)."""

    trajectory: Trajectory
    saddle: CriticalPoint
    sink: CriticalPoint
    end_tangents: tuple
    branch: int = 1

    @property
    def points(self):
        return self.trajectory.points


def unit_tangent(s: Section, base: ProjPoint, v: np.ndarray) -> TangentVector:
    G = metric_from_H(kahler_terms(s.model, base.z[None, :])[3])[0]
    return TangentVector(base, v / math.sqrt(v @ G @ v))


def _launch(s, saddle: CriticalPoint, v: TangentVector, sign: float, criticals, h_max, rtol, direction="descending"):
    """Trace one branch leaving ``saddle`` along ``sign * v``."""
    model = s.model
    base = saddle.location
    n = model.dim
    vc = sign * (v.components[:n] + 1j * v.components[n:])
    # the linear approximation holds on a scale inversely proportional to
    # the curvature: shrink the launch circle at very steep saddles
    shrink = min(1.0, STEEP_HESSIAN / float(np.max(np.abs(saddle.eigenvalues))))
    p_eps = model.point(base.chart, base.z + shrink * LAUNCH_EPS * vc)
    p_lin = model.point(base.chart, base.z + shrink * LINEAR_RADIUS * vc)
    from .potential import phi as _phi

    sgn = -1.0 if direction == "descending" else 1.0
    integ = _Integrator(s, rtol=rtol, h_max=h_max)
    others = tuple(c for c in criticals if c is not saddle)
    floor = min((c.phi_value for c in others), default=-np.inf) if sgn < 0 else -np.inf
    charts, coords, phis, _, _, term = integ.run(
        p_lin.chart, tuple(p_lin.affine), sgn, targets=others if sgn < 0 else (), phi_floor=floor,
    )
    terminus = _finish(s, charts, coords, phis, term, others)
    charts = [base.chart, p_eps.chart] + charts
    coords = [tuple(base.affine), tuple(p_eps.affine)] + coords
    phis = [saddle.phi_value, _phi(s, p_eps)] + phis
    traj = Trajectory(charts, coords, phis, direction, saddle, terminus, model.kind, h_max)
    traj.check_monotone()
    return traj


def trace_separatrices(s: Section, criticals, h_max: float = H_MAX, rtol: float = RTOL):
    """Descending separatrices from every saddle along +- each negative eigenvector.

    Each returned :class:`Separatrix` is one branch; the two branches of an
    index-1 saddle on CP1 form the full flow line through it.  Branches that
    do not end at a critical point are reported in the warnings list.
    Returns ``(separatrices, warnings)``.
    """
    crit = [c for c in criticals if not c.degenerate]
    seps, warnings = [], []
    for sd in crit:
        if not sd.is_saddle:
            continue
        for v in sd.neg_eigenvectors:
            for branch in (1, -1):
                try:
                    traj = _launch(s, sd, v, branch, crit, h_max, rtol)
                except (IntegrationError, StabilityError) as exc:
                    warnings.append(f"branch from saddle at {sd.location.affine} failed: {exc}")
                    continue
                if not isinstance(traj.terminus, CriticalPoint):
                    warnings.append(f"branch from saddle at {sd.location.affine} ended with {traj.terminus}")
                    continue
                sink = traj.terminus
                t0 = unit_tangent(s, sd.location, branch * v.components)
                t1 = _end_tangent(s, traj, sink)
                seps.append(Separatrix(traj, sd, sink, (t0, t1), branch))
    return seps, warnings


def _end_tangent(s, traj: Trajectory, sink: CriticalPoint) -> TangentVector:
    """Unit tangent at the sink pointing back along the trajectory."""
    from .geometry import transition

    loc = sink.location
    prev = s.model.point(traj.charts[-2], traj.coords[-2])
    prev = transition(prev, loc.chart, s.model)
    d = prev.z - loc.z
    return unit_tangent(s, loc, np.concatenate([d.real, d.imag]))


def separatrix_lines(seps) -> list:
    """Group branches by saddle and eigen-direction into full flow lines."""
    out = {}
    for sp in seps:
        key = (id(sp.saddle), id(sp.saddle.neg_eigenvectors[0]) if sp.saddle.neg_eigenvectors else 0)
        out.setdefault(key, []).append(sp)
    return [sorted(v, key=lambda x: -x.branch) for v in out.values()]


def ascend_to_divisor(s: Section, saddle: CriticalPoint, v: TangentVector, sign: float = 1.0,
                      escape: float = 1e-6, rtol: float = 1e-7, h_max=H_MAX):
    """Ascending branch from a saddle along ``sign * v`` until ``|s|^2`` drops below
    ``escape * scale^2``.  Returns the final point; used to identify the zero
    whose basin lies on that side of the saddle.
    """
    model = s.model
    base = saddle.location
    n = model.dim
    vc = sign * v.complex[:n]
    p = model.point(base.chart, base.z + LINEAR_RADIUS * vc)
    integ = _Integrator(s, rtol=rtol, h_max=h_max)
    charts, coords, _, _, _, term = integ.run(p.chart, tuple(p.affine), 1.0, escape_nsq=escape * s.scale ** 2, capture=False)
    if term[0] != "divisor":
        raise IntegrationError(f"ascending branch ended with {term[0]}")
    return model.point(charts[-1], coords[-1])


# ---------------------------------------------------------------------------
# the base sphere of a quadric section

@dataclass(eq=False)
class SphereMesh:
    """Triangulated unstable manifold; vertex k is ``(charts[k], coords[k])``."""

    charts: np.ndarray
    coords: np.ndarray
    triangles: np.ndarray
    omega_residual: float
    euler_characteristic: int
    closed: bool
    chord_residual: float
    sbs_residual: float
    min_norm_sq: float
    isotropy: float
    thetas: np.ndarray
    levels: np.ndarray
    mean_triangle_area: float
    rings: int = 0
    _vertices: list | None = field(default=None, repr=False)

    @property
    def n_theta(self) -> int:
        return len(self.thetas)

    @property
    def vertices(self) -> list:
        if self._vertices is None:
            m = quadric()
            self._vertices = [m.point(int(c), tuple(z)) for c, z in zip(self.charts, self.coords)]
        return self._vertices

    def homogeneous(self) -> tuple:
        return _ring_hom(quadric(), (self.charts, self.coords, None))


def _mesh_topology(n_rings: int, m: int):
    """Triangles for apex 0, rings of m vertices, and apex at the end."""
    tris = []
    ring = lambda k, i: 1 + k * m + (i % m)
    last = 1 + n_rings * m
    for i in range(m):
        tris.append((0, ring(0, i), ring(0, i + 1)))
    for k in range(n_rings - 1):
        for i in range(m):
            tris.append((ring(k, i), ring(k + 1, i), ring(k + 1, i + 1)))
            tris.append((ring(k, i), ring(k + 1, i + 1), ring(k, i + 1)))
    for i in range(m):
        tris.append((last, ring(n_rings - 1, i + 1), ring(n_rings - 1, i)))
    return np.array(tris, dtype=int), last + 1


def mesh_euler(triangles: np.ndarray, n_vertices: int):
    """Euler characteristic and closedness (every edge in exactly two triangles)."""
    edges = {}
    for t in triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    used = len(set(np.asarray(triangles).ravel().tolist()))
    closed = all(c == 2 for c in edges.values()) and used == n_vertices
    return n_vertices - len(edges) + len(triangles), closed


class _QuadricBatch:
    """Vectorized adaptive integration of many quadric trajectories at once.

    Every row carries its own chart, step size and potential parameter; rows
    land exactly on the common level values and stop when they come within
    the linearization radius of the minimum.
    """

    def __init__(self, s: Section, rtol=RTOL, atol=ATOL, h_max=H_MAX):
        self.s = s
        al = s.coefficients
        bil = []
        for ch in range(4):
            cx, cy = ch // 2, ch % 2
            a = al[::-1, :] if cx else al
            a = a[:, ::-1] if cy else a
            bil.append((a[0, 0], a[1, 0], a[0, 1], a[1, 1]))
        self.bil = np.array(bil, dtype=complex)
        self.rtol, self.atol, self.h_max = rtol, atol, h_max

    def field(self, C, Z):
        a = self.bil[C]
        u, v = Z[:, 0], Z[:, 1]
        F = a[:, 0] + a[:, 1] * u + a[:, 2] * v + a[:, 3] * u * v
        Fu = a[:, 1] + a[:, 3] * v
        Fv = a[:, 2] + a[:, 3] * u
        ru = 1.0 + np.abs(u) ** 2
        rv = 1.0 + np.abs(v) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            cu = np.pi * ru * ru * (u / ru - np.conj(Fu / F))
            cv = np.pi * rv * rv * (v / rv - np.conj(Fv / F))
            g2 = (np.abs(cu) ** 2 / ru ** 2 + np.abs(cv) ** 2 / rv ** 2) / np.pi
            ph = -np.log(np.abs(F)) + 0.5 * (np.log(ru) + np.log(rv))
        return np.stack([cu, cv], axis=1), ph, g2

    def rhs(self, C, Z, B):
        c, ph, g2 = self.field(C, Z)
        f = -c / g2[:, None]
        nb = np.linalg.norm(B, axis=1)
        eta = 1e-6 * np.maximum(1.0, np.abs(Z).max(axis=1))
        e = (eta / nb)[:, None] * B
        cp, _, gp = self.field(C, Z + e)
        cm, _, gm = self.field(C, Z - e)
        db = (-cp / gp[:, None] + cm / gm[:, None]) / (2 * eta / nb)[:, None]
        return f, db, ph, g2

    @staticmethod
    def switch(C, Z, B):
        big = np.abs(Z) > 1.0
        rows = np.any(np.abs(Z) > R_SWITCH, axis=1)
        big &= rows[:, None]
        if not big.any():
            return C, Z, B
        Z, B, C = Z.copy(), B.copy(), C.copy()
        with np.errstate(divide="ignore", invalid="ignore"):
            Bn = np.where(big, -B / Z ** 2, B)
            Zn = np.where(big, 1 / Z, Z)
        C = C ^ (big[:, 0] * 2 + big[:, 1] * 1)
        return C, Zn, Bn

    def run(self, C, Z, B, levels, pmin: CriticalPoint, phi_floor, stop_radius=LINEAR_RADIUS, max_iter=20000):
        N = len(C)
        K = len(levels)
        C, Z, B = C.copy(), Z.astype(complex), B.astype(complex)
        f, db, ph, g2 = self.rhs(C, Z, B)
        phi0 = ph.copy()
        tau = np.zeros(N)
        h = np.where(g2 < 1, 1e-2 * g2, 1e-2)
        lev = np.zeros(N, dtype=int)
        done = np.zeros(N, dtype=bool)
        failed = np.zeros(N, dtype=bool)
        rC = np.zeros((N, K), dtype=int)
        rZ = np.zeros((N, K, 2), dtype=complex)
        rB = np.zeros((N, K, 2), dtype=complex)
        target = tuple(h_[None, :] for h_ in pmin.location.homogeneous)
        levels = np.asarray(levels, dtype=float)
        for _ in range(max_iter):
            act = np.nonzero(~done)[0]
            if len(act) == 0:
                break
            c_, z_, b_, f_, db_, ph_ = C[act], Z[act], B[act], f[act], db[act], ph[act]
            lim = 0.5 * (ph_ - phi_floor)
            nxt = lev[act] < K
            lvl = np.where(nxt, levels[np.minimum(lev[act], K - 1)], -np.inf)
            lim = np.where(nxt, np.minimum(lim, (phi0[act] - lvl) - tau[act]), lim)
            land = nxt & (h[act] >= lim)
            hh = np.minimum(h[act], lim)[:, None]
            k = [f_]
            kb = [db_]
            with np.errstate(all="ignore"):
                for i in range(1, 7):
                    zi = z_ + hh * sum(_A[i][m] * k[m] for m in range(i))
                    bi = b_ + hh * sum(_A[i][m] * kb[m] for m in range(i))
                    fi, dbi, _, _ = self.rhs(c_, zi, bi)
                    k.append(fi)
                    kb.append(dbi)
                zn = z_ + hh * sum(_B5[m] * k[m] for m in range(7))
                bn = b_ + hh * sum(_B5[m] * kb[m] for m in range(7))
                e = hh * sum(_E[m] * k[m] for m in range(7))
                sc = self.atol + self.rtol * np.maximum(np.abs(z_), np.abs(zn))
                err = np.max(np.abs(e) / sc, axis=1)
                disp = np.linalg.norm(zn - z_, axis=1)
            bad = ~np.isfinite(err) | ~np.all(np.isfinite(zn), axis=1)
            ok = ~bad & (err <= 1.0) & (disp <= self.h_max)
            hv = hh[:, 0]
            with np.errstate(all="ignore"):
                grow = hv * np.clip(0.9 * np.maximum(err, 1e-10) ** -0.2, 0.2, 5.0)
                shrink = np.where(bad, 0.25 * hv,
                                  np.where(err <= 1.0, 0.9 * hv * self.h_max / np.maximum(disp, 1e-300),
                                           hv * np.maximum(0.1, 0.9 * np.maximum(err, 1e-300) ** -0.2)))
            h[act] = np.where(ok, np.where(land, np.maximum(h[act], hv), grow), shrink)
            if np.any(h[act] < 1e-300):
                failed[act[h[act] < 1e-300]] = True
                done[act[h[act] < 1e-300]] = True
            acc = act[ok]
            if len(acc) == 0:
                continue
            tau[acc] += hv[ok]
            Cn, Zn, Bn = self.switch(c_[ok], zn[ok], bn[ok])
            C[acc], Z[acc], B[acc] = Cn, Zn, Bn
            fn, dbn, phn, g2n = self.rhs(Cn, Zn, Bn)
            f[acc], db[acc], ph[acc], g2[acc] = fn, dbn, phn, g2n
            landed = acc[land[ok]]
            if len(landed):
                li = lev[landed]
                rC[landed, li] = C[landed]
                rZ[landed, li] = Z[landed]
                rB[landed, li] = B[landed]
                lev[landed] += 1
            nsq = np.exp(-2 * ph[acc])
            div = ~(nsq >= self.s.tube)
            if div.any():
                failed[acc[div]] = True
                done[acc[div]] = True
            fin = acc[(lev[acc] == K) & (g2[acc] < 1e-4)]
            if len(fin):
                dist2 = np.zeros(len(fin))
                for ci in range(4):
                    sel = C[fin] == ci
                    if sel.any():
                        hz = affine_to_homogeneous(self.s.model, ci, Z[fin[sel]])
                        for fct in range(2):
                            a = hz[fct]
                            ov = a @ np.conj(target[fct][0])
                            r = a - ov[:, None] * target[fct]
                            dist2[sel] += np.sum(np.abs(r) ** 2, axis=1)
                near = np.sqrt(dist2) <= stop_radius
                done[fin[near]] = True
        else:
            failed |= ~done
        return rC, rZ, rB, failed | (lev < K)


def _level_values(phi_s, phi_min, n_rings):
    k = np.arange(1, n_rings + 1)
    w = np.sin(0.5 * np.pi * k / (n_rings + 1)) ** 2
    return phi_s - (phi_s - phi_min) * w


def _ring_gaps(model, ring_a, ring_b):
    """Max chordal distance between two adjacent trajectories over all levels."""
    tot = 0.0
    ha = _ring_hom(model, ring_a)
    hb = _ring_hom(model, ring_b)
    for x, y in zip(ha, hb):
        ov = np.sum(np.conj(y) * x, axis=1)
        tot = tot + np.sum(np.abs(x - y * ov[:, None]) ** 2, axis=1)
    return float(np.sqrt(tot).max())


def _ring_hom(model, ring):
    rC, rZ, _ = ring
    out = [np.zeros((len(rC), 2), dtype=complex) for _ in range(2)]
    for ci in np.unique(rC):
        sel = rC == ci
        hz = affine_to_homogeneous(model, int(ci), rZ[sel])
        for f in range(2):
            out[f][sel] = hz[f]
    return out


def reconstruct_base_sphere(alpha, saddle: CriticalPoint | None = None, n_theta: int = 256, n_rings: int = 48,
                            refine: bool = True, diverge: float = DIVERGE, max_directions: int = 2048,
                            rtol: float = RTOL, h_max: float = H_MAX) -> SphereMesh:
    """Unstable manifold of the index-2 saddle of a quadric section as a mesh.

    Descending trajectories start on a small circle in the negative eigenspace
    (linearized flow inside the radius 1e-4), are integrated with the
    variational equation for the angular derivative, sampled on common level
    sets of phi and stitched with the two cone points into a sphere.
    """
    alpha = np.asarray(alpha, dtype=complex)
    s = Section(quadric(), alpha)
    system, crits = solve_quadric_lagrange(alpha)
    if system.degenerate:
        raise PreconditionError("alpha has a two-dimensional critical set")
    saddles = [c for c in crits if c.morse_index == 2]
    minima = [c for c in crits if c.morse_index == 0]
    if saddle is None:
        if not saddles:
            raise PreconditionError("no index-2 saddle: section has a single critical point")
        saddle = saddles[0]
    if saddle.morse_index != 2:
        raise PreconditionError("saddle must have Morse index 2")
    if not minima:
        raise PreconditionError("no minimum found")
    pmin = minima[0]
    model = s.model
    n = model.dim
    W = omega_from_H(kahler_terms(model, saddle.location.z[None, :])[3])[0]
    u_r, v_r = (x.components for x in saddle.neg_eigenvectors)
    iso = abs(u_r @ W @ v_r)
    if iso > 1e-8:
        raise PreconditionError(f"negative eigenspace is not isotropic ({iso:.2e})")
    u = u_r[:n] + 1j * u_r[n:]
    v = v_r[:n] + 1j * v_r[n:]
    levels = _level_values(saddle.phi_value, pmin.phi_value, n_rings)
    batch = _QuadricBatch(s, rtol=rtol, h_max=h_max)

    def trace(ths):
        ths = np.asarray(ths, dtype=float)
        dirc = np.cos(ths)[:, None] * u + np.sin(ths)[:, None] * v
        dvar = -np.sin(ths)[:, None] * u + np.cos(ths)[:, None] * v
        Z0 = saddle.location.z[None, :] + LINEAR_RADIUS * dirc
        B0 = LINEAR_RADIUS * dvar
        C0 = np.full(len(ths), saddle.location.chart)
        C0, Z0, B0 = _QuadricBatch.switch(C0, Z0, B0)
        rC, rZ, rB, failed = batch.run(C0, Z0, B0, levels, pmin, pmin.phi_value)
        if failed.any():
            th = float(ths[np.argmax(failed)])
            raise ReconstructionError(f"trajectory at theta={th:.6f} did not reach the minimum", th)
        return {float(th): (rC[i], rZ[i], rB[i]) for i, th in enumerate(ths)}

    traced = trace(np.linspace(0, 2 * np.pi, n_theta, endpoint=False))
    while refine:
        order = sorted(traced)
        new = []
        for i, th in enumerate(order):
            nxt = order[(i + 1) % len(order)]
            gap = (nxt - th) % (2 * np.pi)
            if _ring_gaps(model, traced[th], traced[nxt]) > diverge:
                new.append((th + gap / 2) % (2 * np.pi))
        if not new:
            break
        if len(traced) + len(new) > max_directions:
            log.warning("sphere refinement capped at %d directions", max_directions)
            break
        traced.update(trace(new))
    order = np.array(sorted(traced))
    m = len(order)
    rC = np.stack([traced[th][0] for th in order], axis=1).ravel()
    rZ = np.stack([traced[th][1] for th in order], axis=1).reshape(-1, 2)
    rB = np.stack([traced[th][2] for th in order], axis=1).reshape(-1, 2)
    charts = np.concatenate([[saddle.location.chart], rC, [pmin.location.chart]]).astype(int)
    coords = np.concatenate([saddle.location.z[None, :], rZ, pmin.location.z[None, :]])
    tris, nv = _mesh_topology(n_rings, m)
    chi, closed = mesh_euler(tris, nv)
    res, sbs, min_nsq = _frame_residuals(s, rC, rZ, rB)
    chord, mean_area = _chord_residual(model, charts, coords, tris)
    return SphereMesh(charts, coords, tris, res, chi, closed, chord, sbs, min_nsq, iso, order, levels,
                      mean_area, n_rings)


def _frame_residuals(s, C, Z, B):
    """omega(a, b) / |a ^ b| and Im rho on the flow and angular tangent vectors."""
    model = s.model
    res = sbs = 0.0
    min_nsq = np.inf
    batch = _QuadricBatch(s)
    for ci in np.unique(C):
        sel = C == ci
        z, bb = Z[sel], B[sel]
        c, ph, _ = batch.field(np.full(len(z), ci), z)
        H = kahler_terms(model, z)[3]
        G = metric_from_H(H)
        Wm = omega_from_H(H)
        ar = np.concatenate([c.real, c.imag], axis=1)
        br = np.concatenate([bb.real, bb.imag], axis=1)
        gaa = np.einsum("ni,nij,nj->n", ar, G, ar)
        gbb = np.einsum("ni,nij,nj->n", br, G, br)
        gab = np.einsum("ni,nij,nj->n", ar, G, br)
        w = np.einsum("ni,nij,nj->n", ar, Wm, br)
        area = np.sqrt(np.maximum(gaa * gbb - gab ** 2, 1e-300))
        res = max(res, float(np.max(np.abs(w) / area)))
        _, pz, _, _, _ = derivatives(s, int(ci), z)
        cov = im_rho_covector(pz)
        sbs = max(sbs, float(np.max(np.abs(np.sum(cov * br, axis=1)) / np.sqrt(gbb))),
                  float(np.max(np.abs(np.sum(cov * ar, axis=1)) / np.sqrt(gaa))))
        min_nsq = min(min_nsq, float(np.min(np.exp(-2 * ph))))
    return res, sbs, min_nsq


def _chord_residual(model, charts, coords, tris):
    """Largest |omega(e1, e2)| / |e1 ^ e2| over triangles using chart chords."""
    hom = _ring_hom(model, (charts, coords, None))
    worst = 0.0
    areas = []
    first = tris[:, 0]
    fch = np.stack([np.argmax(np.abs(h[first]), axis=1) for h in hom], axis=1)
    tch = 2 * fch[:, 0] + fch[:, 1]
    for ci in np.unique(tch):
        sel = tris[tch == ci]
        zs = [homogeneous_to_affine(model, int(ci), tuple(h[sel[:, j]] for h in hom)) for j in range(3)]
        e1 = zs[1] - zs[0]
        e2 = zs[2] - zs[0]
        mid = (zs[0] + zs[1] + zs[2]) / 3
        H = kahler_terms(model, mid)[3]
        G = metric_from_H(H)
        Wm = omega_from_H(H)
        a = np.concatenate([e1.real, e1.imag], axis=1)
        b = np.concatenate([e2.real, e2.imag], axis=1)
        ar = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", a, G, a) * np.einsum("ni,nij,nj->n", b, G, b)
                                - np.einsum("ni,nij,nj->n", a, G, b) ** 2, 0.0))
        w = np.abs(np.einsum("ni,nij,nj->n", a, Wm, b))
        areas.append(ar / 2)
        pos = ar > 0
        if pos.any():
            worst = max(worst, float(np.max(w[pos] / ar[pos])))
    return worst, float(np.mean(np.concatenate(areas)))

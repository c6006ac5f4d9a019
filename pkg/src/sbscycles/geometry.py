"""Chart atlases, Fubini-Study forms, bundle norms and area functionals.

Three polarized models are supported:

* ``CP1`` with ``O(d)``: charts ``[1:z]`` (chart 0) and ``[w:1]`` (chart 1).
* ``Quadric`` = CP1 x CP1 with ``O(1,1)``: four charts indexed by
  ``2*cx + cy`` where ``cx, cy`` pick the chart of each factor.
* ``CP2`` with ``O(2)``: charts ``i = 0, 1, 2`` where homogeneous
  coordinate ``z_i`` is set to one.

Real coordinates in a chart are always ordered ``(Re z_1..Re z_n, Im z_1..Im z_n)``.
The Kahler potential of the bundle metric is ``Psi = d ln(1+|z|^2)`` on
projective space (sum over factors on the quadric) and the symplectic form is
``omega = (i/2pi) d d-bar Psi``, so that ``[omega] = c1(L)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ChartError, ConfigurationError, GeometryError

R_SWITCH = 1.5
#: chordal tolerance for point equality
POINT_TOL = 1e-9

_FACTORS = {"CP1": (1,), "Quadric": (1, 1), "CP2": (2,)}
_CHARTS = {"CP1": 2, "Quadric": 4, "CP2": 3}


@dataclass(frozen=True)
class PolarizedModel:
    """A polarized toy variety together with its chart atlas."""

    kind: str
    degree: int = 1

    def __post_init__(self):
        if self.kind not in _FACTORS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigurationError("degree must be a positive integer")
        fixed = {"Quadric": 1, "CP2": 2}
        if self.kind in fixed and self.degree != fixed[self.kind]:
            raise ConfigurationError(f"{self.kind} has fixed degree {fixed[self.kind]}")

    # -- basic structure -------------------------------------------------
    @property
    def chart_count(self) -> int:
        return _CHARTS[self.kind]

    @property
    def factor_dims(self) -> tuple:
        return _FACTORS[self.kind]

    @property
    def dim(self) -> int:
        """Complex dimension n."""
        return sum(self.factor_dims)

    @property
    def weights(self) -> np.ndarray:
        """Potential weight of each affine coordinate's factor."""
        if self.kind == "Quadric":
            return np.array([1.0, 1.0])
        return np.full(self.dim, float(self.degree))

    @property
    def total_class(self) -> int:
        """Integral of omega^n over the model."""
        return {"CP1": self.degree, "Quadric": 2, "CP2": 4}[self.kind]

    def factor_charts(self, chart: int) -> tuple:
        if not 0 <= chart < self.chart_count:
            raise ChartError(f"chart {chart} does not exist on {self.kind}")
        if self.kind == "Quadric":
            return (chart // 2, chart % 2)
        return (chart,)

    def chart_from_factors(self, fcharts: Sequence[int]) -> int:
        if self.kind == "Quadric":
            return 2 * int(fcharts[0]) + int(fcharts[1])
        return int(fcharts[0])

    def homogeneous_index(self, chart: int) -> np.ndarray:
        """Index of each affine coordinate inside the concatenated homogeneous vector."""
        out, offset = [], 0
        for m, a in zip(self.factor_dims, self.factor_charts(chart)):
            out.extend(offset + k for k in range(m + 1) if k != a)
            offset += m + 1
        return np.array(out, dtype=int)

    # -- point construction ------------------------------------------------
    def point(self, chart: int, affine) -> "ProjPoint":
        aff = tuple(complex(a) for a in np.atleast_1d(affine))
        if len(aff) != self.dim:
            raise GeometryError(f"{self.kind} needs {self.dim} affine coordinates")
        hom = affine_to_homogeneous(self, chart, np.array(aff)[None, :])
        return ProjPoint(self.kind, int(chart), aff, tuple(h[0] for h in hom))

    def from_homogeneous(self, hom, chart: int | None = None) -> "ProjPoint":
        """Build a point from homogeneous data (one vector per factor)."""
        if isinstance(hom, np.ndarray) and hom.ndim == 1:
            hom = (hom,)
        hom = tuple(np.asarray(h, dtype=complex) for h in hom)
        if len(hom) != len(self.factor_dims):
            raise GeometryError("wrong number of homogeneous factors")
        units = []
        for h, m in zip(hom, self.factor_dims):
            nrm = np.linalg.norm(h)
            if h.shape != (m + 1,) or nrm == 0:
                raise GeometryError("invalid homogeneous vector")
            units.append(h / nrm)
        if chart is None:
            chart = self.chart_from_factors([int(np.argmax(np.abs(h))) for h in units])
        aff = homogeneous_to_affine(self, chart, tuple(u[None, :] for u in units))[0]
        return ProjPoint(self.kind, int(chart), tuple(complex(a) for a in aff), tuple(units))

    def best_chart_of(self, p: "ProjPoint") -> int:
        return self.chart_from_factors([int(np.argmax(np.abs(h))) for h in p.homogeneous])


def cp1(d: int) -> PolarizedModel:
    return PolarizedModel("CP1", d)


def quadric() -> PolarizedModel:
    return PolarizedModel("Quadric", 1)


def cp2() -> PolarizedModel:
    return PolarizedModel("CP2", 2)


def model_of(kind: str, degree: int | None = None) -> PolarizedModel:
    if kind == "CP1":
        return PolarizedModel("CP1", degree or 1)
    return PolarizedModel(kind, {"Quadric": 1, "CP2": 2}.get(kind, degree or 1))


@dataclass(frozen=True, eq=False)
class ProjPoint:
    """A point of the model: chart index, affine coordinates, unit homogeneous cache."""

    kind: str
    chart: int
    affine: tuple
    homogeneous: tuple = field(repr=False)

    @property
    def z(self) -> np.ndarray:
        return np.array(self.affine, dtype=complex)

    @property
    def model_dim(self) -> int:
        return sum(_FACTORS[self.kind])

    def same_as(self, other: "ProjPoint", tol: float = POINT_TOL) -> bool:
        return chordal_distance(self, other) <= tol


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Real tangent vector of length 2n expressed in the chart of ``base``."""

    base: ProjPoint
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (2 * self.base.model_dim,) or not np.all(np.isfinite(c)):
            raise GeometryError("tangent components must be finite with length 2n")
        object.__setattr__(self, "components", c)

    @property
    def complex(self) -> np.ndarray:
        n = self.base.model_dim
        return self.components[:n] + 1j * self.components[n:]


# ---------------------------------------------------------------------------
# chart maps (batched: affine arrays have shape (N, n))

def affine_to_homogeneous(model: PolarizedModel, chart: int, Z: np.ndarray) -> tuple:
    """Unit homogeneous vectors, one array of shape (N, m+1) per factor."""
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    out, col = [], 0
    for m, a in zip(model.factor_dims, model.factor_charts(chart)):
        w = Z[:, col:col + m]
        col += m
        h = np.insert(w, a, 1.0, axis=1)
        out.append(h / np.linalg.norm(h, axis=1, keepdims=True))
    return tuple(out)


def homogeneous_to_affine(model: PolarizedModel, chart: int, hom: tuple) -> np.ndarray:
    cols = []
    for h, a in zip(hom, model.factor_charts(chart)):
        h = np.atleast_2d(h)
        piv = h[:, a]
        if np.any(np.abs(piv) < 1e-300 + 1e-15 * np.linalg.norm(h, axis=1)):
            raise ChartError(f"chart {chart} is undefined at this point")
        cols.append(np.delete(h, a, axis=1) / piv[:, None])
    return np.concatenate(cols, axis=1)


def transition(p: ProjPoint, target_chart: int, model: PolarizedModel | None = None) -> ProjPoint:
    """Express ``p`` in ``target_chart``."""
    model = model or _model_for(p)
    aff = homogeneous_to_affine(model, target_chart, tuple(h[None, :] for h in p.homogeneous))[0]
    return ProjPoint(p.kind, int(target_chart), tuple(complex(a) for a in aff), p.homogeneous)


def complex_jacobian(model: PolarizedModel, src: int, dst: int, z: np.ndarray) -> np.ndarray:
    """Holomorphic Jacobian d(affine_dst)/d(affine_src) at affine point z of chart src."""
    z = np.asarray(z, dtype=complex)
    n = model.dim
    J = np.zeros((n, n), dtype=complex)
    col = 0
    for m, a, b in zip(model.factor_dims, model.factor_charts(src), model.factor_charts(dst)):
        w = z[col:col + m]
        h = np.insert(w, a, 1.0)
        if abs(h[b]) == 0:
            raise ChartError("target chart undefined")
        src_idx = [k for k in range(m + 1) if k != a]
        dst_idx = [k for k in range(m + 1) if k != b]
        for r, k in enumerate(dst_idx):
            for c, j in enumerate(src_idx):
                J[col + r, col + c] = ((k == j) * h[b] - h[k] * (b == j)) / h[b] ** 2
        col += m
    return J


def real_jacobian(Jc: np.ndarray) -> np.ndarray:
    return np.block([[Jc.real, -Jc.imag], [Jc.imag, Jc.real]])


def transport(v: TangentVector, target_chart: int, model: PolarizedModel | None = None) -> TangentVector:
    """Move a tangent vector to another chart by the real Jacobian."""
    model = model or _model_for(v.base)
    q = transition(v.base, target_chart, model)
    J = real_jacobian(complex_jacobian(model, v.base.chart, target_chart, v.base.z))
    return TangentVector(q, J @ v.components)


def _model_for(p: ProjPoint) -> PolarizedModel:
    # degree is irrelevant for chart plumbing
    return model_of(p.kind)


def chordal_distance(p: ProjPoint, q: ProjPoint) -> float:
    """Fubini-Study chordal distance, combined in squares over factors."""
    tot = 0.0
    for a, b in zip(p.homogeneous, q.homogeneous):
        # norm of the part of a orthogonal to b; stable for nearby points
        tot += float(np.linalg.norm(a - b * np.vdot(b, a)) ** 2)
    return float(np.sqrt(tot))


def chordal_matrix(A: tuple, B: tuple) -> np.ndarray:
    """Pairwise chordal distances between two batches of homogeneous data."""
    tot = 0.0
    for a, b in zip(A, B):
        ov = np.conj(b) @ a.T  # (Nb, Na)
        resid = a[None, :, :] - b[:, None, :] * ov[:, :, None]
        tot = tot + np.sum(np.abs(resid) ** 2, axis=2).T
    return np.sqrt(tot)


# ---------------------------------------------------------------------------
# Kahler potential of the bundle metric and the induced forms

def kahler_terms(model: PolarizedModel, Z: np.ndarray):
    """Return ``Psi, Psi_z, Psi_zz, H`` for a batch of affine points.

    ``H[j,k] = d^2 Psi / dz_j dzbar_k`` is hermitian positive definite.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    N, n = Z.shape
    Zb = Z.conj()
    if model.kind == "Quadric":
        r = 1.0 + np.abs(Z) ** 2
        Psi = np.log(r).sum(axis=1)
        Pz = Zb / r
        Pzz = np.zeros((N, n, n), dtype=complex)
        H = np.zeros((N, n, n), dtype=complex)
        idx = np.arange(n)
        Pzz[:, idx, idx] = -(Zb / r) ** 2
        H[:, idx, idx] = 1.0 / r ** 2
        return Psi, Pz, Pzz, H
    d = float(model.degree)
    s = 1.0 + np.sum(np.abs(Z) ** 2, axis=1)
    Psi = d * np.log(s)
    Pz = d * Zb / s[:, None]
    Pzz = -d * Zb[:, :, None] * Zb[:, None, :] / s[:, None, None] ** 2
    H = d * (np.eye(n)[None] * s[:, None, None] - Zb[:, :, None] * Z[:, None, :]) / s[:, None, None] ** 2
    return Psi, Pz, Pzz, H


def metric_from_H(H: np.ndarray) -> np.ndarray:
    """Real Fubini-Study metric matrix from the hermitian matrix ``H``."""
    HR, HI = H.real, H.imag
    top = np.concatenate([HR, HI], axis=-1)
    bot = np.concatenate([-HI, HR], axis=-1)
    return np.concatenate([top, bot], axis=-2) / np.pi


def omega_from_H(H: np.ndarray) -> np.ndarray:
    """Real matrix W with omega(u, v) = u^T W v."""
    HR, HI = H.real, H.imag
    top = np.concatenate([HI, -HR], axis=-1)
    bot = np.concatenate([HR, HI], axis=-1)
    return -np.concatenate([top, bot], axis=-2) / np.pi


def complex_structure(n: int) -> np.ndarray:
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[Z, -I], [I, Z]])


def metric_matrix(model: PolarizedModel, p: ProjPoint) -> np.ndarray:
    return metric_from_H(kahler_terms(model, p.z[None, :])[3])[0]


def omega_matrix(model: PolarizedModel, p: ProjPoint) -> np.ndarray:
    return omega_from_H(kahler_terms(model, p.z[None, :])[3])[0]


def omega(model: PolarizedModel, u: TangentVector, v: TangentVector) -> float:
    if v.base.chart != u.base.chart:
        v = transport(v, u.base.chart, model)
    return float(u.components @ omega_matrix(model, u.base) @ v.components)


def inner(model: PolarizedModel, u: TangentVector, v: TangentVector) -> float:
    if v.base.chart != u.base.chart:
        v = transport(v, u.base.chart, model)
    return float(u.components @ metric_matrix(model, u.base) @ v.components)


def density_from_H(n: int, H: np.ndarray) -> np.ndarray:
    """Coefficient of omega (n=1) or omega^omega (n=2) w.r.t. the Euclidean volume."""
    W = omega_from_H(H)
    if n == 1:
        return W[..., 0, 1]
    # reorder to (x1, y1, x2, y2) and take 2 * Pfaffian
    P = W[..., [0, 2, 1, 3], :][..., :, [0, 2, 1, 3]]
    pf = P[..., 0, 1] * P[..., 2, 3] - P[..., 0, 2] * P[..., 1, 3] + P[..., 0, 3] * P[..., 1, 2]
    return 2.0 * pf


def symplectic_density(model: PolarizedModel, p: ProjPoint) -> float:
    """Density of omega (CP1) or omega^omega (4 real dimensions) at p in its chart."""
    H = kahler_terms(model, p.z[None, :])[3]
    return float(density_from_H(model.dim, H)[0])


def integrate_density(model: PolarizedModel, tol: float = 1e-10) -> float:
    """Integral of the density over the whole model by radial quadrature in chart 0."""
    from scipy import integrate

    if model.kind == "CP1":
        f = lambda r: symplectic_density(model, model.point(0, r)) * 2 * np.pi * r
        val, _ = integrate.quad(f, 0, np.inf, epsabs=tol, epsrel=tol)
        return val

    def f(r2, r1):
        p = model.point(0, (r1, r2))
        return symplectic_density(model, p) * (2 * np.pi) ** 2 * r1 * r2

    val, _ = integrate.dblquad(f, 0, np.inf, 0, np.inf, epsabs=tol, epsrel=tol)
    return val


# ---------------------------------------------------------------------------
# CP1 helpers: Bloch sphere embedding, rotations and the enclosed-area functional

def to_sphere(hom: np.ndarray) -> np.ndarray:
    """Map unit homogeneous vectors (N, 2) of CP1 to points on the unit sphere."""
    hom = np.atleast_2d(hom)
    z0, z1 = hom[:, 0], hom[:, 1]
    c = 2 * np.conj(z0) * z1
    return np.stack([c.real, c.imag, np.abs(z1) ** 2 - np.abs(z0) ** 2], axis=1)


def from_sphere(X: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_sphere` (unit homogeneous vectors, fixed phase)."""
    X = np.atleast_2d(X)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    z0 = np.sqrt(np.clip((1 - X[:, 2]) / 2, 0, None)).astype(complex)
    z1 = np.sqrt(np.clip((1 + X[:, 2]) / 2, 0, None)).astype(complex)
    ph = X[:, 0] + 1j * X[:, 1]
    good = np.abs(ph) > 0
    z1[good] *= ph[good] / np.abs(ph[good])
    return np.stack([z0, z1], axis=1)


def _rotation_to_pole(target: np.ndarray) -> np.ndarray:
    """SU(2) matrix sending the CP1 point ``target`` (unit vector) to [0:1]."""
    a, b = target
    # rows: the vector orthogonal to target, then target itself (conjugated)
    return np.array([[b, -a], [np.conj(a), np.conj(b)]], dtype=complex)


def _lambda_chord(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact integral of (x dy - y dx)/(1+|z|^2) along straight chords a->b."""
    dlt = b - a
    c = np.imag(np.conj(a) * b)
    al = np.abs(dlt) ** 2
    be = 2 * np.real(np.conj(a) * dlt)
    ga = 1 + np.abs(a) ** 2
    D = np.sqrt(np.maximum(4 * al * ga - be ** 2, 1e-300))
    val = 2.0 / D * (np.arctan((2 * al + be) / D) - np.arctan(be / D))
    small = al < 1e-30
    val = np.where(small, 1.0 / ga, val)
    return c * val


def enclosed_area(model: PolarizedModel, loop: Sequence[ProjPoint], closure_tol: float = 1e-8) -> float:
    """Symplectic area of the disc to the left of an oriented closed polyline.

    The loop is rotated by an isometry so that a point far from it becomes the
    chart pole, then the chart primitive ``(d/2pi) r^2/(1+r^2) dtheta`` is
    integrated exactly along each chord.
    """
    if model.kind != "CP1":
        raise GeometryError("enclosed_area is defined on CP1 only")
    pts = list(loop)
    if len(pts) < 3:
        raise GeometryError("loop needs at least three points")
    hom = np.array([p.homogeneous[0] for p in pts])
    if chordal_distance(pts[0], pts[-1]) > closure_tol:
        raise GeometryError("polyline is not closed")
    return enclosed_area_hom(model.degree, hom)


def enclosed_area_hom(d: int, hom: np.ndarray) -> float:
    X = to_sphere(hom)
    cand = _fibonacci_sphere(400)
    far = cand[np.argmin((cand @ X.T).max(axis=1))]
    pole = from_sphere(far[None, :])[0]
    U = _rotation_to_pole(pole)
    rot = hom @ U.T
    z = rot[:, 1] / rot[:, 0]
    a, b = z, np.roll(z, -1)
    total = _lambda_chord(a[:-1], b[:-1]).sum() if np.allclose(z[0], z[-1]) else _lambda_chord(a, b).sum()
    val = d / (2 * np.pi) * total
    return float(np.mod(val, d))


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    th = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)


def norm_sq(model: PolarizedModel, s, p: ProjPoint) -> float:
    """Hermitian norm squared |s(p)|^2 for the standard bundle metric."""
    if s.model != model:
        raise ConfigurationError("section and model are incompatible")
    if p.kind != model.kind:
        raise ConfigurationError("point belongs to a different model")
    return float(s.norm_sq_hom(tuple(h[None, :] for h in p.homogeneous))[0])

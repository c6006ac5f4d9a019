"""The potential phi = -ln|s|, its derivatives and the calibration form Im rho.

All derivatives are analytic.  In a chart with affine coordinates ``z`` and
section polynomial ``F``::

    phi      = -ln|F| + Psi/2
    phi_z    = -F_z/(2F) + Psi_z/2
    phi_zz   = -(F_zz/F - F_z F_z^T/F^2)/2 + Psi_zz/2
    phi_zzb  = H/2

and real derivatives follow from the Wirtinger calculus.  The calibration form
is ``Im rho(v) = -dphi(I v)`` and ``Re rho = d ln|s|``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ConfigurationError, DivisorError, StabilityError
from .geometry import (
    PolarizedModel,
    ProjPoint,
    TangentVector,
    affine_to_homogeneous,
    complex_structure,
    kahler_terms,
    metric_from_H,
    transition,
)

DIVISOR_GUARD = 1e-300
TUBE = 1e-12


class Section:
    """Holomorphic section given by homogeneous coefficient data.

    * CP1/O(d): ``d+1`` coefficients ``c_k`` of ``sum c_k z0^(d-k) z1^k``.
    * Quadric: 2x2 matrix ``alpha`` of ``x^T alpha y``.
    * CP2/O(2): symmetric 3x3 matrix ``A`` of ``z^T A z``.
    """

    def __init__(self, model: PolarizedModel, coefficients):
        c = np.array(coefficients, dtype=complex)
        if model.kind == "CP1":
            if c.shape != (model.degree + 1,):
                raise ConfigurationError(f"CP1/O({model.degree}) needs {model.degree + 1} coefficients")
        elif model.kind == "Quadric":
            if c.shape != (2, 2):
                raise ConfigurationError("quadric sections are 2x2 matrices")
        else:
            if c.shape != (3, 3):
                raise ConfigurationError("CP2 sections are 3x3 matrices")
            c = (c + c.T) / 2
        if not np.any(c != 0):
            raise ConfigurationError("section must have a nonzero coefficient")
        c.setflags(write=False)
        self.model = model
        self.coefficients = c
        self.scale = float(np.max(np.abs(c)))

    def __repr__(self):
        return f"Section({self.model.kind}/{self.model.degree}, {self.coefficients.tolist()})"

    def scaled(self, factor: complex) -> "Section":
        return Section(self.model, self.coefficients * factor)

    @property
    def tube(self) -> float:
        """Stability tube threshold on norm_sq."""
        return TUBE * self.scale ** 2

    # -- homogeneous evaluation ----------------------------------------
    def value_hom(self, hom: tuple) -> np.ndarray:
        c = self.coefficients
        if self.model.kind == "CP1":
            h = hom[0]
            d = self.model.degree
            k = np.arange(d + 1)
            terms = h[:, 0:1] ** (d - k)[None, :] * h[:, 1:2] ** k[None, :]
            return terms @ c
        if self.model.kind == "Quadric":
            return np.einsum("ni,ij,nj->n", hom[0], c, hom[1])
        return np.einsum("ni,ij,nj->n", hom[0], c, hom[0])

    def norm_sq_hom(self, hom: tuple) -> np.ndarray:
        """|s|^2 at unit homogeneous representatives."""
        return np.abs(self.value_hom(hom)) ** 2

    # -- chart jets ----------------------------------------------------------
    def chart_jet(self, chart: int, Z: np.ndarray):
        """F, dF (N, n), d2F (N, n, n) of the chart polynomial at affine points."""
        Z = np.atleast_2d(np.asarray(Z, dtype=complex))
        N = Z.shape[0]
        kind = self.model.kind
        c = self.coefficients
        if kind == "CP1":
            d = self.model.degree
            pc = c if chart == 0 else c[::-1]
            z = Z[:, 0]
            k = np.arange(d + 1)
            zk = z[:, None] ** k[None, :]
            F = zk @ pc
            dF = np.zeros(N, dtype=complex)
            d2F = np.zeros(N, dtype=complex)
            if d >= 1:
                zkm1 = z[:, None] ** np.maximum(k - 1, 0)[None, :]
                dF = (zkm1 * k[None, :]) @ pc
            if d >= 2:
                zkm2 = z[:, None] ** np.maximum(k - 2, 0)[None, :]
                d2F = (zkm2 * (k * (k - 1))[None, :]) @ pc
            return F, dF[:, None], d2F[:, None, None]
        if kind == "Quadric":
            cx, cy = self.model.factor_charts(chart)
            a = c[::-1, :] if cx == 1 else c
            a = a[:, ::-1] if cy == 1 else a
            u, v = Z[:, 0], Z[:, 1]
            F = a[0, 0] + a[1, 0] * u + a[0, 1] * v + a[1, 1] * u * v
            dF = np.stack([a[1, 0] + a[1, 1] * v, a[0, 1] + a[1, 1] * u], axis=1)
            d2F = np.zeros((N, 2, 2), dtype=complex)
            d2F[:, 0, 1] = d2F[:, 1, 0] = a[1, 1]
            return F, dF, d2F
        idx = self.model.homogeneous_index(chart)
        h = np.insert(Z, chart, 1.0, axis=1)
        Ah = h @ c.T
        F = np.einsum("ni,ni->n", h, Ah)
        dF = 2 * Ah[:, idx]
        d2F = np.broadcast_to(2 * c[np.ix_(idx, idx)], (N, 2, 2)).copy()
        return F, dF, d2F

    # -- zeros (CP1 only) ----------------------------------------------------
    def zeros(self) -> list:
        """Zeros of a CP1 section as (unit homogeneous vector, multiplicity)."""
        if self.model.kind != "CP1":
            raise ConfigurationError("zeros() is available on CP1 only")
        return binary_form_zeros(self.coefficients)


def binary_form_zeros(c: np.ndarray, merge: float = 1e-6) -> list:
    """Zeros of sum c_k z0^(d-k) z1^k with multiplicities (clustered numerically)."""
    c = np.asarray(c, dtype=complex)
    d = len(c) - 1
    nz = np.nonzero(np.abs(c) > 1e-14 * np.max(np.abs(c)))[0]
    top = nz.max()
    pts = []
    for _ in range(d - top):
        pts.append(np.array([0.0, 1.0], dtype=complex))
    if top > 0:
        roots = np.roots(c[: top + 1][::-1])
        for r in roots:
            h = np.array([1.0, r], dtype=complex)
            pts.append(h / np.linalg.norm(h))
    out = []
    for h in pts:
        for item in out:
            if 1 - abs(np.vdot(item[0], h)) ** 2 < merge ** 2 * 1e4:
                item[1] += 1
                break
        else:
            out.append([h, 1])
    return [(h, m) for h, m in out]


@dataclass(frozen=True, eq=False)
class PotentialSample:
    point: ProjPoint
    phi: float
    grad: TangentVector
    hessian: np.ndarray
    im_rho: np.ndarray


# ---------------------------------------------------------------------------
# batched core

def derivatives(s: Section, chart: int, Z: np.ndarray, check: bool = True):
    """Batched ``phi, phi_z, A = phi_zz, B = phi_zzbar, H`` at affine points.

    Raises DivisorError if any point is within the divisor guard.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    F, dF, d2F = s.chart_jet(chart, Z)
    Psi, Pz, Pzz, H = kahler_terms(s.model, Z)
    nsq = np.abs(F) ** 2 * np.exp(-Psi)
    if check and np.any(nsq <= DIVISOR_GUARD * max(s.scale, 1.0) ** 2):
        raise DivisorError("point lies on the divisor", float(nsq.min()))
    phi = -0.5 * np.log(nsq)
    L = dF / F[:, None]
    phi_z = -0.5 * L + 0.5 * Pz
    A = -0.5 * (d2F / F[:, None, None] - L[:, :, None] * L[:, None, :]) + 0.5 * Pzz
    B = 0.5 * H
    return phi, phi_z, A, B, H


def real_gradient(phi_z: np.ndarray) -> np.ndarray:
    """Euclidean chart gradient (x-block then y-block)."""
    return np.concatenate([2 * phi_z.real, -2 * phi_z.imag], axis=-1)


def real_hessian(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    Hxx = 2 * A.real + 2 * B.real
    Hyy = -2 * A.real + 2 * B.real
    Hxy = -2 * A.imag + 2 * B.imag
    top = np.concatenate([Hxx, Hxy], axis=-1)
    bot = np.concatenate([np.swapaxes(Hxy, -1, -2), Hyy], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def riemannian_gradient(phi_z: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Real components of grad phi: complex form 2 pi (H^T)^{-1} conj(phi_z)."""
    c = 2 * np.pi * np.linalg.solve(np.swapaxes(H, -1, -2), np.conj(phi_z)[..., None])[..., 0]
    return np.concatenate([c.real, c.imag], axis=-1)


def im_rho_covector(phi_z: np.ndarray) -> np.ndarray:
    """Components of Im rho: x_j -> 2 Im phi_zj, y_j -> 2 Re phi_zj."""
    return np.concatenate([2 * phi_z.imag, 2 * phi_z.real], axis=-1)


def grad_norm(s: Section, chart: int, Z: np.ndarray) -> np.ndarray:
    """Fubini-Study norm of grad phi for a batch."""
    _, pz, _, _, H = derivatives(s, chart, Z)
    g = riemannian_gradient(pz, H)
    G = metric_from_H(H)
    return np.sqrt(np.einsum("ni,nij,nj->n", g, G, g))


# ---------------------------------------------------------------------------
# per-point API

def _check(s: Section, p: ProjPoint):
    if p.kind != s.model.kind:
        raise ConfigurationError("point and section live on different models")


def phi(s: Section, p: ProjPoint) -> float:
    _check(s, p)
    nsq = float(s.norm_sq_hom(tuple(h[None, :] for h in p.homogeneous))[0])
    if nsq <= DIVISOR_GUARD:
        raise DivisorError("phi is infinite on the divisor", nsq)
    return -0.5 * float(np.log(nsq))


def grad_phi(s: Section, p: ProjPoint) -> TangentVector:
    _check(s, p)
    _, pz, _, _, H = derivatives(s, p.chart, p.z[None, :])
    return TangentVector(p, riemannian_gradient(pz, H)[0])


def differential(s: Section, p: ProjPoint) -> np.ndarray:
    """Euclidean chart gradient (the covector dphi)."""
    _check(s, p)
    _, pz, _, _, _ = derivatives(s, p.chart, p.z[None, :])
    return real_gradient(pz)[0]


def hessian_phi(s: Section, p: ProjPoint) -> np.ndarray:
    _check(s, p)
    _, _, A, B, _ = derivatives(s, p.chart, p.z[None, :])
    Hs = real_hessian(A, B)[0]
    return 0.5 * (Hs + Hs.T)


def im_rho(s: Section, p: ProjPoint) -> np.ndarray:
    _check(s, p)
    _, pz, _, _, _ = derivatives(s, p.chart, p.z[None, :])
    return im_rho_covector(pz)[0]


def re_rho(s: Section, p: ProjPoint) -> np.ndarray:
    """Components of Re rho = d ln|s| = -dphi."""
    return -differential(s, p)


def sample(s: Section, p: ProjPoint) -> PotentialSample:
    _check(s, p)
    ph, pz, A, B, H = derivatives(s, p.chart, p.z[None, :])
    Hs = real_hessian(A, B)[0]
    return PotentialSample(
        point=p,
        phi=float(ph[0]),
        grad=TangentVector(p, riemannian_gradient(pz, H)[0]),
        hessian=0.5 * (Hs + Hs.T),
        im_rho=im_rho_covector(pz)[0],
    )


def levi_trace(s: Section, p: ProjPoint) -> float:
    """Trace of the complex-linear part of the real Hessian (a Laplacian)."""
    Hs = hessian_phi(s, p)
    J = complex_structure(p.model_dim)
    return float(np.trace(0.5 * (Hs + J.T @ Hs @ J)))


# ---------------------------------------------------------------------------
# loop integrals

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


def _chord_integral(s: Section, ch: int, za, zb, form, tol: float = 1e-13, depth: int = 40) -> float:
    """Adaptive Gauss integral of a covector field along the chart segment za -> zb.

    The chord is bisected until the two halves agree with the whole, which
    resolves the log singularity of phi when the chord passes near a zero.
    """
    t = 0.5 * (_GL_X + 1.0)

    def gauss(a, b):
        Z = a[None, :] + t[:, None] * (b - a)[None, :]
        cov = form(ch, Z)
        dz = b - a
        return 0.5 * float(_GL_W @ (cov @ np.concatenate([dz.real, dz.imag])))

    total = 0.0
    stack = [(np.asarray(za), np.asarray(zb), gauss(za, zb), 0)]
    while stack:
        a, b, whole, lev = stack.pop()
        m = 0.5 * (a + b)
        left, right = gauss(a, m), gauss(m, b)
        if lev >= depth or abs(left + right - whole) <= tol * max(1.0, abs(whole)):
            total += left + right
        else:
            stack += [(a, m, left, lev + 1), (m, b, right, lev + 1)]
    return total


def loop_integral_im_rho(s: Section, loop) -> float:
    """Adaptive Gauss quadrature of Im rho along the chords of a closed polyline."""
    pts = list(loop)
    if len(pts) < 3:
        raise ValueError("loop needs at least three points")
    model = s.model

    def form(ch, Z):
        nsq = s.norm_sq_hom(affine_to_homogeneous(model, ch, Z))
        if np.any(nsq < s.tube):
            raise StabilityError("loop enters the divisor tube", float(nsq.min()))
        return im_rho_covector(derivatives(s, ch, Z)[1])

    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        ch = model.best_chart_of(a)
        total += _chord_integral(s, ch, transition(a, ch, model).z, transition(b, ch, model).z, form)
    return total


def path_integral_re_rho(s: Section, path) -> float:
    """Integral of Re rho along the chords of an open polyline."""
    pts = list(path)
    model = s.model
    form = lambda ch, Z: -real_gradient(derivatives(s, ch, Z)[1])
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        ch = model.best_chart_of(a)
        total += _chord_integral(s, ch, transition(a, ch, model).z, transition(b, ch, model).z, form)
    return total


def fermat(model: PolarizedModel) -> Section:
    """Fermat section z0^d + z1^d (CP1) or sum z_i^2 (CP2) or x0y0 + x1y1."""
    if model.kind == "CP1":
        c = np.zeros(model.degree + 1, dtype=complex)
        c[0] = c[-1] = 1
        return Section(model, c)
    return Section(model, np.eye(3 if model.kind == "CP2" else 2))


def random_section(model: PolarizedModel, rng: np.random.Generator, ensemble: str = "gaussian") -> Section:
    """Random section with i.i.d. standard complex Gaussian coefficients.

    ``ensemble="kostlan"`` weights CP1 coefficients by sqrt(binomial(d, k)),
    which makes the distribution invariant under the unitary group.
    """
    shape = {"CP1": (model.degree + 1,), "Quadric": (2, 2), "CP2": (3, 3)}[model.kind]
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    if ensemble == "kostlan" and model.kind == "CP1":
        c = c * np.sqrt([comb(model.degree, k) for k in range(model.degree + 1)])
    elif ensemble not in ("gaussian", "kostlan"):
        raise ConfigurationError(f"unknown ensemble {ensemble!r}")
    return Section(model, c)

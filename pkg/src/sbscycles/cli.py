"""Command-line front end: job configuration, JSON reports and SVG portraits.

Subcommands ``analyze``, ``scan``, ``export-svg`` and ``verify-manifold``.
Settings come from an optional TOML file (``--config``) overridden by flags.
Exit codes: 0 success, 2 finished with warnings, 1 errors, 64 usage errors.
The log level is read from the ``SBSCYCLES_LOG`` environment variable.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from . import cycles as _cycles
from .cycles import (
    FamilySpec,
    PRESETS,
    count_sbs,
    preset,
    scan_moduli,
    verify_parametrized,
)
from .errors import ConfigurationError, SBSError, UnsupportedModelError
from .geometry import cp1, cp2, from_sphere, quadric, to_sphere
from .potential import Section, fermat, random_section

log = logging.getLogger("sbscycles")

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_ERROR, EXIT_WARN, EXIT_USAGE = 0, 1, 2, 64
SECTION_PRESETS = ("fermat", "reducible", "antipodal", "random", "explicit")
MODELS = ("cp1", "quadric", "cp2")
# tolerance keys accepted in [tolerances] and --tol, mapped to cycles attributes
TOLERANCES = {
    "smooth": "SMOOTH_TOL",
    "calibration": "CALIBRATION_TOL",
    "area": "AREA_TOL",
    "loop": "LOOP_TOL",
    "chain": "CHAIN_TOL",
    "lagrangian": "LAGRANGIAN_TOL",
    "separatrix_h_max": "SEPARATRIX_H_MAX",
    "max_chain": "MAX_CHAIN",
}
MAX_CURVE_POINTS = 256


class UsageError(SBSError):
    """Malformed command line or job configuration."""


# ---------------------------------------------------------------------------
# job configuration

@dataclass
class JobConfig:
    command: str | None = None
    model: str = "cp1"
    degree: int | None = None
    section: str = "fermat"
    coefficients: list | None = None
    seed: int = 0
    samples: int = 10
    threads: int = 1
    family: str = "random"
    end_section: str | None = None
    end_coefficients: list | None = None
    ensemble: str = "gaussian"
    preset: str = "s0"
    perturbation: float = 0.0
    points: int = 200
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    report: str | None = None


# TOML table -> config fields stored there
_LAYOUT = {
    "job": ("command",),
    "model": ("kind", "degree"),
    "section": ("preset", "coefficients", "seed"),
    "scan": ("samples", "threads", "family", "end_section", "end_coefficients", "ensemble"),
    "manifold": ("preset", "perturbation", "points"),
    "tolerances": None,
    "io": ("output", "report"),
}
# (table, key) -> attribute when the names differ
_RENAME = {("model", "kind"): "model", ("section", "preset"): "section", ("manifold", "preset"): "preset"}


def _norm_coeffs(c):
    """Coefficient list as [[re, im], ...] floats (row-major for matrices)."""
    if c is None:
        return None
    out = []
    for v in np.asarray(_parse_complex_list(c), dtype=complex).ravel():
        out.append([float(v.real), float(v.imag)])
    return out


def _parse_complex_list(c):
    if isinstance(c, str):
        items = [t for t in c.replace(";", ",").split(",") if t.strip()]
        try:
            return [complex(t.strip().replace("i", "j")) for t in items]
        except ValueError as exc:
            raise UsageError(f"cannot parse coefficients {c!r}") from exc
    vals = []
    for v in c:
        if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
            vals.append(complex(v[0], v[1]))
        elif isinstance(v, (list, tuple)):
            vals.extend(_parse_complex_list(v))
        elif isinstance(v, (int, float, complex)):
            vals.append(complex(v))
        else:
            raise UsageError(f"invalid coefficient entry {v!r}")
    return vals


def config_from_dict(data: dict) -> JobConfig:
    """Build a JobConfig from parsed TOML tables; unknown keys are rejected."""
    kw = {}
    for table, body in data.items():
        if table not in _LAYOUT:
            raise UsageError(f"unknown config table [{table}]")
        if not isinstance(body, dict):
            raise UsageError(f"[{table}] must be a table")
        if table == "tolerances":
            for k, v in body.items():
                if k not in TOLERANCES:
                    raise UsageError(f"unknown tolerance {k!r}")
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise UsageError(f"tolerance {k!r} must be a number")
            kw["tolerances"] = {k: body[k] for k in sorted(body)}
            continue
        for key, val in body.items():
            if key not in _LAYOUT[table]:
                raise UsageError(f"unknown key {key!r} in [{table}]")
            kw[_RENAME.get((table, key), key)] = val
    for key in ("coefficients", "end_coefficients"):
        if key in kw:
            kw[key] = _norm_coeffs(kw[key])
    if "coefficients" in kw and "section" not in kw:
        kw["section"] = "explicit"
    _check_types(kw)
    return JobConfig(**kw)


_TYPES = {f.name: f.type for f in dataclasses.fields(JobConfig)}


def _check_types(kw: dict):
    for key, val in kw.items():
        want = _TYPES[key]
        if val is None:
            continue
        ok = {
            "int": isinstance(val, int) and not isinstance(val, bool),
            "float": isinstance(val, (int, float)) and not isinstance(val, bool),
            "str": isinstance(val, str),
            "list": isinstance(val, list),
            "dict": isinstance(val, dict),
        }
        kind = next(k for k in ("int", "float", "str", "list", "dict") if want.startswith(k))
        if not ok[kind]:
            raise UsageError(f"{key} must be of type {kind}, got {val!r}")


def config_to_dict(cfg: JobConfig) -> dict:
    out = {}
    for table, keys in _LAYOUT.items():
        if keys is None:
            if cfg.tolerances:
                out[table] = dict(cfg.tolerances)
            continue
        body = {}
        for key in keys:
            val = getattr(cfg, _RENAME.get((table, key), key))
            if val is not None:
                body[key] = val
        if body:
            out[table] = body
    return out


def load_config(path) -> JobConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"malformed TOML in {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: JobConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def _model(cfg: JobConfig):
    kind = cfg.model.lower()
    if kind not in MODELS:
        raise UsageError(f"unknown model {cfg.model!r}; expected one of {MODELS}")
    if kind == "cp1":
        if cfg.degree is None:
            raise UsageError("cp1 needs --degree")
        try:
            return cp1(int(cfg.degree))
        except ConfigurationError as exc:
            raise UsageError(str(exc)) from exc
    if cfg.degree is not None and int(cfg.degree) != (1 if kind == "quadric" else 2):
        raise UsageError(f"{kind} has a fixed degree")
    return quadric() if kind == "quadric" else cp2()


def build_section(model, name: str, coefficients=None, seed: int = 0) -> Section:
    """Section from a named preset or explicit coefficients."""
    if name == "fermat":
        return fermat(model)
    if name == "random":
        return random_section(model, np.random.default_rng(seed))
    if name == "reducible":
        if model.kind == "CP1":
            c = np.zeros(model.degree + 1)
            c[0] = 1.0
        elif model.kind == "Quadric":
            c = np.outer([1.0, 0.5], [1.0, -0.5])
        else:
            c = np.array([[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]])
        return Section(model, c)
    if name == "antipodal":
        if model.kind != "CP1" or model.degree != 2:
            raise UsageError("the antipodal preset exists for cp1 degree 2 only")
        return Section(model, [0.0, 1.0, 0.0])
    if name == "explicit":
        if coefficients is None:
            raise UsageError("explicit sections need coefficients")
        vals = np.array([complex(a, b) for a, b in coefficients])
        if model.kind != "CP1":
            k = 2 if model.kind == "Quadric" else 3
            if vals.size != k * k:
                raise UsageError(f"{model.kind} needs {k * k} coefficients")
            vals = vals.reshape(k, k)
        try:
            return Section(model, vals)
        except ConfigurationError as exc:
            raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown section {name!r}; expected one of {SECTION_PRESETS}")


def config_section(cfg: JobConfig) -> Section:
    try:
        return build_section(_model(cfg), cfg.section, cfg.coefficients, cfg.seed)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc


@contextlib.contextmanager
def tolerance_overrides(tols: dict):
    """Temporarily replace cycle-certificate tolerances."""
    saved = {}
    try:
        for k, v in tols.items():
            attr = TOLERANCES[k]
            saved[attr] = getattr(_cycles, attr)
            setattr(_cycles, attr, type(saved[attr])(v))
        yield
    finally:
        for attr, v in saved.items():
            setattr(_cycles, attr, v)


# ---------------------------------------------------------------------------
# deterministic JSON

def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == 0:
        return "0.0"
    s = format(x, ".17g")
    if "e" not in s and "." not in s and "n" not in s:
        s += ".0"
    return s


def to_json(obj, indent: int = 0, step: int = 1) -> str:
    """JSON text with floats written to 17 significant digits.

    Arrays of scalars stay on one line so curves remain compact.
    """
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    pad = " " * (indent + step)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + step, step)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(to_json(v) for v in seq) + "]"
        if all(isinstance(v, (list, tuple, np.ndarray)) and all(np.isscalar(u) for u in v) for v in seq):
            return "[" + ", ".join(to_json(v) for v in seq) + "]"
        items = [pad + to_json(v, indent + step, step) for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + " " * indent + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def load_schema(name: str) -> dict:
    """Published JSON schema shipped with the package (e.g. 'verification-report')."""
    ref = resources.files("sbscycles") / "schemas" / f"{name}.v1.json"
    return json.loads(ref.read_text())


# ---------------------------------------------------------------------------
# report serialization

def _c(v) -> list:
    return [float(np.real(v)), float(np.imag(v))]


def _point(p) -> dict:
    out = {
        "chart": int(p.chart),
        "affine": [_c(a) for a in p.affine],
        "homogeneous": [[_c(v) for v in h] for h in p.homogeneous],
    }
    if p.kind == "CP1":
        out["sphere"] = [float(x) for x in to_sphere(np.array([p.homogeneous[0]]))[0]]
    return out


def _sphere_curve(points) -> list:
    hom = np.array([p.homogeneous[0] for p in points])
    if len(hom) > MAX_CURVE_POINTS:
        idx = np.unique(np.linspace(0, len(hom) - 1, MAX_CURVE_POINTS).round().astype(int))
        hom = hom[idx]
    return [[float(x) for x in row] for row in to_sphere(hom)]


def _section_json(s: Section) -> dict:
    return {
        "model": {"kind": s.model.kind, "degree": int(s.model.degree)},
        "shape": list(s.coefficients.shape),
        "coefficients": [_c(v) for v in s.coefficients.ravel()],
    }


def _genericity_json(g) -> dict:
    return {
        "classification": g.classification,
        "discriminant": float(g.discriminant),
        "near_discriminant": bool(g.near_discriminant),
        "detail": g.detail,
    }


def _crit_json(k: int, c) -> dict:
    return {
        "id": k,
        "location": _point(c.location),
        "morse_index": c.morse_index if isinstance(c.morse_index, str) else int(c.morse_index),
        "eigenvalues": [float(x) for x in c.eigenvalues],
        "phi": float(c.phi_value),
        "grad_norm": float(c.grad_norm),
    }


def _cycle_json(c, crit_id, cp1_model: bool) -> dict:
    out = {
        "kind": c.kind,
        "certified": bool(c.certified),
        "smooth": bool(c.smooth),
        "calibration_residual": float(c.calibration_residual),
        "lagrangian_residual": float(c.lagrangian_residual),
        "enclosed_area": float(c.enclosed_area),
        "area_defect": float(c.area_defect),
        "loop_integral": float(c.loop_integral),
        "min_norm_sq": float(c.min_norm_sq),
        "n_samples": int(c.n_samples),
        "corners": [{"critical_point": crit_id(p), "exterior_angle": float(a)} for p, a in c.corners],
        "lines": [int(l) for l in c.lines],
        "failure": c.failure,
    }
    if c.mesh is not None:
        m = c.mesh
        out["mesh"] = {
            "vertices": int(len(m.coords)),
            "triangles": int(len(m.triangles)),
            "euler_characteristic": int(m.euler_characteristic),
            "closed": bool(m.closed),
            "omega_residual": float(m.omega_residual),
            "isotropy": float(m.isotropy),
        }
    if cp1_model:
        pts = c.polyline()
        out["curve"] = _sphere_curve(pts) if pts else []
    return out


def report_to_dict(rep) -> dict:
    s = rep.section
    crits = list(rep.inventory.points) if rep.inventory is not None else []
    ids = {id(c): k for k, c in enumerate(crits)}

    def crit_id(c):
        return ids.get(id(c), -1)

    is_cp1 = s.model.kind == "CP1"
    seps = []
    for k, line in enumerate(rep.lines):
        halves = []
        for b in (1, -1):
            h = line.halves.get(b)
            if h is None:
                continue
            halves.append({
                "branch": b,
                "sink": crit_id(h.sink),
                "arc_length": float(h.trajectory.arc_length),
                "n_points": len(h.trajectory.coords),
                "curve": _sphere_curve(h.trajectory.points),
            })
        seps.append({"id": k, "saddle": crit_id(line.saddle), "halves": halves})
    certified = rep.certified
    spheres = [c for c in certified if c.kind in ("sphere", "critical-manifold") and s.model.kind == "Quadric"]
    out = {
        "schema_version": SCHEMA_VERSION,
        "report": "verification",
        "section": _section_json(s),
        "classification": _genericity_json(rep.genericity),
        "summary": {
            "critical_points": len(crits),
            "separatrices": len(rep.lines),
            "separatrix_branches": len(rep.separatrices),
            "candidates": len(rep.cycles),
            "cycles": len(certified),
            "smooth_cycles": sum(1 for c in certified if c.smooth),
            "spheres": len(spheres),
            "degenerate_dimension": int(rep.degeneracy.dimension) if rep.degeneracy is not None else 0,
        },
        "inventory": {
            "status": rep.inventory.status if rep.inventory is not None else "none",
            "audit": {k: v for k, v in sorted((rep.inventory.audit or {}).items())
                      if isinstance(v, (int, float, bool, str))} if rep.inventory is not None else {},
        },
        "critical_points": [_crit_json(k, c) for k, c in enumerate(crits)],
        "degenerate_sets": [
            {"dimension": int(d.dimension), "n_samples": len(d.samples), "closed": bool(d.closed),
             "max_grad": float(d.max_grad)}
            for d in (rep.degeneracy.sets if rep.degeneracy is not None else [])
        ],
        "separatrices": seps,
        "cycles": [_cycle_json(c, crit_id, is_cp1) for c in rep.cycles],
        "warnings": list(rep.warnings),
        "errors": list(rep.errors),
    }
    if is_cp1:
        out["divisor"] = [
            {"sphere": [float(x) for x in to_sphere(np.array([z]))[0]], "multiplicity": int(m)}
            for z, m in s.zeros()
        ]
    return out


def scan_to_dict(sr, cfg: JobConfig) -> dict:
    fam = sr.family
    samples = []
    for i, cnt in enumerate(sr.counts):
        samples.append({
            "index": i,
            "count": cnt,
            "classification": sr.classifications[i],
            "discriminant": float(sr.discriminants[i]),
            "near_discriminant": i in sr.near_discriminant,
            "failure": sr.failures.get(i, ""),
        })
    other = {}
    for i, cnt in enumerate(sr.counts):
        if cnt is None:
            continue
        if i in sr.near_discriminant or sr.classifications[i] != "generic":
            other[str(cnt)] = other.get(str(cnt), 0) + 1
    return {
        "schema_version": SCHEMA_VERSION,
        "report": "scan",
        "family": {
            "model": fam.kind,
            "degree": fam.degree,
            "family": fam.family,
            "samples": fam.samples,
            "seed": fam.seed,
            "ensemble": fam.ensemble,
            "near": fam.near,
            "start": None if fam.start is None else [_c(v) for v in np.ravel(fam.start)],
            "end": None if fam.end is None else [_c(v) for v in np.ravel(fam.end)],
        },
        "samples": samples,
        "histogram": {str(k): v for k, v in sr.histogram.items()},
        "non_generic_histogram": dict(sorted(other.items())),
        "n_generic": sum(sr.histogram.values()),
        "near_discriminant": list(sr.near_discriminant),
        "invariant": bool(sr.invariant),
        "failures": {str(k): v for k, v in sr.failures.items()},
    }


# ---------------------------------------------------------------------------
# SVG phase portrait

_VIEW = 2.5  # half-width of the plotted window in chart-0 units
_PX = 400.0


def _project(X: np.ndarray) -> np.ndarray:
    """Stereographic projection from [0:1]; returns chart-0 coordinates (None at the pole)."""
    hom = from_sphere(np.asarray(X, dtype=float))
    with np.errstate(all="ignore"):
        return hom[:, 1] / hom[:, 0]


def _xy(z: complex) -> str:
    x = _PX / 2 + z.real / _VIEW * _PX / 2
    y = _PX / 2 - z.imag / _VIEW * _PX / 2
    return f"{x:.3f},{y:.3f}"


def _paths(curve, cap: float = 50.0) -> list:
    """Split a projected curve where it runs off towards the projection pole."""
    if not curve:
        return []
    z = _project(curve)
    out, cur = [], []
    for w in z:
        if np.isfinite(w) and abs(w) <= cap:
            cur.append(w)
        else:
            if len(cur) > 1:
                out.append(cur)
            cur = []
    if len(cur) > 1:
        out.append(cur)
    return ["M " + " L ".join(_xy(w) for w in seg) for seg in out]


def _visible(X) -> complex | None:
    w = _project([X])[0]
    if not np.isfinite(w) or abs(w) > _VIEW:
        return None
    return w


def render_svg(report: dict) -> str:
    """SVG portrait of a CP1 verification report."""
    model = report["section"]["model"]["kind"]
    if model != "CP1":
        raise UnsupportedModelError(f"SVG export supports CP1 reports only, got {model}")
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_PX + 160:.0f}" height="{_PX:.0f}" '
        f'viewBox="0 0 {_PX + 160:.0f} {_PX:.0f}">',
        '<defs><clipPath id="window"><rect x="0" y="0" width="{0:.0f}" height="{0:.0f}"/></clipPath></defs>'.format(_PX),
        f'<rect x="0" y="0" width="{_PX:.0f}" height="{_PX:.0f}" fill="white" stroke="#999"/>',
    ]
    lines.append('<g id="separatrices" clip-path="url(#window)" fill="none" stroke="#1f5fa8" stroke-width="1.2">')
    for sp in report["separatrices"]:
        for h in sp["halves"]:
            for d in _paths(h["curve"]):
                lines.append(f'<path d="{d}" data-separatrix="{sp["id"]}" data-branch="{h["branch"]}"/>')
    lines.append("</g>")
    lines.append('<g id="cycles" clip-path="url(#window)" fill="none" stroke="#d4542a" stroke-width="3" '
                 'stroke-opacity="0.5">')
    for k, c in enumerate(report["cycles"]):
        if not c["certified"]:
            continue
        for d in _paths(c.get("curve", [])):
            lines.append(f'<path d="{d}" data-cycle="{k}"/>')
    lines.append("</g>")
    lines.append('<g id="divisor" stroke="black" stroke-width="1.5">')
    for z in report.get("divisor", []):
        w = _visible(z["sphere"])
        if w is None:
            continue
        x, y = map(float, _xy(w).split(","))
        lines.append(f'<path d="M {x - 5:.3f},{y - 5:.3f} L {x + 5:.3f},{y + 5:.3f} '
                     f'M {x - 5:.3f},{y + 5:.3f} L {x + 5:.3f},{y - 5:.3f}"/>')
    lines.append("</g>")
    for gid, want, fill in (("minima", lambda i: i == 0, "black"), ("saddles", lambda i: i != 0, "white")):
        lines.append(f'<g id="{gid}" stroke="black" stroke-width="1.5" fill="{fill}">')
        for c in report["critical_points"]:
            if isinstance(c["morse_index"], str) or not want(c["morse_index"]):
                continue
            w = _visible(c["location"]["sphere"])
            if w is None:
                continue
            x, y = _xy(w).split(",")
            lines.append(f'<circle cx="{x}" cy="{y}" r="4" data-critical="{c["id"]}"/>')
        lines.append("</g>")
    lx = _PX + 12
    lines.append('<g id="legend" font-family="sans-serif" font-size="11">')
    lines.append(f'<path d="M {lx},20 l 8,8 m -8,0 l 8,-8" stroke="black"/><text x="{lx + 16}" y="28">zero of s</text>')
    lines.append(f'<circle cx="{lx + 4}" cy="44" r="4" fill="black"/><text x="{lx + 16}" y="48">minimum</text>')
    lines.append(f'<circle cx="{lx + 4}" cy="64" r="4" fill="white" stroke="black"/>'
                 f'<text x="{lx + 16}" y="68">saddle</text>')
    lines.append(f'<path d="M {lx},84 h 10" stroke="#1f5fa8"/><text x="{lx + 16}" y="88">separatrix</text>')
    lines.append(f'<path d="M {lx},104 h 10" stroke="#d4542a" stroke-width="3" stroke-opacity="0.5"/>'
                 f'<text x="{lx + 16}" y="108">SBS cycle</text>')
    n = report["summary"]["cycles"]
    lines.append(f'<text x="{lx}" y="132">{n} certified cycle{"s" if n != 1 else ""}</text>')
    lines.append(f'<text x="{lx}" y="150">projection from [0:1]</text>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands

def _write(text: str, path):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _status(warnings, errors) -> int:
    if errors:
        return EXIT_ERROR
    return EXIT_WARN if warnings else EXIT_OK


def cmd_analyze(cfg: JobConfig) -> int:
    s = config_section(cfg)
    with tolerance_overrides(cfg.tolerances):
        rep = count_sbs(s)
    data = report_to_dict(rep)
    _write(to_json(data) + "\n", cfg.output)
    for w in data["warnings"]:
        log.warning(w)
    for e in data["errors"]:
        log.error(e)
    return _status(data["warnings"], data["errors"])


def cmd_scan(cfg: JobConfig) -> int:
    m = _model(cfg)
    if cfg.samples < 1 or cfg.threads < 1:
        raise UsageError("--samples and --threads must be positive")
    start = end = None
    if cfg.family == "path":
        start = config_section(cfg).coefficients
        end_name = cfg.end_section or ("explicit" if cfg.end_coefficients is not None else None)
        if end_name is None:
            raise UsageError("path scans need --end-section or --end-coefficients")
        end = build_section(m, end_name, cfg.end_coefficients, cfg.seed + 1).coefficients
    elif cfg.family != "random":
        raise UsageError(f"unknown family {cfg.family!r}")
    fam = FamilySpec(cfg.model.lower(), m.degree if m.kind == "CP1" else None, cfg.family, cfg.samples,
                     cfg.seed, cfg.ensemble, start, end)
    with tolerance_overrides(cfg.tolerances):
        sr = scan_moduli(fam, threads=cfg.threads)
    data = scan_to_dict(sr, cfg)
    _write(to_json(data) + "\n", cfg.output)
    warn = [] if sr.invariant else ["generic counts are not invariant"]
    for i, f in sorted(sr.failures.items()):
        log.error("sample %d: %s", i, f)
    for w in warn:
        log.warning(w)
    return _status(warn, sr.failures)


def cmd_export_svg(cfg: JobConfig) -> int:
    if cfg.report:
        try:
            with open(cfg.report, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read report {cfg.report}: {exc}") from exc
        if data.get("report") != "verification":
            raise UsageError("export-svg needs a report written by analyze")
    else:
        s = config_section(cfg)
        if s.model.kind != "CP1":
            raise UnsupportedModelError(f"SVG export supports CP1 only, got {s.model.kind}")
        with tolerance_overrides(cfg.tolerances):
            data = report_to_dict(count_sbs(s))
    _write(render_svg(data), cfg.output)
    return EXIT_OK


def cmd_verify_manifold(cfg: JobConfig) -> int:
    if cfg.preset not in PRESETS:
        raise UsageError(f"unknown preset {cfg.preset!r}; expected one of {PRESETS}")
    if cfg.points < 1:
        raise UsageError("--points must be positive")
    s, sampler = preset(cfg.preset, cfg.perturbation, cfg.seed)
    rep = verify_parametrized(s, sampler, n=cfg.points, seed=cfg.seed)
    tol = {k: getattr(_cycles, TOLERANCES[k]) for k in ("lagrangian", "calibration")}
    tol.update({k: float(v) for k, v in cfg.tolerances.items() if k in tol})
    verdict = {
        "lagrangian": rep.lagrangian_residual <= tol["lagrangian"],
        "sbs": rep.sbs_residual <= tol["calibration"],
        "stable": rep.stable,
    }
    warnings = []
    if not verdict["stable"]:
        warnings.append("candidate rejected: it meets the zero divisor (non-stable)")
    for k in ("lagrangian", "sbs"):
        if not verdict[k]:
            warnings.append(f"candidate fails the {k} check")
    data = {
        "schema_version": SCHEMA_VERSION,
        "report": "manifold",
        "preset": cfg.preset,
        "perturbation": float(cfg.perturbation),
        "seed": int(cfg.seed),
        "section": _section_json(s),
        "n_samples": int(rep.n_samples),
        "lagrangian_residual": rep.lagrangian_residual,
        "sbs_residual": rep.sbs_residual,
        "gradient_residual": rep.gradient_residual,
        "min_norm_sq": rep.min_norm_sq,
        "verdict": verdict,
        "accepted": all(verdict.values()),
        "warnings": warnings,
    }
    _write(to_json(data) + "\n", cfg.output)
    for w in warnings:
        log.warning(w)
    return _status(warnings, [])


COMMANDS = {
    "analyze": cmd_analyze,
    "scan": cmd_scan,
    "export-svg": cmd_export_svg,
    "verify-manifold": cmd_verify_manifold,
}


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="TOML job file; flags override its values", default=S)
    p.add_argument("--model", choices=MODELS, default=S)
    p.add_argument("--degree", type=int, default=S)
    p.add_argument("--section", choices=SECTION_PRESETS, default=S)
    p.add_argument("--coefficients", help="comma separated complex coefficients, row-major for matrices", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--tol", action="append", metavar="KEY=VALUE", default=S,
                   help=f"tolerance override, keys: {', '.join(TOLERANCES)}")
    p.add_argument("-o", "--output", default=S, help="output file (stdout when omitted)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    ap = _Parser(prog="sbscycles", description="Detect and verify SBS cycles on toy polarized varieties.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    p = sub.add_parser("analyze", help="run the full pipeline on one section")
    _common(p)
    p = sub.add_parser("scan", help="count cycles over a family of sections")
    _common(p)
    p.add_argument("--samples", type=int, default=S)
    p.add_argument("--threads", type=int, default=S)
    p.add_argument("--family", choices=("random", "path"), default=S)
    p.add_argument("--end-section", dest="end_section", choices=SECTION_PRESETS, default=S)
    p.add_argument("--end-coefficients", dest="end_coefficients", default=S)
    p.add_argument("--ensemble", choices=("gaussian", "kostlan"), default=S)
    p = sub.add_parser("export-svg", help="render a CP1 phase portrait")
    _common(p)
    p.add_argument("--report", default=S, help="analyze report to render (runs the analysis when omitted)")
    p = sub.add_parser("verify-manifold", help="check a parametrized candidate submanifold")
    _common(p)
    p.add_argument("--preset", choices=PRESETS, default=S)
    p.add_argument("--perturbation", type=float, default=S)
    p.add_argument("--points", type=int, default=S)
    return ap


def resolve_config(argv) -> JobConfig:
    ns = vars(build_parser().parse_args(argv))
    if not ns.get("command"):
        raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    cfg = load_config(ns.pop("config")) if "config" in ns else JobConfig()
    tols = dict(cfg.tolerances)
    for item in ns.pop("tol", []):
        key, sep, val = item.partition("=")
        if not sep or key not in TOLERANCES:
            raise UsageError(f"bad tolerance override {item!r}")
        try:
            tols[key] = float(val)
        except ValueError as exc:
            raise UsageError(f"bad tolerance value {val!r}") from exc
    for key in ("coefficients", "end_coefficients"):
        if key in ns:
            ns[key] = _norm_coeffs(ns[key])
    if "coefficients" in ns and "section" not in ns:
        ns["section"] = "explicit"
    return dataclasses.replace(cfg, **ns, tolerances=tols)


def _setup_logging():
    level = os.environ.get("SBSCYCLES_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        print(f"sbscycles: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SBSError as exc:
        print(f"sbscycles: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

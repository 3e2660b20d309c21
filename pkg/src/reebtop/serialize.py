"""JSON specs for bodies and metrics, and atomic writers for reports and tables."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError
from .geodesic import ConformalMetric, FourierFactor, MollifiedFactor, WeierstrassFactor
from .geometry import (
    Body,
    Halfspace,
    PNormCube,
    Polytope,
    Quadric,
    RadialGraph,
    SmoothedPolytope,
    TrigPolynomial,
    cube_limit,
)

SPEC_VERSION = 1


# --------------------------------------------------------------------------
# bodies
# --------------------------------------------------------------------------


def halfspaces_to_list(halfspaces) -> list:
    return [{"normal": list(h.normal), "offset": h.offset} for h in halfspaces]


def halfspaces_from_list(items) -> tuple:
    if not isinstance(items, list):
        raise InvalidSpecError("halfspaces must be a list")
    out = []
    for i, h in enumerate(items):
        try:
            out.append(Halfspace.from_vector(h["normal"], h["offset"]))
        except (KeyError, TypeError) as exc:
            raise InvalidSpecError(f"halfspace {i}: expected fields normal and offset") from exc
        except InvalidSpecError as exc:
            raise InvalidSpecError(f"halfspace {i}: {exc}") from exc
    return tuple(out)


def _trig_to_list(f: TrigPolynomial) -> list:
    return [{"coefficient": c, "frequency": list(k), "phase": ph} for c, k, ph in f.terms]


def _terms_from_list(items, width) -> tuple:
    out = []
    for t in items:
        freq = t["frequency"]
        if len(freq) != width or any(int(k) != k for k in freq):
            raise InvalidSpecError(f"frequencies must be {width} integers")
        out.append((float(t["coefficient"]), tuple(int(k) for k in freq), float(t.get("phase", 0.0))))
    return tuple(out)


def body_to_dict(body: Body) -> dict:
    d: dict = {"version": SPEC_VERSION, "kind": body.kind_name}
    if isinstance(body, PNormCube):
        d["p"] = body.p
    elif isinstance(body, Quadric):
        d["matrix"] = np.asarray(body.matrix).tolist()
    elif isinstance(body, SmoothedPolytope):
        d.update(halfspaces=halfspaces_to_list(body.halfspaces), sharpness=body.sharpness, scheme=body.scheme)
    elif isinstance(body, RadialGraph):
        d.update(base=body_to_dict(body.base), perturbation=_trig_to_list(body.perturbation))
    elif isinstance(body, Polytope):
        d["halfspaces"] = halfspaces_to_list(body.halfspaces)
    else:
        raise InvalidSpecError(f"cannot serialize {type(body).__name__}")
    return d


def body_from_dict(d: dict) -> Body:
    if not isinstance(d, dict):
        raise InvalidSpecError("body spec must be a JSON object")
    if d.get("version", SPEC_VERSION) != SPEC_VERSION:
        raise InvalidSpecError(f"unsupported spec version {d.get('version')!r}")
    kind = d.get("kind")
    try:
        if kind == "pnorm_cube":
            return PNormCube(d["p"])
        if kind == "quadric":
            return Quadric(np.array(d["matrix"], dtype=float))
        if kind == "smoothed_polytope":
            return SmoothedPolytope(halfspaces_from_list(d["halfspaces"]), d["sharpness"], d.get("scheme", "pnorm"))
        if kind == "radial_graph":
            return RadialGraph(body_from_dict(d["base"]), TrigPolynomial(_terms_from_list(d["perturbation"], 4)))
        if kind == "polytope":
            return Polytope(halfspaces_from_list(d["halfspaces"]))
    except KeyError as exc:
        raise InvalidSpecError(f"{kind} spec is missing field {exc}") from exc
    raise InvalidSpecError(f"unknown body kind {kind!r}")


def polytope_from_json(d) -> tuple:
    """Halfspaces from a bare list, ``{"halfspaces": [...]}`` or a polytope body spec."""
    if isinstance(d, list):
        return halfspaces_from_list(d)
    if isinstance(d, dict) and "halfspaces" in d:
        return halfspaces_from_list(d["halfspaces"])
    raise InvalidSpecError("expected a list of halfspaces")


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def factor_to_dict(f) -> dict:
    if isinstance(f, FourierFactor):
        return {"kind": "fourier", "terms": [
            {"coefficient": c, "frequency": list(k), "phase": ph} for c, k, ph in f.terms]}
    if isinstance(f, WeierstrassFactor):
        return {"kind": "weierstrass", "a": f.a, "b": f.b, "K": f.K, "amplitude": f.amplitude, "offset": f.offset}
    if isinstance(f, MollifiedFactor):
        return {"kind": "mollified", "base": factor_to_dict(f.base), "sigma": f.sigma, "resolution": f.resolution}
    raise InvalidSpecError(f"cannot serialize {type(f).__name__}")


def factor_from_dict(d: dict):
    kind = d.get("kind")
    try:
        if kind == "fourier":
            return FourierFactor(_terms_from_list(d.get("terms", []), 2))
        if kind == "weierstrass":
            return WeierstrassFactor(d["a"], d["b"], d["K"], d.get("amplitude", 1.0), d.get("offset", 0.0))
        if kind == "mollified":
            return MollifiedFactor(factor_from_dict(d["base"]), d["sigma"], d.get("resolution", 256))
    except KeyError as exc:
        raise InvalidSpecError(f"{kind} factor is missing field {exc}") from exc
    raise InvalidSpecError(f"unknown metric kind {kind!r}")


def metric_to_dict(m: ConformalMetric) -> dict:
    return {"version": SPEC_VERSION, **factor_to_dict(m.factor), **({"name": m.name} if m.name else {})}


def metric_from_dict(d: dict) -> ConformalMetric:
    if not isinstance(d, dict):
        raise InvalidSpecError("metric spec must be a JSON object")
    if d.get("version", SPEC_VERSION) != SPEC_VERSION:
        raise InvalidSpecError(f"unsupported spec version {d.get('version')!r}")
    return ConformalMetric(factor_from_dict(d), d.get("name", ""))


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------


def clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, dumps(obj).encode())


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(f"{path}: invalid JSON ({exc})") from exc


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return f"{v:.17g}" if math.isfinite(v) else "nan"


def write_csv(path, header, rows, comment: str | None = None) -> Path:
    """Atomic CSV with floats at 17 significant digits and an optional ``#`` comment line."""
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return atomic_write_bytes(path, buf.getvalue().encode())


def load_body(ref: str) -> Body:
    """Body from a JSON path, a shipped fixture name, or ``cube_limit``."""
    from .fixtures import shipped_bodies

    if ref == "cube_limit":
        return cube_limit()
    if not os.path.exists(ref):
        named = shipped_bodies()
        if ref in named:
            return named[ref]
        raise InvalidSpecError(f"no body file or fixture named {ref!r}")
    return body_from_dict(read_json(ref))


def load_metric(ref: str) -> ConformalMetric:
    from .fixtures import shipped_metrics

    if not os.path.exists(ref):
        named = shipped_metrics()
        if ref in named:
            return named[ref]
        raise InvalidSpecError(f"no metric file or fixture named {ref!r}")
    return metric_from_dict(read_json(ref))

"""JSON formats for ensembles, signals, measurement vectors, witnesses and reports.

Floats are written with 17 significant digits, which round-trips every
float64 exactly.  Complex scalars are ``[re, im]`` pairs; a real-field file
may use either plain numbers or pairs whose imaginary part is exactly 0.
"""

from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .injectivity import Certificate, CollisionWitness, InjectivityReport
from .model import Block, ConstructionMeta, Ensemble, Field, MeasurementPair, MetaKind

ENSEMBLE_SCHEMA = "affine-pr-1"
MEASUREMENT_SCHEMA = "affine-pr-meas-1"
SIGNAL_SCHEMA = "affine-pr-sig-1"
WITNESS_SCHEMA = "affine-pr-witness-1"
CERTIFICATE_SCHEMA = "affine-pr-cert-1"
REPORT_SCHEMA = "affine-pr-report-1"


class FormatError(ValueError):
    """Malformed input; the message names the offending location."""


class SchemaVersionError(FormatError):
    pass


# -- writing -------------------------------------------------------------------


def format_float(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot serialize non-finite value {v!r}")
    s = "%.17g" % v
    # keep floats recognisable as floats for other JSON readers
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def _emit(obj: Any, indent: int | None, level: int) -> str:
    if indent is None:
        return _emit_compact(obj)
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not any(isinstance(v, dict) for v in obj):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit_compact(obj: Any) -> str:
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_emit_compact(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_emit_compact(v) for v in obj) + "]"
    return _emit(obj, 0, 0)


def dumps(obj: Any, indent: int | None = 2) -> str:
    """JSON text with 17-significant-digit floats and inline numeric arrays.

    ``indent=None`` gives a single line without a trailing newline.
    """
    if indent is None:
        return _emit_compact(obj)
    return _emit(obj, indent, 0) + "\n"


def _scalar(v, field: Field):
    if field is Field.REAL:
        return float(np.real(v))
    v = complex(v)
    return [v.real, v.imag]


def encode_array(a, field: Field):
    """Nested lists of scalars (numbers, or [re, im] pairs over C), row-major."""
    a = np.asarray(a)
    field = Field(field)
    if a.ndim == 0:
        return _scalar(a, field)
    return [encode_array(row, field) for row in a]


def _offset_tuple_list(offsets, field: Field):
    return [[_scalar(v, field) for v in b] for b in offsets]


def meta_to_dict(meta: ConstructionMeta | None, field: Field):
    if meta is None:
        return None
    out: dict[str, Any] = {"kind": meta.kind.value}
    if meta.blocks:
        out["blocks"] = [
            {"rows": list(b.rows), "pairs": list(b.pairs), "offsets": _offset_tuple_list(b.offsets, field)}
            for b in meta.blocks
        ]
    out["epsilon_dr"] = meta.epsilon_dr
    if meta.delta is not None:
        out["delta"] = float(meta.delta)
    if meta.seed is not None:
        out["seed"] = int(meta.seed)
    return out


def ensemble_to_dict(E: Ensemble) -> dict:
    out = {
        "schema": ENSEMBLE_SCHEMA,
        "field": E.field.value,
        "d": E.d,
        "r": E.r,
        "measurements": [{"M": encode_array(p.M, E.field), "b": encode_array(p.b, E.field)} for p in E.pairs],
    }
    meta = meta_to_dict(E.meta, E.field)
    if meta is not None:
        out["meta"] = meta
    return out


def serialize_ensemble(E: Ensemble) -> str:
    E.check()
    return dumps(ensemble_to_dict(E))


def serialize_signal(x, field: Field) -> str:
    field = Field(field)
    return dumps({"schema": SIGNAL_SCHEMA, "field": field.value, "x": encode_array(np.asarray(x).reshape(-1), field)})


def serialize_measurements(y) -> str:
    return dumps({"schema": MEASUREMENT_SCHEMA, "y": [float(v) for v in np.asarray(y, dtype=float).reshape(-1)]})


def witness_to_dict(w: CollisionWitness, field: Field) -> dict:
    return {
        "schema": WITNESS_SCHEMA,
        "field": Field(field).value,
        "x": encode_array(w.x, field),
        "y": encode_array(w.y, field),
        "gap": w.gap,
        "separation": w.separation,
        "scale": w.scale,
    }


def certificate_to_dict(cert: Certificate) -> dict:
    return {"schema": CERTIFICATE_SCHEMA, "field": cert.field.value, "Q": encode_array(cert.Q, cert.field)}


def report_to_dict(rep: InjectivityReport, field: Field) -> dict:
    field = Field(field)
    return {
        "schema": REPORT_SCHEMA,
        "verdict": rep.verdict,
        "method": rep.method,
        "proved_injective": rep.proved_injective,
        "restarts": rep.restarts,
        "min_margin": rep.min_margin if math.isfinite(rep.min_margin) else None,
        "argmin": None if rep.argmin is None else encode_array(rep.argmin, field),
        "tolerances": dict(rep.tolerances),
        "witness": None if rep.witness is None else witness_to_dict(rep.witness, field),
        "certificate": None if rep.certificate is None else certificate_to_dict(rep.certificate),
    }


# -- reading -------------------------------------------------------------------


def loads(text: str, what: str = "document") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{what}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _require(obj, key: str, path: str):
    if not isinstance(obj, dict):
        raise FormatError(f"{path or '<root>'}: expected an object")
    if key not in obj:
        raise FormatError(f"{path + '.' if path else ''}{key}: missing")
    return obj[key]


def _check_schema(obj, expected: str) -> None:
    got = _require(obj, "schema", "")
    if got != expected:
        raise SchemaVersionError(f"schema: expected {expected!r}, got {got!r}")


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"{path}: expected a number, got {json.dumps(v)[:40]}")
    v = float(v)
    if not math.isfinite(v):
        raise FormatError(f"{path}: non-finite value")
    return v


def _decode_scalar(v, field: Field, path: str):
    if isinstance(v, list):
        if len(v) != 2:
            raise FormatError(f"{path}: complex scalar must be [re, im]")
        re, im = _number(v[0], path + "[0]"), _number(v[1], path + "[1]")
        if field is Field.REAL:
            if im != 0.0:
                raise FormatError(f"{path}: nonzero imaginary part in a real-field file")
            return re
        return complex(re, im)
    x = _number(v, path)
    return x if field is Field.REAL else complex(x, 0.0)


def decode_array(v, field: Field, shape: tuple[int, ...], path: str) -> np.ndarray:
    """Inverse of encode_array with shape checking."""
    field = Field(field)
    if not shape:
        return np.array(_decode_scalar(v, field, path), dtype=field.dtype)
    if not isinstance(v, list) or len(v) != shape[0]:
        got = len(v) if isinstance(v, list) else type(v).__name__
        raise FormatError(f"{path}: expected a list of length {shape[0]}, got {got}")
    out = np.empty(shape, dtype=field.dtype)
    for i, item in enumerate(v):
        out[i] = decode_array(item, field, shape[1:], f"{path}[{i}]")
    return out


def _decode_field(obj, path: str = "field") -> Field:
    raw = _require(obj, "field", "")
    try:
        return Field(raw)
    except ValueError:
        raise FormatError(f"{path}: expected 'real' or 'complex', got {raw!r}") from None


def _int(obj, key: str, path: str = "") -> int:
    v = _require(obj, key, path)
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(f"{path + '.' if path else ''}{key}: expected an integer")
    return v


def meta_from_dict(obj, field: Field, path: str = "meta") -> ConstructionMeta:
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: expected an object")
    try:
        kind = MetaKind(_require(obj, "kind", path))
    except ValueError:
        raise FormatError(f"{path}.kind: unknown kind {obj['kind']!r}") from None
    blocks = []
    for t, blk in enumerate(obj.get("blocks", [])):
        bp = f"{path}.blocks[{t}]"
        rows = _require(blk, "rows", bp)
        pairs = _require(blk, "pairs", bp)
        for name, val in (("rows", rows), ("pairs", pairs)):
            if not (isinstance(val, list) and len(val) == 2 and all(isinstance(i, int) for i in val)):
                raise FormatError(f"{bp}.{name}: expected [start, stop]")
        raw = _require(blk, "offsets", bp)
        if not isinstance(raw, list):
            raise FormatError(f"{bp}.offsets: expected a list")
        size = rows[1] - rows[0]
        offsets = []
        for k, b in enumerate(raw):
            arr = decode_array(b, field, (size,), f"{bp}.offsets[{k}]")
            offsets.append(tuple(v.item() for v in arr))
        blocks.append(Block(tuple(rows), tuple(pairs), tuple(offsets)))
    eps = obj.get("epsilon_dr", 0)
    delta = obj.get("delta")
    seed = obj.get("seed")
    return ConstructionMeta(
        kind,
        tuple(blocks),
        int(eps),
        None if delta is None else _number(delta, f"{path}.delta"),
        None if seed is None else int(seed),
    )


def ensemble_from_dict(obj) -> Ensemble:
    _check_schema(obj, ENSEMBLE_SCHEMA)
    field = _decode_field(obj)
    d = _int(obj, "d")
    r = _int(obj, "r")
    if d < 1 or r < 1:
        raise FormatError("d, r: must be >= 1")
    raw = _require(obj, "measurements", "")
    if not isinstance(raw, list) or not raw:
        raise FormatError("measurements: expected a nonempty list")
    pairs = []
    for j, item in enumerate(raw):
        p = f"measurements[{j}]"
        M = decode_array(_require(item, "M", p), field, (d, r), p + ".M")
        b = decode_array(_require(item, "b", p), field, (r,), p + ".b")
        pairs.append(MeasurementPair(M, b))
    meta = meta_from_dict(obj["meta"], field) if obj.get("meta") is not None else None
    E = Ensemble(field, d, r, tuple(pairs), meta)
    E.check()
    return E


def deserialize_ensemble(text: str) -> Ensemble:
    try:
        return ensemble_from_dict(loads(text, "ensemble"))
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def deserialize_signal(text: str) -> tuple[Field, np.ndarray]:
    obj = loads(text, "signal")
    _check_schema(obj, SIGNAL_SCHEMA)
    field = _decode_field(obj)
    raw = _require(obj, "x", "")
    if not isinstance(raw, list) or not raw:
        raise FormatError("x: expected a nonempty list")
    return field, decode_array(raw, field, (len(raw),), "x")


def deserialize_measurements(text: str) -> np.ndarray:
    obj = loads(text, "measurements")
    _check_schema(obj, MEASUREMENT_SCHEMA)
    raw = _require(obj, "y", "")
    if not isinstance(raw, list):
        raise FormatError("y: expected a list")
    return np.array([_number(v, f"y[{j}]") for j, v in enumerate(raw)], dtype=float)


def witness_from_dict(obj) -> tuple[Field, CollisionWitness]:
    _check_schema(obj, WITNESS_SCHEMA)
    field = _decode_field(obj)
    x_raw = _require(obj, "x", "")
    y_raw = _require(obj, "y", "")
    if not isinstance(x_raw, list) or not isinstance(y_raw, list):
        raise FormatError("x, y: expected lists")
    x = decode_array(x_raw, field, (len(x_raw),), "x")
    y = decode_array(y_raw, field, (len(x_raw),), "y")
    w = CollisionWitness(
        x,
        y,
        _number(_require(obj, "gap", ""), "gap"),
        _number(_require(obj, "separation", ""), "separation"),
        _number(_require(obj, "scale", ""), "scale"),
    )
    return field, w


def deserialize_witness(text: str) -> tuple[Field, CollisionWitness]:
    return witness_from_dict(loads(text, "witness"))


def certificate_from_dict(obj) -> Certificate:
    _check_schema(obj, CERTIFICATE_SCHEMA)
    field = _decode_field(obj)
    raw = _require(obj, "Q", "")
    if not isinstance(raw, list) or not raw:
        raise FormatError("Q: expected a nonempty list of rows")
    n = len(raw)
    return Certificate(decode_array(raw, field, (n, n), "Q"), field)


def deserialize_certificate(text: str) -> Certificate:
    return certificate_from_dict(loads(text, "certificate"))

"""Wire v1 value codec against native Python objects.

Mirrors the byte-level format in docs/wire_v1.md of the driver package:
tuples, dicts, non-finite floats, dense arrays and handles ride in
single-key tagged objects; everything else is plain JSON. Arrays map to
numpy with one of the eleven supported dtypes.
"""

from __future__ import annotations

import json
import math
from typing import Mapping

import numpy as np

DTYPES = (
    "bool",
    "int8",
    "int16",
    "int32",
    "int64",
    "uint8",
    "uint16",
    "uint32",
    "uint64",
    "float32",
    "float64",
)


class WireValueError(ValueError):
    """Value cannot be decoded (malformed) or encoded (unsupported type)."""


def dumps(obj: object) -> bytes:
    return json.dumps(
        obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def decode(j: object, handles: Mapping[int, object]) -> object:
    """Tagged jsonable -> native value; handle ids resolve via the table."""
    if j is None or isinstance(j, (bool, int, float, str)):
        return j
    if isinstance(j, list):
        return [decode(x, handles) for x in j]
    if isinstance(j, dict):
        if len(j) != 1:
            raise WireValueError(f"bad value object: {j!r}")
        tag, body = next(iter(j.items()))
        if tag == "$t":
            return tuple(decode(x, handles) for x in body)
        if tag == "$d":
            out = {}
            for entry in body:
                if not (isinstance(entry, list) and len(entry) == 2):
                    raise WireValueError("bad $d entry")
                key = decode(entry[0], handles)
                try:
                    out[key] = decode(entry[1], handles)
                except TypeError:
                    raise WireValueError(f"unhashable key {key!r}") from None
            return out
        if tag == "$f":
            try:
                return {"nan": math.nan, "+inf": math.inf, "-inf": -math.inf}[body]
            except KeyError:
                raise WireValueError(f"bad $f token {body!r}") from None
        if tag == "$nd":
            return _decode_array(body, handles)
        if tag == "$h":
            if not isinstance(body, int):
                raise WireValueError("bad handle id")
            try:
                return handles[body]
            except KeyError:
                raise WireValueError(f"unknown handle {body}") from None
        raise WireValueError(f"unknown tag {tag!r}")
    raise WireValueError(f"cannot decode {type(j).__name__}")


def _decode_array(body: object, handles) -> np.ndarray:
    if not isinstance(body, dict):
        raise WireValueError("bad $nd body")
    dtype = body.get("dtype")
    shape = body.get("shape")
    data = body.get("data")
    if dtype not in DTYPES:
        raise WireValueError(f"unsupported dtype {dtype!r}")
    if not isinstance(shape, list) or not isinstance(data, list):
        raise WireValueError("bad $nd shape/data")
    n = 1
    for s in shape:
        n *= s
    if n != len(data):
        raise WireValueError("$nd shape/data length mismatch")
    flat = [decode(x, handles) for x in data]
    return np.array(flat, dtype=dtype).reshape(shape)


def encode(v: object, handle_of=None) -> object:
    """Native value -> tagged jsonable; raises WireValueError if unsupported.

    handle_of, when given, maps otherwise-unencodable objects to handle ids.
    """
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if math.isnan(x):
            return {"$f": "nan"}
        if math.isinf(x):
            return {"$f": "+inf" if x > 0 else "-inf"}
        return x
    if isinstance(v, str):
        return v
    if isinstance(v, list):
        return [encode(x, handle_of) for x in v]
    if isinstance(v, tuple):
        return {"$t": [encode(x, handle_of) for x in v]}
    if isinstance(v, dict):
        return {"$d": [[encode(k, handle_of), encode(x, handle_of)] for k, x in v.items()]}
    if isinstance(v, np.ndarray):
        name = v.dtype.name
        if name not in DTYPES:
            raise WireValueError(f"unsupported array dtype {name!r}")
        return {
            "$nd": {
                "dtype": name,
                "shape": list(v.shape),
                "data": [encode(x.item(), handle_of) for x in v.ravel(order="C")],
            }
        }
    if handle_of is not None:
        hid = handle_of(v)
        if hid is not None:
            return {"$h": hid}
    raise WireValueError(f"cannot encode {type(v).__name__}")

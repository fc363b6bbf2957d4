"""Constraint trees, runtime values, and membership checking.

Everything in here is an immutable description: constraints denote sets of
values, values are the tagged runtime data exchanged with the subject under
test. `satisfies` is the membership predicate that the generator is checked
against, so it must stay independent of how values are produced.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class DType(Enum):
    """Element type tags for dense arrays."""

    BOOL = "bool"
    INT8 = "int8"
    INT16 = "int16"
    INT32 = "int32"
    INT64 = "int64"
    UINT8 = "uint8"
    UINT16 = "uint16"
    UINT32 = "uint32"
    UINT64 = "uint64"
    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def is_float(self) -> bool:
        return self in (DType.FLOAT32, DType.FLOAT64)

    @property
    def is_bool(self) -> bool:
        return self is DType.BOOL

    def int_bounds(self) -> tuple[int, int]:
        """Closed [lo, hi] range for integer dtypes."""
        assert not self.is_float and not self.is_bool
        bits = int(self.value.lstrip("uint"))
        if self.value.startswith("u"):
            return 0, 2**bits - 1
        return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class VNone:
    pass


@dataclass(frozen=True, slots=True)
class VBool:
    value: bool


@dataclass(frozen=True, slots=True)
class VInt:
    value: int


@dataclass(frozen=True, slots=True)
class VFloat:
    value: float


@dataclass(frozen=True, slots=True)
class VStr:
    value: str


@dataclass(frozen=True, slots=True)
class VList:
    items: tuple["Value", ...]


@dataclass(frozen=True, slots=True)
class VTuple:
    items: tuple["Value", ...]


@dataclass(frozen=True, slots=True)
class VDict:
    """Ordered key/value pairs; keys must be pairwise distinct structurally."""

    pairs: tuple[tuple["Value", "Value"], ...]


@dataclass(frozen=True, slots=True)
class VArray:
    """Dense array: flat row-major data plus a shape and element tag."""

    dtype: DType
    shape: tuple[int, ...]
    data: tuple["Value", ...]


@dataclass(frozen=True, slots=True)
class VHandle:
    """Opaque reference to a subject-side object held in the worker."""

    id: int
    gen: str = ""


Value = Union[
    VNone, VBool, VInt, VFloat, VStr, VList, VTuple, VDict, VArray, VHandle
]

VALUE_KINDS = (
    "none",
    "bool",
    "int",
    "float",
    "str",
    "list",
    "tuple",
    "dict",
    "ndarray",
    "handle",
)


def value_kind(v: Value) -> str:
    if isinstance(v, VNone):
        return "none"
    if isinstance(v, VBool):
        return "bool"
    if isinstance(v, VInt):
        return "int"
    if isinstance(v, VFloat):
        return "float"
    if isinstance(v, VStr):
        return "str"
    if isinstance(v, VList):
        return "list"
    if isinstance(v, VTuple):
        return "tuple"
    if isinstance(v, VDict):
        return "dict"
    if isinstance(v, VArray):
        return "ndarray"
    if isinstance(v, VHandle):
        return "handle"
    raise TypeError(f"not a Value: {v!r}")


def from_native(obj: object) -> Value:
    """Wrap a plain Python object (no arrays/handles) into a Value."""
    if obj is None:
        return VNone()
    if isinstance(obj, bool):
        return VBool(obj)
    if isinstance(obj, int):
        return VInt(obj)
    if isinstance(obj, float):
        return VFloat(obj)
    if isinstance(obj, str):
        return VStr(obj)
    if isinstance(obj, list):
        return VList(tuple(from_native(x) for x in obj))
    if isinstance(obj, tuple):
        return VTuple(tuple(from_native(x) for x in obj))
    if isinstance(obj, dict):
        return VDict(
            tuple((from_native(k), from_native(v)) for k, v in obj.items())
        )
    raise TypeError(f"cannot wrap {type(obj).__name__}")


def element_count(v: Value) -> int:
    """Number of scalar leaves in a value (the size measure for budgets)."""
    if isinstance(v, (VList, VTuple)):
        return sum(element_count(x) for x in v.items)
    if isinstance(v, VDict):
        return sum(element_count(k) + element_count(x) for k, x in v.pairs)
    if isinstance(v, VArray):
        return len(v.data)
    return 1


def _float_eq(a: float, b: float) -> bool:
    # NaN equals NaN here (shrink fixpoints need reflexivity); zero signs
    # are distinguished so canonical encodings stay stable.
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return a == b and math.copysign(1.0, a) == math.copysign(1.0, b)


def structural_eq(a: Value, b: Value) -> bool:
    """Deep equality with strict tags: Int 0, Float 0.0 and Bool False all differ."""
    if type(a) is not type(b):
        return False
    if isinstance(a, VNone):
        return True
    if isinstance(a, VFloat):
        return _float_eq(a.value, b.value)
    if isinstance(a, (VBool, VInt, VStr)):
        return a.value == b.value
    if isinstance(a, (VList, VTuple)):
        return len(a.items) == len(b.items) and all(
            structural_eq(x, y) for x, y in zip(a.items, b.items)
        )
    if isinstance(a, VDict):
        return len(a.pairs) == len(b.pairs) and all(
            structural_eq(ka, kb) and structural_eq(va, vb)
            for (ka, va), (kb, vb) in zip(a.pairs, b.pairs)
        )
    if isinstance(a, VArray):
        return (
            a.dtype is b.dtype
            and a.shape == b.shape
            and all(structural_eq(x, y) for x, y in zip(a.data, b.data))
        )
    if isinstance(a, VHandle):
        return a.id == b.id and a.gen == b.gen
    raise TypeError(f"not a Value: {a!r}")


_STR_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _render_str(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch in _STR_ESCAPES:
            out.append(_STR_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\x{ord(ch):02x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def render_value(v: Value) -> str:
    """Canonical literal syntax for a value (the same syntax the parser reads)."""
    if isinstance(v, VNone):
        return "None"
    if isinstance(v, VBool):
        return "True" if v.value else "False"
    if isinstance(v, VInt):
        return str(v.value)
    if isinstance(v, VFloat):
        return repr(v.value)
    if isinstance(v, VStr):
        return _render_str(v.value)
    if isinstance(v, VList):
        return "[" + ", ".join(render_value(x) for x in v.items) + "]"
    if isinstance(v, VTuple):
        if len(v.items) == 1:
            return f"({render_value(v.items[0])},)"
        return "(" + ", ".join(render_value(x) for x in v.items) + ")"
    if isinstance(v, VDict):
        inner = ", ".join(
            f"{render_value(k)}: {render_value(x)}" for k, x in v.pairs
        )
        return "{" + inner + "}"
    if isinstance(v, VArray):
        shape = (
            f"({v.shape[0]},)"
            if len(v.shape) == 1
            else "(" + ", ".join(str(s) for s in v.shape) + ")"
        )
        data = "[" + ", ".join(render_value(x) for x in v.data) + "]"
        return f'ndarray("{v.dtype.value}", {shape}, {data})'
    if isinstance(v, VHandle):
        # Debug form only; reports substitute the construct recipe instead.
        return f"handle({v.id})"
    raise TypeError(f"not a Value: {v!r}")


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class GenRef:
    """Reference to a user generator call with fixed literal arguments."""

    name: str
    args: tuple[Value, ...] = ()


FromsItem = Union[Value, GenRef]


@dataclass(frozen=True, slots=True)
class Froms:
    items: tuple[FromsItem, ...]


@dataclass(frozen=True, slots=True)
class Bools:
    pass


@dataclass(frozen=True, slots=True)
class Ints:
    min: Optional[int] = None
    max: Optional[int] = None

    def bounds(self) -> tuple[int, int]:
        lo = INT64_MIN if self.min is None else self.min
        hi = INT64_MAX if self.max is None else self.max
        return lo, hi


@dataclass(frozen=True, slots=True)
class Floats:
    min: Optional[float] = None
    max: Optional[float] = None
    exclude_min: bool = False
    exclude_max: bool = False
    allow_nan: bool = False
    allow_inf: bool = False
    width: int = 64


@dataclass(frozen=True, slots=True)
class Lists:
    elem: "TypeConstraint"
    min_len: int = 0
    max_len: int = 2


@dataclass(frozen=True, slots=True)
class IntLists:
    """Shorthand for integer lists; absent bounds use the +2/+5 sugar."""

    min_len: int = 1
    max_len: Optional[int] = None
    min: int = 1
    max: Optional[int] = None

    def len_bounds(self) -> tuple[int, int]:
        return self.min_len, (
            self.min_len + 2 if self.max_len is None else self.max_len
        )

    def elem_bounds(self) -> tuple[int, int]:
        return self.min, (self.min + 5 if self.max is None else self.max)


@dataclass(frozen=True, slots=True)
class Tuples:
    components: tuple["TypeConstraint", ...]


@dataclass(frozen=True, slots=True)
class NpShapes:
    min_dims: int = 1
    max_dims: int = 3
    min_side: int = 1
    max_side: int = 10


@dataclass(frozen=True, slots=True)
class NpArrays:
    dtype: DType
    shape: Union[tuple[int, ...], NpShapes]


@dataclass(frozen=True, slots=True)
class Dicts:
    keys: "TypeConstraint"
    values: "TypeConstraint"
    min_size: int = 0
    max_size: Optional[int] = None

    def size_bounds(self) -> tuple[int, int]:
        return self.min_size, (
            self.min_size + 5 if self.max_size is None else self.max_size
        )


@dataclass(frozen=True, slots=True)
class Anys:
    alternatives: tuple["TypeConstraint", ...]


@dataclass(frozen=True, slots=True)
class Objs:
    gen: str


TypeConstraint = Union[
    Froms,
    Bools,
    Ints,
    Floats,
    Lists,
    IntLists,
    Tuples,
    NpShapes,
    NpArrays,
    Dicts,
    Anys,
    Objs,
]


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _f32_roundtrips(x: float) -> bool:
    if math.isnan(x) or math.isinf(x):
        return True
    try:
        return struct.unpack("<f", struct.pack("<f", x))[0] == x
    except OverflowError:
        return False


def _key_safe_literal(item: FromsItem) -> bool:
    if isinstance(item, (VNone, VBool, VInt, VFloat, VStr)):
        return True
    if isinstance(item, VTuple):
        return all(_key_safe_literal(x) for x in item.items)
    return False


def _key_safe(c: TypeConstraint) -> bool:
    """Dict keys must stay scalar/string/tuple so equality stays cheap."""
    if isinstance(c, (Bools, Ints, Floats)):
        return True
    if isinstance(c, Froms):
        return all(_key_safe_literal(i) for i in c.items)
    if isinstance(c, Tuples):
        return all(_key_safe(x) for x in c.components)
    if isinstance(c, NpShapes):
        return True
    if isinstance(c, Anys):
        return all(_key_safe(x) for x in c.alternatives)
    return False


def validate(c: TypeConstraint, path: str = "") -> list[str]:
    """Check constraint invariants; returns violation messages (empty = ok)."""
    here = path or "constraint"
    out: list[str] = []

    if isinstance(c, Froms):
        if not c.items:
            out.append(f"{here}: empty froms enumeration")
    elif isinstance(c, Bools):
        pass
    elif isinstance(c, Ints):
        if c.min is not None and c.max is not None and c.min > c.max:
            out.append(f"{here}: min > max")
    elif isinstance(c, Floats):
        if c.min is not None and c.max is not None:
            if c.min > c.max:
                out.append(f"{here}: min > max")
            elif c.min == c.max and c.exclude_min and c.exclude_max:
                out.append(f"{here}: empty interval (both endpoints excluded)")
        if c.width not in (32, 64):
            out.append(f"{here}: width must be 32 or 64")
    elif isinstance(c, Lists):
        if c.min_len < 0:
            out.append(f"{here}: negative min_len")
        if c.min_len > c.max_len:
            out.append(f"{here}: min_len > max_len")
        out.extend(validate(c.elem, f"{here}.elem"))
    elif isinstance(c, IntLists):
        lo_n, hi_n = c.len_bounds()
        lo_e, hi_e = c.elem_bounds()
        if lo_n < 0:
            out.append(f"{here}: negative min_len")
        if lo_n > hi_n:
            out.append(f"{here}: min_len > max_len")
        if lo_e > hi_e:
            out.append(f"{here}: min > max")
    elif isinstance(c, Tuples):
        if not c.components:
            out.append(f"{here}: empty tuple constraint")
        for i, comp in enumerate(c.components):
            out.extend(validate(comp, f"{here}[{i}]"))
    elif isinstance(c, NpShapes):
        if c.min_dims < 1:
            out.append(f"{here}: min_dims must be >= 1")
        if c.min_dims > c.max_dims:
            out.append(f"{here}: min_dims > max_dims")
        if c.min_side < 1:
            out.append(f"{here}: min_side must be >= 1")
        if c.min_side > c.max_side:
            out.append(f"{here}: min_side > max_side")
    elif isinstance(c, NpArrays):
        if isinstance(c.shape, NpShapes):
            out.extend(validate(c.shape, f"{here}.shape"))
        else:
            if any(s < 1 for s in c.shape):
                out.append(f"{here}: shape sides must be positive")
            if not c.shape:
                out.append(f"{here}: empty shape")
    elif isinstance(c, Dicts):
        lo, hi = c.size_bounds()
        if lo < 0:
            out.append(f"{here}: negative min_size")
        if lo > hi:
            out.append(f"{here}: min_size > max_size")
        if not _key_safe(c.keys):
            out.append(f"{here}.keys: keys must denote scalar/string/tuple values")
        out.extend(validate(c.keys, f"{here}.keys"))
        out.extend(validate(c.values, f"{here}.values"))
    elif isinstance(c, Anys):
        if not c.alternatives:
            out.append(f"{here}: empty alternatives")
        for i, alt in enumerate(c.alternatives):
            out.extend(validate(alt, f"{here}|{i}"))
    elif isinstance(c, Objs):
        if not c.gen:
            out.append(f"{here}: empty generator name")
    else:
        out.append(f"{here}: unknown constraint {type(c).__name__}")
    return out


# ---------------------------------------------------------------------------
# Membership
# ---------------------------------------------------------------------------


def _scalar_conforms(v: Value, dtype: DType) -> bool:
    if dtype.is_bool:
        return isinstance(v, VBool)
    if dtype.is_float:
        if not isinstance(v, VFloat):
            return False
        return dtype is DType.FLOAT64 or _f32_roundtrips(v.value)
    if not isinstance(v, VInt):
        return False
    lo, hi = dtype.int_bounds()
    return lo <= v.value <= hi


def _float_in_range(x: float, c: Floats) -> bool:
    if math.isnan(x):
        return c.allow_nan
    if math.isinf(x):
        if not c.allow_inf:
            return False
        # An explicit finite bound on that side rules the infinity out.
        if x > 0 and c.max is not None:
            return False
        if x < 0 and c.min is not None:
            return False
        return True
    if c.min is not None and (x < c.min or (c.exclude_min and x == c.min)):
        return False
    if c.max is not None and (x > c.max or (c.exclude_max and x == c.max)):
        return False
    return True


def satisfies(v: Value, c: TypeConstraint) -> bool:
    """Membership of a value in a constraint's denoted set."""
    if isinstance(c, Froms):
        for item in c.items:
            if isinstance(item, GenRef):
                if isinstance(v, VHandle) and v.gen == item.name:
                    return True
            elif structural_eq(v, item):
                return True
        return False
    if isinstance(c, Bools):
        return isinstance(v, VBool)
    if isinstance(c, Ints):
        if not isinstance(v, VInt):
            return False
        lo, hi = c.bounds()
        return INT64_MIN <= v.value <= INT64_MAX and lo <= v.value <= hi
    if isinstance(c, Floats):
        if not isinstance(v, VFloat):
            return False
        if c.width == 32 and not _f32_roundtrips(v.value):
            return False
        return _float_in_range(v.value, c)
    if isinstance(c, Lists):
        return (
            isinstance(v, VList)
            and c.min_len <= len(v.items) <= c.max_len
            and all(satisfies(x, c.elem) for x in v.items)
        )
    if isinstance(c, IntLists):
        if not isinstance(v, VList):
            return False
        lo_n, hi_n = c.len_bounds()
        lo_e, hi_e = c.elem_bounds()
        return lo_n <= len(v.items) <= hi_n and all(
            isinstance(x, VInt) and lo_e <= x.value <= hi_e for x in v.items
        )
    if isinstance(c, Tuples):
        return (
            isinstance(v, VTuple)
            and len(v.items) == len(c.components)
            and all(satisfies(x, k) for x, k in zip(v.items, c.components))
        )
    if isinstance(c, NpShapes):
        return (
            isinstance(v, VTuple)
            and c.min_dims <= len(v.items) <= c.max_dims
            and all(
                isinstance(x, VInt) and c.min_side <= x.value <= c.max_side
                for x in v.items
            )
        )
    if isinstance(c, NpArrays):
        if not isinstance(v, VArray) or v.dtype is not c.dtype:
            return False
        if math.prod(v.shape) != len(v.data):
            return False
        if isinstance(c.shape, NpShapes):
            s = c.shape
            if not (s.min_dims <= len(v.shape) <= s.max_dims):
                return False
            if any(not (s.min_side <= side <= s.max_side) for side in v.shape):
                return False
        elif v.shape != c.shape:
            return False
        return all(_scalar_conforms(x, c.dtype) for x in v.data)
    if isinstance(c, Dicts):
        if not isinstance(v, VDict):
            return False
        lo, hi = c.size_bounds()
        if not (lo <= len(v.pairs) <= hi):
            return False
        keys = [k for k, _ in v.pairs]
        for i, k in enumerate(keys):
            if any(structural_eq(k, other) for other in keys[:i]):
                return False
        return all(
            satisfies(k, c.keys) and satisfies(x, c.values) for k, x in v.pairs
        )
    if isinstance(c, Anys):
        return any(satisfies(v, alt) for alt in c.alternatives)
    if isinstance(c, Objs):
        return isinstance(v, VHandle) and v.gen == c.gen
    raise TypeError(f"unknown constraint {type(c).__name__}")

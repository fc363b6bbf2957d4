"""Precondition expressions: AST plus the three-valued evaluator.

Preconditions are evaluated on the generator side, before anything crosses
the process boundary, so the semantics here are a closed, total subset of
the subject language: every evaluation yields True, False or an EvalError
value. Errors never abort a campaign; the orchestrator treats them as
discards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

from .model import (
    INT64_MAX,
    INT64_MIN,
    Value,
    VArray,
    VBool,
    VDict,
    VFloat,
    VHandle,
    VInt,
    VList,
    VNone,
    VStr,
    VTuple,
    render_value,
    value_kind,
)

CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")
ADD_OPS = ("+", "-")
MUL_OPS = ("*", "/", "%")


@dataclass(frozen=True, slots=True)
class Lit:
    value: Value


@dataclass(frozen=True, slots=True)
class Arg:
    name: str


@dataclass(frozen=True, slots=True)
class Not:
    operand: "RequireExpr"


@dataclass(frozen=True, slots=True)
class BoolOp:
    op: str  # "and" | "or"
    left: "RequireExpr"
    right: "RequireExpr"


@dataclass(frozen=True, slots=True)
class Cmp:
    op: str
    left: "RequireExpr"
    right: "RequireExpr"


@dataclass(frozen=True, slots=True)
class Arith:
    op: str
    left: "RequireExpr"
    right: "RequireExpr"


@dataclass(frozen=True, slots=True)
class Neg:
    operand: "RequireExpr"


@dataclass(frozen=True, slots=True)
class Len:
    operand: "RequireExpr"


@dataclass(frozen=True, slots=True)
class TypeOf:
    operand: "RequireExpr"


@dataclass(frozen=True, slots=True)
class Index:
    seq: "RequireExpr"
    index: "RequireExpr"


RequireExpr = Union[Lit, Arg, Not, BoolOp, Cmp, Arith, Neg, Len, TypeOf, Index]

Binding = Mapping[str, Value]


@dataclass(frozen=True, slots=True)
class EvalError:
    """Evaluation failure as a value; `path` names the offending subterm."""

    kind: str
    path: str


EvalResult = Union[bool, EvalError]

# Rendering precedence levels, loosest first.
_LEVELS = {
    "or": 1,
    "and": 2,
    "not": 3,
    "cmp": 4,
    "add": 5,
    "mul": 6,
    "unary": 7,
    "postfix": 8,
    "atom": 9,
}


def render_expr(e: RequireExpr) -> str:
    return _render(e, 0)


def _render(e: RequireExpr, parent: int) -> str:
    if isinstance(e, Lit):
        return render_value(e.value)
    if isinstance(e, Arg):
        return e.name
    if isinstance(e, Len):
        return f"len({_render(e.operand, 0)})"
    if isinstance(e, TypeOf):
        return f"type_of({_render(e.operand, 0)})"
    if isinstance(e, Index):
        return f"{_render(e.seq, _LEVELS['postfix'])}[{_render(e.index, 0)}]"
    if isinstance(e, Neg):
        lvl = _LEVELS["unary"]
        text = f"-{_render(e.operand, lvl)}"
    elif isinstance(e, Not):
        lvl = _LEVELS["not"]
        text = f"not {_render(e.operand, lvl)}"
    elif isinstance(e, Cmp):
        # Comparison is non-associative: parenthesize nested comparisons.
        lvl = _LEVELS["cmp"]
        text = f"{_render(e.left, lvl + 1)} {e.op} {_render(e.right, lvl + 1)}"
    elif isinstance(e, Arith):
        lvl = _LEVELS["add"] if e.op in ADD_OPS else _LEVELS["mul"]
        text = f"{_render(e.left, lvl)} {e.op} {_render(e.right, lvl + 1)}"
    elif isinstance(e, BoolOp):
        lvl = _LEVELS[e.op]
        text = f"{_render(e.left, lvl)} {e.op} {_render(e.right, lvl + 1)}"
    else:
        raise TypeError(f"not a RequireExpr: {e!r}")
    return f"({text})" if lvl < parent else text


def _err(kind: str, e: RequireExpr) -> EvalError:
    return EvalError(kind, render_expr(e))


def _is_num(v: Value) -> bool:
    return isinstance(v, (VInt, VFloat))


def _num(v: Value) -> Union[int, float]:
    assert isinstance(v, (VInt, VFloat))
    return v.value


def _int_result(n: int, e: RequireExpr) -> Union[Value, EvalError]:
    if not (INT64_MIN <= n <= INT64_MAX):
        return _err("overflow", e)
    return VInt(n)


def values_equal(a: Value, b: Value) -> Union[bool, EvalError]:
    """Equality under precondition semantics (IEEE floats, numeric Int/Float)."""
    if isinstance(a, VHandle) or isinstance(b, VHandle):
        # Handles only compare against none; anything richer is unsupported.
        if isinstance(a, VNone) or isinstance(b, VNone):
            return False
        return EvalError("unsupported-handle-op", "==")
    if _is_num(a) and _is_num(b):
        return _num(a) == _num(b)
    if type(a) is not type(b):
        return False
    if isinstance(a, VNone):
        return True
    if isinstance(a, (VBool, VInt, VStr)):
        return a.value == b.value
    if isinstance(a, VFloat):
        return a.value == b.value  # NaN != NaN here, unlike structural_eq
    if isinstance(a, (VList, VTuple)):
        if len(a.items) != len(b.items):
            return False
        for x, y in zip(a.items, b.items):
            r = values_equal(x, y)
            if not isinstance(r, bool) or not r:
                return r
        return True
    if isinstance(a, VDict):
        if len(a.pairs) != len(b.pairs):
            return False
        for (ka, va), (kb, vb) in zip(a.pairs, b.pairs):
            for r in (values_equal(ka, kb), values_equal(va, vb)):
                if not isinstance(r, bool) or not r:
                    return r
        return True
    if isinstance(a, VArray):
        if a.dtype is not b.dtype or a.shape != b.shape:
            return False
        for x, y in zip(a.data, b.data):
            r = values_equal(x, y)
            if not isinstance(r, bool) or not r:
                return r
        return True
    return False


def _compare(op: str, a: Value, b: Value, e: RequireExpr) -> EvalResult:
    if op in ("==", "!="):
        r = values_equal(a, b)
        if isinstance(r, EvalError):
            return EvalError(r.kind, render_expr(e))
        return r if op == "==" else not r
    # Ordered comparisons: numerics together, strings together.
    if _is_num(a) and _is_num(b):
        x, y = _num(a), _num(b)
    elif isinstance(a, VStr) and isinstance(b, VStr):
        x, y = a.value, b.value
    else:
        return _err("type-mismatch", e)
    if op == "<":
        return x < y
    if op == "<=":
        return x <= y
    if op == ">":
        return x > y
    return x >= y


def _lookup(d: VDict, key: Value, e: RequireExpr) -> Union[Value, EvalError]:
    for k, v in d.pairs:
        r = values_equal(k, key)
        if isinstance(r, EvalError):
            return EvalError(r.kind, render_expr(e))
        if r:
            return v
    return _err("key-missing", e)


def _ev(e: RequireExpr, b: Binding) -> Union[Value, EvalError]:
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Arg):
        try:
            return b[e.name]
        except KeyError:
            return _err("unknown-identifier", e)

    if isinstance(e, BoolOp):
        left = _ev(e.left, b)
        if isinstance(left, EvalError):
            return left
        if not isinstance(left, VBool):
            return _err("type-mismatch", e.left)
        # Short-circuit: the untaken branch is never evaluated.
        if e.op == "and" and not left.value:
            return VBool(False)
        if e.op == "or" and left.value:
            return VBool(True)
        right = _ev(e.right, b)
        if isinstance(right, EvalError):
            return right
        if not isinstance(right, VBool):
            return _err("type-mismatch", e.right)
        return right

    if isinstance(e, Not):
        v = _ev(e.operand, b)
        if isinstance(v, EvalError):
            return v
        if not isinstance(v, VBool):
            return _err("type-mismatch", e.operand)
        return VBool(not v.value)

    if isinstance(e, Cmp):
        left = _ev(e.left, b)
        if isinstance(left, EvalError):
            return left
        right = _ev(e.right, b)
        if isinstance(right, EvalError):
            return right
        r = _compare(e.op, left, right, e)
        return r if isinstance(r, EvalError) else VBool(r)

    if isinstance(e, Arith):
        left = _ev(e.left, b)
        if isinstance(left, EvalError):
            return left
        right = _ev(e.right, b)
        if isinstance(right, EvalError):
            return right
        if not (_is_num(left) and _is_num(right)):
            return _err("type-mismatch", e)
        x, y = _num(left), _num(right)
        if e.op == "/":
            if y == 0:
                return _err("division-by-zero", e)
            return VFloat(x / y)
        if e.op == "%":
            if y == 0:
                return _err("division-by-zero", e)
            r = x % y
            return (
                _int_result(r, e) if isinstance(r, int) else VFloat(float(r))
            )
        r = {"+": x + y, "-": x - y, "*": x * y}[e.op]
        if isinstance(r, int):
            return _int_result(r, e)
        return VFloat(float(r))

    if isinstance(e, Neg):
        v = _ev(e.operand, b)
        if isinstance(v, EvalError):
            return v
        if isinstance(v, VInt):
            return _int_result(-v.value, e)
        if isinstance(v, VFloat):
            return VFloat(-v.value)
        return _err("type-mismatch", e)

    if isinstance(e, Len):
        v = _ev(e.operand, b)
        if isinstance(v, EvalError):
            return v
        if isinstance(v, (VList, VTuple)):
            return VInt(len(v.items))
        if isinstance(v, VStr):
            return VInt(len(v.value))
        if isinstance(v, VDict):
            return VInt(len(v.pairs))
        if isinstance(v, VArray):
            if not v.shape:
                return _err("type-mismatch", e)
            return VInt(v.shape[0])
        return _err("type-mismatch", e)

    if isinstance(e, TypeOf):
        v = _ev(e.operand, b)
        if isinstance(v, EvalError):
            return v
        return VStr(value_kind(v))

    if isinstance(e, Index):
        seq = _ev(e.seq, b)
        if isinstance(seq, EvalError):
            return seq
        idx = _ev(e.index, b)
        if isinstance(idx, EvalError):
            return idx
        if isinstance(seq, VDict):
            return _lookup(seq, idx, e)
        if not isinstance(idx, VInt):
            return _err("type-mismatch", e.index)
        i = idx.value
        if isinstance(seq, (VList, VTuple)):
            items: tuple = seq.items
        elif isinstance(seq, VStr):
            items = tuple(VStr(ch) for ch in seq.value)
        else:
            return _err("type-mismatch", e.seq)
        if not (-len(items) <= i < len(items)):
            return _err("index-out-of-range", e)
        return items[i]

    raise TypeError(f"not a RequireExpr: {e!r}")


def evaluate(e: RequireExpr, b: Binding) -> EvalResult:
    """Evaluate a precondition against an argument binding."""
    v = _ev(e, b)
    if isinstance(v, EvalError):
        return v
    if isinstance(v, VBool):
        return v.value
    return _err("type-mismatch", e)


def free_args(e: RequireExpr) -> set[str]:
    """Argument names referenced anywhere in the expression."""
    if isinstance(e, Arg):
        return {e.name}
    if isinstance(e, Lit):
        return set()
    if isinstance(e, (Not, Neg, Len, TypeOf)):
        return free_args(e.operand)
    if isinstance(e, (BoolOp, Cmp, Arith)):
        return free_args(e.left) | free_args(e.right)
    if isinstance(e, Index):
        return free_args(e.seq) | free_args(e.index)
    raise TypeError(f"not a RequireExpr: {e!r}")

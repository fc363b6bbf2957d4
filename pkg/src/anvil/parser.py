"""Sidecar annotation files: parsing and rendering.

The format is line-oriented only in spirit: `#` starts a comment, blocks are
opened by `fn "name":`, `gen "name":` or `module_test "name"`, and the first
declaration must be `subject "module-id"`. Inside a block, whitespace and
indentation are free; constraints may span lines. `docs/an_grammar.md` holds
the full grammar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

from . import requires as rq
from .model import (
    Anys,
    Bools,
    Dicts,
    DType,
    Floats,
    Froms,
    FromsItem,
    GenRef,
    IntLists,
    INT64_MAX,
    INT64_MIN,
    Ints,
    Lists,
    NpArrays,
    NpShapes,
    Objs,
    Tuples,
    TypeConstraint,
    Value,
    VArray,
    VBool,
    VDict,
    VFloat,
    VInt,
    VList,
    VNone,
    VStr,
    VTuple,
    render_value,
    structural_eq,
    validate,
    value_kind,
)


class SpecError(Exception):
    """Base class for annotation-file errors."""


class ParseError(SpecError):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
        self.message = message


class ResolutionError(SpecError):
    def __init__(self, name: str):
        super().__init__(f"reference to undeclared generator {name!r}")
        self.name = name


class DuplicateError(SpecError):
    def __init__(self, name: str):
        super().__init__(f"duplicate declaration of {name!r}")
        self.name = name


class UnknownIdentifier(SpecError):
    def __init__(self, name: str, line: int = 0, col: int = 0):
        super().__init__(f"unknown argument {name!r} in precondition")
        self.name = name
        self.line = line
        self.col = col


@dataclass
class FunctionAnnotations:
    """Everything annotated on one function, generator or constructor."""

    args: dict[str, TypeConstraint] = field(default_factory=dict)
    requires: list[rq.RequireExpr] = field(default_factory=list)
    excluded: bool = False
    timeout_s: Optional[float] = None
    cc_example: Optional[list[FromsItem]] = None


@dataclass
class AnnotationSpec:
    """A parsed annotation file: one subject, its functions and generators."""

    subject: str
    functions: dict[str, FunctionAnnotations] = field(default_factory=dict)
    generators: dict[str, FunctionAnnotations] = field(default_factory=dict)
    module_tests: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------


class _Tok(NamedTuple):
    kind: str  # IDENT | INT | FLOAT | STR | OP | EOF
    text: str
    line: int
    col: int


_TWO_CHAR_OPS = ("==", "!=", "<=", ">=")
_ONE_CHAR_OPS = "()[]{},:@=<>+-*/%"

_UNESCAPES = {"\\": "\\", '"': '"', "'": "'", "n": "\n", "r": "\r", "t": "\t"}


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def err(msg: str) -> ParseError:
        return ParseError(line, col, msg)

    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch in "\"'":
            quote = ch
            i += 1
            col += 1
            buf: list[str] = []
            while True:
                if i >= n or text[i] == "\n":
                    raise ParseError(start_line, start_col, "unterminated string")
                c = text[i]
                if c == quote:
                    i += 1
                    col += 1
                    break
                if c == "\\":
                    if i + 1 >= n:
                        raise ParseError(line, col, "dangling escape")
                    esc = text[i + 1]
                    if esc == "x":
                        hexpart = text[i + 2 : i + 4]
                        if len(hexpart) != 2:
                            raise ParseError(line, col, "bad \\x escape")
                        try:
                            buf.append(chr(int(hexpart, 16)))
                        except ValueError:
                            raise ParseError(line, col, "bad \\x escape") from None
                        i += 4
                        col += 4
                        continue
                    if esc not in _UNESCAPES:
                        raise ParseError(line, col, f"unknown escape \\{esc}")
                    buf.append(_UNESCAPES[esc])
                    i += 2
                    col += 2
                    continue
                buf.append(c)
                i += 1
                col += 1
            toks.append(_Tok("STR", "".join(buf), start_line, start_col))
            continue
        if ch.isdigit():
            j = i
            isfloat = False
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                isfloat = True
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    isfloat = True
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            lit = text[i:j]
            toks.append(_Tok("FLOAT" if isfloat else "INT", lit, line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Tok("IDENT", text[i:j], line, col))
            col += j - i
            i = j
            continue
        two = text[i : i + 2]
        if two in _TWO_CHAR_OPS:
            toks.append(_Tok("OP", two, line, col))
            i += 2
            col += 2
            continue
        if ch in _ONE_CHAR_OPS:
            toks.append(_Tok("OP", ch, line, col))
            i += 1
            col += 1
            continue
        raise err(f"unexpected character {ch!r}")
    toks.append(_Tok("EOF", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser core
# ---------------------------------------------------------------------------

_BLOCK_KEYWORDS = ("fn", "gen", "module_test", "subject")
_BOOL_WORDS = {"true": True, "True": True, "false": False, "False": False}
_NONE_WORDS = ("none", "None")
_FLOAT_WORDS = {"inf": float("inf"), "nan": float("nan")}


class _Parser:
    def __init__(self, toks: Sequence[_Tok]):
        self.toks = toks
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Tok:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> _Tok:
        t = self.toks[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def error(self, msg: str, tok: Optional[_Tok] = None) -> ParseError:
        t = tok or self.peek()
        return ParseError(t.line, t.col, msg)

    def expect_op(self, op: str) -> _Tok:
        t = self.peek()
        if t.kind != "OP" or t.text != op:
            raise self.error(f"expected {op!r}, found {t.text or 'end of file'!r}")
        return self.next()

    def expect_ident(self, what: str = "identifier") -> _Tok:
        t = self.peek()
        if t.kind != "IDENT":
            raise self.error(f"expected {what}, found {t.text or 'end of file'!r}")
        return self.next()

    def expect_str(self, what: str) -> _Tok:
        t = self.peek()
        if t.kind != "STR":
            raise self.error(f"expected {what}, found {t.text or 'end of file'!r}")
        return self.next()

    def at_op(self, op: str) -> bool:
        t = self.peek()
        return t.kind == "OP" and t.text == op

    def eat_op(self, op: str) -> bool:
        if self.at_op(op):
            self.next()
            return True
        return False

    # -- literals ----------------------------------------------------------

    def parse_int_literal(self) -> int:
        neg = self.eat_op("-")
        t = self.peek()
        if t.kind != "INT":
            raise self.error("expected integer")
        self.next()
        n = -int(t.text) if neg else int(t.text)
        if not (INT64_MIN <= n <= INT64_MAX):
            raise self.error("integer literal out of range", t)
        return n

    def parse_number_literal(self) -> Union[int, float]:
        neg = self.eat_op("-")
        t = self.peek()
        if t.kind == "INT":
            self.next()
            n = -int(t.text) if neg else int(t.text)
            if not (INT64_MIN <= n <= INT64_MAX):
                raise self.error("integer literal out of range", t)
            return n
        if t.kind == "FLOAT":
            self.next()
            x = float(t.text)
            return -x if neg else x
        if t.kind == "IDENT" and t.text in _FLOAT_WORDS:
            self.next()
            x = _FLOAT_WORDS[t.text]
            return -x if neg else x
        raise self.error("expected number")

    def parse_bool_literal(self) -> bool:
        t = self.peek()
        if t.kind == "IDENT" and t.text in _BOOL_WORDS:
            self.next()
            return _BOOL_WORDS[t.text]
        raise self.error("expected boolean")

    def at_literal(self) -> bool:
        t = self.peek()
        if t.kind in ("INT", "FLOAT", "STR"):
            return True
        if t.kind == "OP" and t.text in ("-", "[", "(", "{"):
            return True
        return t.kind == "IDENT" and (
            t.text in _BOOL_WORDS or t.text in _NONE_WORDS or t.text in _FLOAT_WORDS
        )

    def parse_value_literal(self) -> Value:
        """A literal value: scalar, string, list, tuple, dict or ndarray."""
        t = self.peek()
        if t.kind == "STR":
            self.next()
            return VStr(t.text)
        if t.kind in ("INT", "FLOAT") or (t.kind == "OP" and t.text == "-"):
            n = self.parse_number_literal()
            return VInt(n) if isinstance(n, int) else VFloat(n)
        if t.kind == "IDENT":
            if t.text in _BOOL_WORDS:
                self.next()
                return VBool(_BOOL_WORDS[t.text])
            if t.text in _NONE_WORDS:
                self.next()
                return VNone()
            if t.text in _FLOAT_WORDS:
                self.next()
                return VFloat(_FLOAT_WORDS[t.text])
            if t.text == "ndarray":
                return self.parse_ndarray_literal()
            raise self.error(f"expected literal, found {t.text!r}")
        if self.eat_op("["):
            items = []
            while not self.at_op("]"):
                items.append(self.parse_value_literal())
                if not self.eat_op(","):
                    break
            self.expect_op("]")
            self._check_homogeneous(items, t)
            return VList(tuple(items))
        if self.eat_op("("):
            items = []
            while not self.at_op(")"):
                items.append(self.parse_value_literal())
                if not self.eat_op(","):
                    break
            self.expect_op(")")
            self._check_homogeneous(items, t)
            return VTuple(tuple(items))
        if self.eat_op("{"):
            pairs = []
            while not self.at_op("}"):
                k = self.parse_value_literal()
                self.expect_op(":")
                v = self.parse_value_literal()
                pairs.append((k, v))
                if not self.eat_op(","):
                    break
            self.expect_op("}")
            return _vdict(pairs, t)
        raise self.error("expected literal")

    def parse_ndarray_literal(self) -> Value:
        t = self.expect_ident()
        assert t.text == "ndarray"
        self.expect_op("(")
        tag = self.expect_str("dtype string")
        dtype = _dtype_from_tag(tag.text, self, tag)
        self.expect_op(",")
        shape_v = self.parse_value_literal()
        if not isinstance(shape_v, VTuple) or not all(
            isinstance(x, VInt) for x in shape_v.items
        ):
            raise self.error("ndarray shape must be a tuple of integers", t)
        self.expect_op(",")
        data_v = self.parse_value_literal()
        if not isinstance(data_v, VList):
            raise self.error("ndarray data must be a list", t)
        self.expect_op(")")
        shape = tuple(x.value for x in shape_v.items)  # type: ignore[union-attr]
        arr = VArray(dtype, shape, data_v.items)
        if _shape_product(shape) != len(arr.data):
            raise self.error("ndarray data length does not match shape", t)
        return arr

    def _check_homogeneous(self, items: list[Value], tok: _Tok) -> None:
        kinds = {value_kind(x) for x in items}
        # Int/float mixes stay legal; anything else must be uniform.
        if len(kinds - {"int", "float"}) > (0 if kinds & {"int", "float"} else 1):
            raise ParseError(tok.line, tok.col, "mixed element kinds in literal")

    def parse_froms_item(self) -> FromsItem:
        t = self.peek()
        if (
            t.kind == "IDENT"
            and t.text not in _BOOL_WORDS
            and t.text not in _NONE_WORDS
            and t.text not in _FLOAT_WORDS
            and t.text != "ndarray"
        ):
            # generator call reference: name(literal, ...)
            name = self.next().text
            self.expect_op("(")
            args: list[Value] = []
            while not self.at_op(")"):
                args.append(self.parse_value_literal())
                if not self.eat_op(","):
                    break
            self.expect_op(")")
            return GenRef(name, tuple(args))
        return self.parse_value_literal()


def _shape_product(shape: tuple[int, ...]) -> int:
    out = 1
    for s in shape:
        out *= s
    return out


def _vdict(pairs: list[tuple[Value, Value]], tok: _Tok) -> VDict:
    for i, (k, _) in enumerate(pairs):
        if any(structural_eq(k, kk) for kk, _ in pairs[:i]):
            raise ParseError(tok.line, tok.col, "duplicate dict key in literal")
    return VDict(tuple(pairs))


def _dtype_from_tag(tag: str, p: _Parser, tok: _Tok) -> DType:
    try:
        return DType(tag)
    except ValueError:
        raise ParseError(tok.line, tok.col, f"unknown dtype {tag!r}") from None


# ---------------------------------------------------------------------------
# Constraint grammar
# ---------------------------------------------------------------------------

_CONSTRAINT_FORMS = (
    "froms",
    "bools",
    "ints",
    "floats",
    "lists",
    "tuples",
    "int_lists",
    "np_shapes",
    "np_arrays",
    "dicts",
    "anys",
    "objs",
)

_KW_ALIASES = {"min_value": "min", "max_value": "max"}


class _Args:
    """Collected call arguments for one constraint form."""

    def __init__(self, p: _Parser, form: str, tok: _Tok):
        self.p = p
        self.form = form
        self.tok = tok
        self.positional: list[object] = []
        self.keyword: dict[str, object] = {}

    def err(self, msg: str) -> ParseError:
        return ParseError(self.tok.line, self.tok.col, f"{self.form}: {msg}")

    def take_kw(self, name: str, default: object = None) -> object:
        return self.keyword.pop(name, default)

    def finish(self) -> None:
        if self.positional:
            raise self.err(f"unexpected positional argument")
        if self.keyword:
            raise self.err(f"unknown argument {next(iter(self.keyword))!r}")


def _parse_constraint(p: _Parser) -> TypeConstraint:
    tok = p.expect_ident("type constraint")
    form = tok.text
    if form not in _CONSTRAINT_FORMS:
        raise ParseError(tok.line, tok.col, f"unknown type constraint {form!r}")
    if form == "froms":
        return _parse_froms(p, tok)
    p.expect_op("(")
    args = _Args(p, form, tok)

    def at_kwarg() -> bool:
        nxt = p.peek()
        eq = p.peek(1)
        return (
            nxt.kind == "IDENT"
            and eq.kind == "OP"
            and eq.text == "="
            and nxt.text not in _BOOL_WORDS
        )

    while not p.at_op(")"):
        if at_kwarg():
            name_tok = p.next()
            p.next()  # '='
            name = _KW_ALIASES.get(name_tok.text, name_tok.text)
            if name in args.keyword:
                raise args.err(f"duplicate argument {name!r}")
            args.keyword[name] = _parse_arg_value(p, form, name)
        else:
            args.positional.append(_parse_arg_value(p, form, None))
        if not p.eat_op(","):
            break
    p.expect_op(")")
    c = _build_constraint(args)
    violations = validate(c)
    if violations:
        raise ParseError(tok.line, tok.col, "; ".join(violations))
    return c


def _parse_arg_value(p: _Parser, form: str, name: Optional[str]) -> object:
    """One call argument; what it may be depends on the form and keyword."""
    if form == "froms" or (form == "cc_example"):
        raise AssertionError("handled elsewhere")
    t = p.peek()
    if form == "objs":
        return p.expect_ident("generator name").text
    if form == "np_arrays" and name == "np_type":
        ident = p.expect_ident("dtype(...)")
        if ident.text != "dtype":
            raise ParseError(ident.line, ident.col, "expected dtype(\"...\")")
        p.expect_op("(")
        tag = p.expect_str("dtype string")
        p.expect_op(")")
        return _dtype_from_tag(tag.text, p, tag)
    if form in ("tuples", "anys") and name is None:
        if t.kind == "IDENT" and t.text in _CONSTRAINT_FORMS:
            return _parse_constraint(p)
        if form == "anys":
            return p.parse_value_literal()
        raise p.error("expected type constraint")
    if form in ("lists", "dicts") and (
        name in ("elem", "keys", "values") or name is None
    ):
        if t.kind == "IDENT" and t.text in _CONSTRAINT_FORMS:
            return _parse_constraint(p)
        raise p.error("expected type constraint")
    if form == "np_arrays" and name == "shape":
        if t.kind == "IDENT" and t.text == "np_shapes":
            return _parse_constraint(p)
        v = p.parse_value_literal()
        if not isinstance(v, VTuple) or not all(
            isinstance(x, VInt) for x in v.items
        ):
            raise ParseError(t.line, t.col, "shape must be a tuple of integers")
        return tuple(x.value for x in v.items)  # type: ignore[union-attr]
    if form == "floats" and name in (
        "exclude_min",
        "exclude_max",
        "allow_nan",
        "allow_inf",
    ):
        return p.parse_bool_literal()
    # Everything else is numeric.
    return p.parse_number_literal()


def _require_int(args: _Args, name: str, value: object) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise args.err(f"{name} must be an integer")
    return value


def _opt_int(args: _Args, name: str) -> Optional[int]:
    v = args.take_kw(name)
    if v is None:
        return None
    return _require_int(args, name, v)


def _opt_float(args: _Args, name: str) -> Optional[float]:
    v = args.take_kw(name)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise args.err(f"{name} must be a number")
    return float(v)


def _build_constraint(args: _Args) -> TypeConstraint:
    form = args.form
    if form == "bools":
        args.finish()
        return Bools()
    if form == "ints":
        c = Ints(min=_opt_int(args, "min"), max=_opt_int(args, "max"))
        args.finish()
        return c
    if form == "floats":
        c = Floats(
            min=_opt_float(args, "min"),
            max=_opt_float(args, "max"),
            exclude_min=bool(args.take_kw("exclude_min", False)),
            exclude_max=bool(args.take_kw("exclude_max", False)),
            allow_nan=bool(args.take_kw("allow_nan", False)),
            allow_inf=bool(args.take_kw("allow_inf", False)),
            width=_require_int(args, "width", args.take_kw("width", 64)),
        )
        args.finish()
        return c
    if form == "lists":
        elem = args.take_kw("elem")
        if elem is None and args.positional:
            elem = args.positional.pop(0)
        if not _is_constraint(elem):
            raise args.err("missing element constraint")
        min_len = _opt_int(args, "min_len")
        max_len = _opt_int(args, "max_len")
        min_len = 0 if min_len is None else min_len
        c = Lists(
            elem=elem,  # type: ignore[arg-type]
            min_len=min_len,
            max_len=min_len + 2 if max_len is None else max_len,
        )
        args.finish()
        return c
    if form == "int_lists":
        c = IntLists(
            min_len=_or_default(_opt_int(args, "min_len"), 1),
            max_len=_opt_int(args, "max_len"),
            min=_or_default(_opt_int(args, "min"), 1),
            max=_opt_int(args, "max"),
        )
        args.finish()
        return c
    if form == "tuples":
        comps = tuple(args.positional)
        args.positional = []
        if not all(_is_constraint(x) for x in comps):
            raise args.err("components must be type constraints")
        args.finish()
        return Tuples(comps)  # type: ignore[arg-type]
    if form == "np_shapes":
        min_dims = _or_default(_opt_int(args, "min_dims"), 1)
        max_dims = _opt_int(args, "max_dims")
        min_side = _or_default(_opt_int(args, "min_side"), 1)
        max_side = _or_default(_opt_int(args, "max_side"), 10)
        c = NpShapes(
            min_dims=min_dims,
            max_dims=min_dims + 2 if max_dims is None else max_dims,
            min_side=min_side,
            max_side=max_side,
        )
        args.finish()
        return c
    if form == "np_arrays":
        dtype = args.take_kw("np_type")
        if dtype is None:
            raise args.err("np_type is required (e.g. np_type=dtype(\"float64\"))")
        shape = args.take_kw("shape")
        if shape is None:
            shape = NpShapes()
        args.finish()
        return NpArrays(dtype=dtype, shape=shape)  # type: ignore[arg-type]
    if form == "dicts":
        keys = args.take_kw("keys")
        values = args.take_kw("values")
        if keys is None and args.positional:
            keys = args.positional.pop(0)
        if values is None and args.positional:
            values = args.positional.pop(0)
        if not (_is_constraint(keys) and _is_constraint(values)):
            raise args.err("keys and values constraints are required")
        c = Dicts(
            keys=keys,  # type: ignore[arg-type]
            values=values,  # type: ignore[arg-type]
            min_size=_or_default(_opt_int(args, "min_size"), 0),
            max_size=_opt_int(args, "max_size"),
        )
        args.finish()
        return c
    if form == "anys":
        alts: list[TypeConstraint] = []
        for item in args.positional:
            if _is_constraint(item):
                alts.append(item)  # type: ignore[arg-type]
            else:
                alts.append(Froms((item,)))  # bare literal alternative
        args.positional = []
        args.finish()
        if not alts:
            raise args.err("needs at least one alternative")
        return Anys(tuple(alts))
    if form == "objs":
        if len(args.positional) != 1:
            raise args.err("takes exactly one generator name")
        name = args.positional.pop(0)
        args.finish()
        return Objs(str(name))
    raise args.err("unhandled form")  # pragma: no cover


def _is_constraint(x: object) -> bool:
    return isinstance(
        x,
        (
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
        ),
    )


def _or_default(v: Optional[int], default: int) -> int:
    return default if v is None else v


def _froms_item_ok(item: FromsItem) -> bool:
    if isinstance(item, GenRef):
        return True
    if isinstance(item, (VNone, VBool, VInt, VFloat, VStr)):
        return True
    if isinstance(item, (VList, VTuple)):
        return all(_froms_item_ok(x) for x in item.items)
    return False


# froms needs its own entry since its argument is a bracketed item list.
def _parse_froms(p: _Parser, tok: _Tok) -> Froms:
    p.expect_op("(")
    p.expect_op("[")
    items: list[FromsItem] = []
    while not p.at_op("]"):
        item = p.parse_froms_item()
        if not _froms_item_ok(item):
            raise ParseError(
                tok.line,
                tok.col,
                "froms items must be scalar/string/list/tuple literals "
                "or generator calls",
            )
        items.append(item)
        if not p.eat_op(","):
            break
    p.expect_op("]")
    p.expect_op(")")
    c = Froms(tuple(items))
    violations = validate(c)
    if violations:
        raise ParseError(tok.line, tok.col, "; ".join(violations))
    return c


# ---------------------------------------------------------------------------
# Require expressions
# ---------------------------------------------------------------------------


def _parse_expr(p: _Parser) -> rq.RequireExpr:
    return _parse_or(p)


def _parse_or(p: _Parser) -> rq.RequireExpr:
    left = _parse_and(p)
    while p.peek().kind == "IDENT" and p.peek().text == "or":
        p.next()
        left = rq.BoolOp("or", left, _parse_and(p))
    return left


def _parse_and(p: _Parser) -> rq.RequireExpr:
    left = _parse_not(p)
    while p.peek().kind == "IDENT" and p.peek().text == "and":
        p.next()
        left = rq.BoolOp("and", left, _parse_not(p))
    return left


def _parse_not(p: _Parser) -> rq.RequireExpr:
    if p.peek().kind == "IDENT" and p.peek().text == "not":
        p.next()
        return rq.Not(_parse_not(p))
    return _parse_cmp(p)


def _parse_cmp(p: _Parser) -> rq.RequireExpr:
    left = _parse_add(p)
    t = p.peek()
    if t.kind == "OP" and t.text in rq.CMP_OPS:
        p.next()
        right = _parse_add(p)
        nxt = p.peek()
        if nxt.kind == "OP" and nxt.text in rq.CMP_OPS:
            raise p.error("chained comparisons are not supported")
        return rq.Cmp(t.text, left, right)
    return left


def _parse_add(p: _Parser) -> rq.RequireExpr:
    left = _parse_mul(p)
    while p.peek().kind == "OP" and p.peek().text in ("+", "-"):
        op = p.next().text
        left = rq.Arith(op, left, _parse_mul(p))
    return left


def _parse_mul(p: _Parser) -> rq.RequireExpr:
    left = _parse_unary(p)
    while p.peek().kind == "OP" and p.peek().text in ("*", "/", "%"):
        op = p.next().text
        left = rq.Arith(op, left, _parse_unary(p))
    return left


def _parse_unary(p: _Parser) -> rq.RequireExpr:
    if p.at_op("-"):
        tok = p.peek(1)
        if tok.kind in ("INT", "FLOAT"):
            n = p.parse_number_literal()
            return rq.Lit(VInt(n) if isinstance(n, int) else VFloat(n))
        p.next()
        return rq.Neg(_parse_unary(p))
    return _parse_postfix(p)


def _parse_postfix(p: _Parser) -> rq.RequireExpr:
    e = _parse_atom(p)
    while p.at_op("["):
        p.next()
        idx = _parse_expr(p)
        p.expect_op("]")
        e = rq.Index(e, idx)
    return e


def _parse_atom(p: _Parser) -> rq.RequireExpr:
    t = p.peek()
    if t.kind == "OP" and t.text == "(":
        p.next()
        e = _parse_expr(p)
        p.expect_op(")")
        return e
    if t.kind in ("INT", "FLOAT", "STR"):
        return rq.Lit(p.parse_value_literal())
    if t.kind == "IDENT":
        if t.text in ("len", "type_of"):
            p.next()
            p.expect_op("(")
            inner = _parse_expr(p)
            p.expect_op(")")
            return rq.Len(inner) if t.text == "len" else rq.TypeOf(inner)
        if t.text in _BOOL_WORDS or t.text in _NONE_WORDS or t.text in _FLOAT_WORDS:
            return rq.Lit(p.parse_value_literal())
        p.next()
        if p.at_op("("):
            raise p.error(
                f"call to {t.text!r} is not allowed here: preconditions may "
                "only use len() and type_of(), not arbitrary program elements",
                t,
            )
        return rq.Arg(t.text)
    raise p.error("expected expression")


def parse_require(text: str, declared_args: Sequence[str]) -> rq.RequireExpr:
    """Parse a standalone precondition and resolve its argument names."""
    p = _Parser(_tokenize(text))
    e = _parse_expr(p)
    if p.peek().kind != "EOF":
        raise p.error("trailing input after expression")
    _resolve_require(e, declared_args, 1, 1)
    return e


def _resolve_require(
    e: rq.RequireExpr, declared: Sequence[str], line: int, col: int
) -> None:
    for name in sorted(rq.free_args(e)):
        if name not in declared:
            raise UnknownIdentifier(name, line, col)


# ---------------------------------------------------------------------------
# Spec file grammar
# ---------------------------------------------------------------------------


def parse_spec(text: str) -> AnnotationSpec:
    """Parse a whole annotation file; the result is validated and resolved."""
    p = _Parser(_tokenize(text))
    head = p.peek()
    if head.kind != "IDENT" or head.text != "subject":
        raise p.error("missing subject header", head)
    p.next()
    subject = p.expect_str("subject module id").text
    spec = AnnotationSpec(subject=subject)

    while p.peek().kind != "EOF":
        t = p.peek()
        if t.kind != "IDENT" or t.text not in _BLOCK_KEYWORDS:
            raise p.error(
                f"expected fn/gen/module_test block, found {t.text or 'end of file'!r}"
            )
        if t.text == "subject":
            raise p.error("duplicate subject header")
        p.next()
        if t.text == "module_test":
            name = p.expect_str("module id").text
            if name in spec.module_tests:
                raise DuplicateError(name)
            spec.module_tests.append(name)
            continue
        name = p.expect_str("quoted name").text
        p.expect_op(":")
        if name in spec.functions or name in spec.generators:
            raise DuplicateError(name)
        ann = _parse_block(p, name)
        if t.text == "fn":
            spec.functions[name] = ann
        else:
            spec.generators[name] = ann

    _resolve_spec(spec)
    return spec


def _parse_block(p: _Parser, fn_name: str) -> FunctionAnnotations:
    ann = FunctionAnnotations()
    pending_requires: list[tuple[rq.RequireExpr, _Tok]] = []
    while p.at_op("@"):
        p.next()
        kw = p.expect_ident("annotation name")
        if kw.text == "arg":
            p.expect_op("(")
            arg = p.expect_ident("argument name")
            p.expect_op(")")
            p.expect_op(":")
            if arg.text in ann.args:
                raise DuplicateError(f"{fn_name}.{arg.text}")
            ann.args[arg.text] = _parse_constraint(p)
        elif kw.text == "require":
            p.expect_op("(")
            expr = _parse_expr(p)
            p.expect_op(")")
            pending_requires.append((expr, kw))
        elif kw.text == "exclude":
            ann.excluded = True
        elif kw.text == "timeout":
            if ann.timeout_s is not None:
                raise ParseError(kw.line, kw.col, "duplicate @timeout")
            p.expect_op("(")
            n = p.parse_number_literal()
            p.expect_op(")")
            if not isinstance(n, (int, float)) or n <= 0:
                raise ParseError(kw.line, kw.col, "@timeout must be positive seconds")
            ann.timeout_s = float(n)
        elif kw.text == "cc_example":
            if ann.cc_example is not None:
                raise ParseError(kw.line, kw.col, "duplicate @cc_example")
            p.expect_op("(")
            p.expect_op("[")
            items: list[FromsItem] = []
            while not p.at_op("]"):
                items.append(p.parse_froms_item())
                if not p.eat_op(","):
                    break
            p.expect_op("]")
            p.expect_op(")")
            ann.cc_example = items
        elif kw.text == "generator":
            raise ParseError(
                kw.line, kw.col, "use a gen \"name\": block instead of @generator"
            )
        else:
            raise ParseError(kw.line, kw.col, f"unknown annotation @{kw.text}")
    # Requires can reference args declared later in the block.
    for expr, tok in pending_requires:
        for ident in sorted(rq.free_args(expr)):
            if ident not in ann.args:
                raise UnknownIdentifier(ident, tok.line, tok.col)
        ann.requires.append(expr)
    return ann


def _iter_constraints(c: TypeConstraint):
    yield c
    if isinstance(c, Lists):
        yield from _iter_constraints(c.elem)
    elif isinstance(c, Tuples):
        for comp in c.components:
            yield from _iter_constraints(comp)
    elif isinstance(c, Dicts):
        yield from _iter_constraints(c.keys)
        yield from _iter_constraints(c.values)
    elif isinstance(c, Anys):
        for alt in c.alternatives:
            yield from _iter_constraints(alt)
    elif isinstance(c, NpArrays) and isinstance(c.shape, NpShapes):
        yield from _iter_constraints(c.shape)


def _gen_refs(c: TypeConstraint):
    for sub in _iter_constraints(c):
        if isinstance(sub, Objs):
            yield sub.gen
        elif isinstance(sub, Froms):
            for item in sub.items:
                if isinstance(item, GenRef):
                    yield item.name


def _resolve_spec(spec: AnnotationSpec) -> None:
    declared = set(spec.generators)
    for ann in list(spec.functions.values()) + list(spec.generators.values()):
        for c in ann.args.values():
            for name in _gen_refs(c):
                if name not in declared:
                    raise ResolutionError(name)
        if ann.cc_example:
            for item in ann.cc_example:
                if isinstance(item, GenRef) and item.name not in declared:
                    raise ResolutionError(item.name)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def render_froms_item(item: FromsItem) -> str:
    if isinstance(item, GenRef):
        return f"{item.name}(" + ", ".join(render_value(a) for a in item.args) + ")"
    return render_value(item)


def render_constraint(c: TypeConstraint) -> str:
    if isinstance(c, Froms):
        return "froms([" + ", ".join(render_froms_item(i) for i in c.items) + "])"
    if isinstance(c, Bools):
        return "bools()"
    if isinstance(c, Ints):
        parts = []
        if c.min is not None:
            parts.append(f"min={c.min}")
        if c.max is not None:
            parts.append(f"max={c.max}")
        return "ints(" + ", ".join(parts) + ")"
    if isinstance(c, Floats):
        parts = []
        if c.min is not None:
            parts.append(f"min={render_value(VFloat(c.min))}")
        if c.max is not None:
            parts.append(f"max={render_value(VFloat(c.max))}")
        if c.exclude_min:
            parts.append("exclude_min=True")
        if c.exclude_max:
            parts.append("exclude_max=True")
        if c.allow_nan:
            parts.append("allow_nan=True")
        if c.allow_inf:
            parts.append("allow_inf=True")
        if c.width != 64:
            parts.append(f"width={c.width}")
        return "floats(" + ", ".join(parts) + ")"
    if isinstance(c, Lists):
        return (
            f"lists({render_constraint(c.elem)}, "
            f"min_len={c.min_len}, max_len={c.max_len})"
        )
    if isinstance(c, IntLists):
        parts = [f"min_len={c.min_len}"]
        if c.max_len is not None:
            parts.append(f"max_len={c.max_len}")
        parts.append(f"min={c.min}")
        if c.max is not None:
            parts.append(f"max={c.max}")
        return "int_lists(" + ", ".join(parts) + ")"
    if isinstance(c, Tuples):
        return "tuples(" + ", ".join(render_constraint(x) for x in c.components) + ")"
    if isinstance(c, NpShapes):
        return (
            f"np_shapes(min_dims={c.min_dims}, max_dims={c.max_dims}, "
            f"min_side={c.min_side}, max_side={c.max_side})"
        )
    if isinstance(c, NpArrays):
        if isinstance(c.shape, NpShapes):
            shape = render_constraint(c.shape)
        elif len(c.shape) == 1:
            shape = f"({c.shape[0]},)"
        else:
            shape = "(" + ", ".join(str(s) for s in c.shape) + ")"
        return f'np_arrays(np_type=dtype("{c.dtype.value}"), shape={shape})'
    if isinstance(c, Dicts):
        parts = [
            f"keys={render_constraint(c.keys)}",
            f"values={render_constraint(c.values)}",
            f"min_size={c.min_size}",
        ]
        if c.max_size is not None:
            parts.append(f"max_size={c.max_size}")
        return "dicts(" + ", ".join(parts) + ")"
    if isinstance(c, Anys):
        parts = []
        for alt in c.alternatives:
            if (
                isinstance(alt, Froms)
                and len(alt.items) == 1
                and not isinstance(alt.items[0], GenRef)
            ):
                parts.append(render_value(alt.items[0]))
            else:
                parts.append(render_constraint(alt))
        return "anys(" + ", ".join(parts) + ")"
    if isinstance(c, Objs):
        return f"objs({c.gen})"
    raise TypeError(f"unknown constraint {type(c).__name__}")


def _render_block(name: str, kind: str, ann: FunctionAnnotations) -> list[str]:
    lines = [f'{kind} "{name}":']
    for arg, c in ann.args.items():
        lines.append(f"  @arg({arg}): {render_constraint(c)}")
    for expr in ann.requires:
        lines.append(f"  @require({rq.render_expr(expr)})")
    if ann.timeout_s is not None:
        timeout = (
            str(int(ann.timeout_s))
            if ann.timeout_s == int(ann.timeout_s)
            else repr(ann.timeout_s)
        )
        lines.append(f"  @timeout({timeout})")
    if ann.excluded:
        lines.append("  @exclude")
    if ann.cc_example is not None:
        inner = ", ".join(render_froms_item(i) for i in ann.cc_example)
        lines.append(f"  @cc_example([{inner}])")
    return lines


def render_spec(spec: AnnotationSpec) -> str:
    """Canonical text form; parse_spec(render_spec(s)) is structurally s."""
    lines = [f'subject "{spec.subject}"']
    for name, ann in spec.functions.items():
        lines.append("")
        lines.extend(_render_block(name, "fn", ann))
    for name, ann in spec.generators.items():
        lines.append("")
        lines.extend(_render_block(name, "gen", ann))
    if spec.module_tests:
        lines.append("")
        for m in spec.module_tests:
            lines.append(f'module_test "{m}"')
    return "\n".join(lines) + "\n"

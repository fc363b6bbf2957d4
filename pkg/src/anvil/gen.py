"""Seeded random generation of constraint-satisfying values, plus shrinking.

The PRNG is a splitmix64 stream wrapped in a splittable, immutable context:
the same (seed, constraint) pair always yields the same value, and split
contexts are independent. Shrinking is pass-based and deterministic; every
accepted step strictly decreases (element count, distance-to-bound), so it
terminates even without a budget.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Union

from .model import (
    Anys,
    Bools,
    Dicts,
    DType,
    Floats,
    Froms,
    GenRef,
    IntLists,
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
    VTuple,
    element_count,
    render_value,
    satisfies,
    structural_eq,
)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class _Stream:
    """Mutable draw cursor over a splitmix64 sequence; local to one call."""

    __slots__ = ("_s",)

    def __init__(self, key: int):
        self._s = key & _MASK64

    def next64(self) -> int:
        self._s = (self._s + _GOLDEN) & _MASK64
        return _mix64(self._s)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled to avoid modulo bias."""
        assert n > 0
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next64()
            if x < limit:
                return x % n

    def int_in(self, lo: int, hi: int) -> int:
        return lo + self.below(hi - lo + 1)

    def unit(self) -> float:
        return (self.next64() >> 11) / float(1 << 53)

    def chance(self, p: float) -> bool:
        return p > 0 and self.unit() < p


@dataclass(frozen=True)
class Windows:
    """Default numeric ranges used where a constraint leaves bounds open."""

    ints: tuple[int, int] = (-(10**6), 10**6)
    floats: tuple[float, float] = (-1.0e6, 1.0e6)
    uint_elems: tuple[int, int] = (0, 255)
    int_elems: tuple[int, int] = (-100, 100)
    float_elems: tuple[float, float] = (-1.0, 1.0)


@dataclass(frozen=True)
class GenContext:
    """Immutable generation state; derive fresh ones with `split`."""

    seed: int
    state: int
    size_budget: int = 10_000
    boundary_bias: float = 0.25
    windows: Windows = Windows()

    @classmethod
    def from_seed(cls, seed: int, **kw) -> "GenContext":
        return cls(seed=seed & _MASK64, state=_mix64(seed ^ _GOLDEN), **kw)


def split(ctx: GenContext) -> tuple[GenContext, GenContext]:
    """Two independent deterministic child contexts; pure in ctx."""
    s = _Stream(ctx.state)
    left = s.next64()
    right = s.next64()
    return replace(ctx, state=left), replace(ctx, state=right)


def derive(ctx: GenContext, label: str) -> GenContext:
    """Child context keyed by a label; stable under campaign selection."""
    h = ctx.state
    for byte in label.encode("utf-8"):
        h = _mix64(h ^ byte)
    return replace(ctx, state=h)


class GenerationError(Exception):
    """A constraint that validates cannot be realized with this context."""


class BudgetExhausted(GenerationError):
    """Nested collection sizes would exceed the context's size budget."""


@dataclass(frozen=True)
class NeedsConstruct:
    """A pending call to a subject-side generator; resolved into a handle."""

    gen: str
    args: tuple["GenOut", ...]


GenOut = Union[Value, NeedsConstruct]
GenArgsMap = Mapping[str, Mapping[str, TypeConstraint]]


def _as_f32(x: float) -> float:
    if math.isnan(x) or math.isinf(x):
        return x
    try:
        return struct.unpack("<f", struct.pack("<f", x))[0]
    except OverflowError:
        return math.inf if x > 0 else -math.inf


def _biased_int(s: _Stream, lo: int, hi: int, bias: float) -> int:
    if lo >= hi:
        return lo
    if s.chance(bias):
        cands = []
        for x in (lo, lo + 1, hi - 1, hi, 0):
            if lo <= x <= hi and x not in cands:
                cands.append(x)
        return cands[s.below(len(cands))]
    return s.int_in(lo, hi)


class _Gen:
    def __init__(self, ctx: GenContext, gen_args: GenArgsMap):
        self.ctx = ctx
        self.stream = _Stream(ctx.state)
        self.budget = ctx.size_budget
        self.gen_args = gen_args

    def spend(self, n: int) -> None:
        self.budget -= n
        if self.budget < 0:
            raise BudgetExhausted(
                f"size budget of {self.ctx.size_budget} elements exceeded"
            )

    def value(self, c: TypeConstraint) -> GenOut:
        s = self.stream
        bias = self.ctx.boundary_bias
        if isinstance(c, Froms):
            item = c.items[s.below(len(c.items))]
            if isinstance(item, GenRef):
                return NeedsConstruct(item.name, item.args)
            self.spend(element_count(item))
            return item
        if isinstance(c, Bools):
            self.spend(1)
            return VBool(s.below(2) == 1)
        if isinstance(c, Ints):
            self.spend(1)
            lo, hi = self._int_gen_bounds(c)
            return VInt(_biased_int(s, lo, hi, bias))
        if isinstance(c, Floats):
            self.spend(1)
            return VFloat(self._float(c))
        if isinstance(c, Lists):
            n = s.int_in(c.min_len, c.max_len)
            return VList(tuple(self.value(c.elem) for _ in range(n)))
        if isinstance(c, IntLists):
            lo_n, hi_n = c.len_bounds()
            lo_e, hi_e = c.elem_bounds()
            n = s.int_in(lo_n, hi_n)
            self.spend(n)
            return VList(tuple(VInt(_biased_int(s, lo_e, hi_e, bias)) for _ in range(n)))
        if isinstance(c, Tuples):
            return VTuple(tuple(self.value(comp) for comp in c.components))
        if isinstance(c, NpShapes):
            ndims = s.int_in(c.min_dims, c.max_dims)
            self.spend(ndims)
            return VTuple(
                tuple(
                    VInt(_biased_int(s, c.min_side, c.max_side, bias))
                    for _ in range(ndims)
                )
            )
        if isinstance(c, NpArrays):
            return self._array(c)
        if isinstance(c, Dicts):
            return self._dict(c)
        if isinstance(c, Anys):
            alt = c.alternatives[s.below(len(c.alternatives))]
            return self.value(alt)
        if isinstance(c, Objs):
            try:
                arg_constraints = self.gen_args[c.gen]
            except KeyError:
                raise GenerationError(f"unknown generator {c.gen!r}") from None
            args = tuple(self.value(ac) for ac in arg_constraints.values())
            return NeedsConstruct(c.gen, args)
        raise TypeError(f"unknown constraint {type(c).__name__}")

    def _int_gen_bounds(self, c: Ints) -> tuple[int, int]:
        win_lo, win_hi = self.ctx.windows.ints
        lo = c.min if c.min is not None else win_lo
        hi = c.max if c.max is not None else win_hi
        if lo > hi:  # an explicit bound lies outside the window
            if c.min is not None and c.max is None:
                hi = lo
            elif c.max is not None and c.min is None:
                lo = hi
        return lo, hi

    def _float(self, c: Floats) -> float:
        s = self.stream
        if c.allow_nan and s.chance(0.05):
            return math.nan
        if c.allow_inf and s.chance(0.05):
            sides = []
            if c.max is None:
                sides.append(math.inf)
            if c.min is None:
                sides.append(-math.inf)
            if sides:
                return sides[s.below(len(sides))]
        win_lo, win_hi = self.ctx.windows.floats
        lo = c.min if c.min is not None else win_lo
        hi = c.max if c.max is not None else win_hi
        if lo > hi:
            lo = hi = lo if c.min is not None else hi
        if s.chance(self.ctx.boundary_bias):
            cands = []
            for x in (c.min, c.max, 0.0):
                if x is None:
                    continue
                x = _as_f32(x) if c.width == 32 else x
                if satisfies(VFloat(x), c) and x not in cands:
                    cands.append(x)
            if cands:
                return cands[s.below(len(cands))]
        for _ in range(64):
            x = lo + (hi - lo) * s.unit()
            if c.width == 32:
                x = _as_f32(x)
            if satisfies(VFloat(x), c):
                return x
        # Degenerate interval: step inward from the bounds.
        for x in (lo, hi, math.nextafter(lo, hi), math.nextafter(hi, lo)):
            if c.width == 32:
                x = _as_f32(x)
            if satisfies(VFloat(x), c):
                return x
        raise GenerationError("float interval admits no generable value")

    def _array(self, c: NpArrays) -> VArray:
        s = self.stream
        bias = self.ctx.boundary_bias
        if isinstance(c.shape, NpShapes):
            sh = c.shape
            ndims = s.int_in(sh.min_dims, sh.max_dims)
            shape = tuple(
                _biased_int(s, sh.min_side, sh.max_side, bias) for _ in range(ndims)
            )
        else:
            shape = c.shape
        count = math.prod(shape)
        self.spend(count)
        w = self.ctx.windows
        data: list[Value]
        if c.dtype.is_bool:
            data = [VBool(s.below(2) == 1) for _ in range(count)]
        elif c.dtype.is_float:
            lo, hi = w.float_elems
            if c.dtype is DType.FLOAT32:
                data = [
                    VFloat(_as_f32(lo + (hi - lo) * s.unit())) for _ in range(count)
                ]
            else:
                data = [VFloat(lo + (hi - lo) * s.unit()) for _ in range(count)]
        else:
            d_lo, d_hi = c.dtype.int_bounds()
            w_lo, w_hi = w.uint_elems if d_lo == 0 else w.int_elems
            lo, hi = max(d_lo, w_lo), min(d_hi, w_hi)
            data = [VInt(_biased_int(s, lo, hi, bias)) for _ in range(count)]
        return VArray(c.dtype, shape, tuple(data))

    def _dict(self, c: Dicts) -> VDict:
        s = self.stream
        lo, hi = c.size_bounds()
        target = s.int_in(lo, hi)
        keys: list[Value] = []
        attempts = 0
        max_attempts = 5 * max(target, 1) + target
        while len(keys) < target and attempts < max_attempts:
            attempts += 1
            k = self.value(c.keys)
            if isinstance(k, NeedsConstruct):
                raise GenerationError("dict keys cannot be generator-built")
            if any(structural_eq(k, kk) for kk in keys):
                continue
            keys.append(k)
        if len(keys) < lo:
            raise BudgetExhausted(
                f"could not draw {lo} distinct dict keys after {attempts} tries"
            )
        pairs = tuple((k, self.value(c.values)) for k in keys)
        return VDict(pairs)


def generate(
    c: TypeConstraint, ctx: GenContext, gen_args: Optional[GenArgsMap] = None
) -> GenOut:
    """One value satisfying `c`, or a NeedsConstruct for generator-built args."""
    return _Gen(ctx, gen_args or {}).value(c)


def generate_binding(
    args: Mapping[str, TypeConstraint],
    ctx: GenContext,
    gen_args: Optional[GenArgsMap] = None,
) -> dict[str, GenOut]:
    """All arguments of one case from a single stream and shared size budget."""
    g = _Gen(ctx, gen_args or {})
    return {name: g.value(c) for name, c in args.items()}


# ---------------------------------------------------------------------------
# Shrinking
# ---------------------------------------------------------------------------


class _Shrinker:
    def __init__(
        self,
        c: TypeConstraint,
        still_fails: Callable[[Value], bool],
        budget: int,
    ):
        self.c = c
        self.still_fails = still_fails
        self.left = budget
        self.current: Value = None  # type: ignore[assignment]
        self.seen: set[str] = set()

    def attempt(self, cand: Value) -> bool:
        """Evaluate a candidate; keep it when it still fails. Counts budget."""
        if self.left <= 0:
            return False
        key = render_value(cand)
        if key in self.seen:
            return False
        self.seen.add(key)
        if structural_eq(cand, self.current):
            return False
        if not satisfies(cand, self.c):
            return False
        self.left -= 1
        if self.still_fails(cand):
            self.current = cand
            return True
        return False

    def run(self, v0: Value) -> Value:
        self.current = v0
        self.seen.add(render_value(v0))
        improved = True
        while improved and self.left > 0:
            improved = self._node(self.current, self.c, lambda v: self.attempt(v))
        return self.current

    # -- node dispatch ------------------------------------------------------

    def _node(
        self,
        v: Value,
        c: TypeConstraint,
        submit: Callable[[Value], bool],
    ) -> bool:
        if isinstance(c, Anys):
            for alt in c.alternatives:
                if satisfies(v, alt):
                    return self._node(v, alt, submit)
            return False
        if isinstance(c, Ints) and isinstance(v, VInt):
            lo, hi = c.bounds()
            target = lo if c.min is not None else min(max(0, lo), hi)
            return self._scalar_int(v.value, target, lambda n: submit(VInt(n)))
        if isinstance(c, Floats) and isinstance(v, VFloat):
            return self._scalar_float(v.value, c, submit)
        if isinstance(c, (Lists, IntLists)) and isinstance(v, VList):
            if isinstance(c, Lists):
                min_len, elem_c = c.min_len, c.elem
            else:
                min_len = c.len_bounds()[0]
                lo_e, hi_e = c.elem_bounds()
                elem_c = Ints(lo_e, hi_e)
            if self._remove_chunks(
                list(v.items), min_len, lambda items: submit(VList(tuple(items)))
            ):
                return True
            return self._each_item(
                list(v.items),
                [elem_c] * len(v.items),
                lambda items: submit(VList(tuple(items))),
            )
        if isinstance(c, Tuples) and isinstance(v, VTuple):
            return self._each_item(
                list(v.items),
                list(c.components),
                lambda items: submit(VTuple(tuple(items))),
            )
        if isinstance(c, NpShapes) and isinstance(v, VTuple):
            if self._remove_chunks(
                list(v.items), c.min_dims, lambda items: submit(VTuple(tuple(items)))
            ):
                return True
            side_c = Ints(c.min_side, c.max_side)
            return self._each_item(
                list(v.items),
                [side_c] * len(v.items),
                lambda items: submit(VTuple(tuple(items))),
            )
        if isinstance(c, Dicts) and isinstance(v, VDict):
            if self._remove_chunks(
                list(v.pairs), c.min_size, lambda ps: submit(VDict(tuple(ps)))
            ):
                return True
            pairs = list(v.pairs)
            for i, (k, val) in enumerate(pairs):
                def put(nv: Value, i: int = i, k: Value = k) -> bool:
                    np = list(pairs)
                    np[i] = (k, nv)
                    return submit(VDict(tuple(np)))

                if self._node(val, c.values, put):
                    return True
            return False
        if isinstance(c, NpArrays) and isinstance(v, VArray):
            return self._array(v, c, submit)
        return False

    # -- scalar passes ------------------------------------------------------

    def _scalar_int(
        self, cur: int, target: int, submit: Callable[[int], bool]
    ) -> bool:
        if cur == target:
            return False
        for cand in self._toward(cur, target):
            if submit(cand):
                return True
            if self.left <= 0:
                return False
        return False

    @staticmethod
    def _toward(cur: int, target: int):
        seen = set()
        for cand in (
            target,
            (cur + target) // 2,
            cur - 1 if cur > target else cur + 1,
        ):
            if cand != cur and cand not in seen:
                seen.add(cand)
                yield cand

    def _scalar_float(
        self, cur: float, c: Floats, submit: Callable[[Value], bool]
    ) -> bool:
        if math.isnan(cur):
            return False
        if c.min is not None:
            target = c.min
        elif c.max is not None and c.max < 0:
            target = c.max
        else:
            target = 0.0
        if cur == target:
            return False
        if abs(cur - target) <= 1e-6 * (1.0 + abs(target)):
            return False  # close enough; further halving is noise
        cands = [target, (cur + target) / 2.0]
        if not math.isinf(cur) and cur != math.floor(cur):
            cands.append(math.floor(cur) if cur > target else math.ceil(cur))
        for x in cands:
            if c.width == 32:
                x = _as_f32(x)
            if _float_closer(x, cur, target) and submit(VFloat(x)):
                return True
            if self.left <= 0:
                return False
        return False

    # -- structural passes --------------------------------------------------

    def _remove_chunks(self, items, min_len, build) -> bool:
        n = len(items)
        if n <= min_len:
            return False
        size = max(1, (n - min_len + 1) // 2)
        while size >= 1:
            start = 0
            while start + size <= n:
                if n - size >= min_len:
                    cand = items[:start] + items[start + size :]
                    if build(cand):
                        return True
                    if self.left <= 0:
                        return False
                start += size
            size //= 2
        return False

    def _each_item(self, items, constraints, build) -> bool:
        for i, (item, ic) in enumerate(zip(items, constraints)):
            def put(nv: Value, i: int = i) -> bool:
                cand = list(items)
                cand[i] = nv
                return build(cand)

            if self._node(item, ic, put):
                return True
            if self.left <= 0:
                return False
        return False

    def _array(self, v: VArray, c: NpArrays, submit) -> bool:
        # Side shrinking first (drops whole slices), then elements toward 0.
        if isinstance(c.shape, NpShapes):
            min_side = c.shape.min_side
            for axis in range(len(v.shape)):
                side = v.shape[axis]
                for new_side in dict.fromkeys(
                    (min_side, (side + min_side) // 2, side - 1)
                ):
                    if not (min_side <= new_side < side):
                        continue
                    cand = _slice_axis(v, axis, new_side)
                    if submit(cand):
                        return True
                    if self.left <= 0:
                        return False
        if c.dtype.is_bool:
            return False
        data = list(v.data)
        for i, el in enumerate(data):
            def put(nv: Value, i: int = i) -> bool:
                nd = list(data)
                nd[i] = nv
                return submit(VArray(v.dtype, v.shape, tuple(nd)))

            if isinstance(el, VInt):
                if el.value != 0 and self._scalar_int(
                    el.value, 0, lambda n, put=put: put(VInt(n))
                ):
                    return True
            elif isinstance(el, VFloat):
                if (
                    not math.isnan(el.value)
                    and abs(el.value) > 1e-6
                ):
                    target = 0.0
                    for x in (target, (el.value + target) / 2.0):
                        if v.dtype is DType.FLOAT32:
                            x = _as_f32(x)
                        if _float_closer(x, el.value, target) and put(VFloat(x)):
                            return True
                        if self.left <= 0:
                            return False
            if self.left <= 0:
                return False
        return False


def _float_closer(cand: float, cur: float, target: float) -> bool:
    if math.isnan(cand) or math.isinf(cand):
        return False
    return abs(cand - target) < abs(cur - target)


def _slice_axis(v: VArray, axis: int, new_side: int) -> VArray:
    stride = math.prod(v.shape[axis + 1 :])
    side = v.shape[axis]
    kept = [
        x
        for i, x in enumerate(v.data)
        if (i // stride) % side < new_side
    ]
    shape = v.shape[:axis] + (new_side,) + v.shape[axis + 1 :]
    return VArray(v.dtype, shape, tuple(kept))


def shrink(
    v0: Value,
    c: TypeConstraint,
    still_fails: Callable[[Value], bool],
    budget: int = 200,
) -> Value:
    """Smallest found value that satisfies `c` and still fails.

    `still_fails(v0)` must hold on entry; the result is a local minimum under
    the shrink passes, or the best value found within `budget` predicate
    evaluations.
    """
    sh = _Shrinker(c, still_fails, budget)
    return sh.run(v0)

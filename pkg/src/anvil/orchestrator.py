"""Campaign execution: generate, filter, construct, dispatch, classify, shrink.

One campaign runs per annotated function, in spec file order; constructors
run before the methods of their class. Rejected candidates never reach the
wire, and health-check budgets stop functions whose preconditions discard
almost everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import gen as genmod
from .gen import (
    GenContext,
    GenerationError,
    GenOut,
    NeedsConstruct,
    derive,
    generate_binding,
    split,
)
from .model import (
    Dicts,
    GenRef,
    TypeConstraint,
    Value,
    VDict,
    VHandle,
    VList,
    VTuple,
    element_count,
    satisfies,
    structural_eq,
)
from .parser import AnnotationSpec, FunctionAnnotations
from .requires import EvalError, evaluate
from .wire import ProtocolError, Request, Response, WorkerSession

Binding = dict[str, Value]

CASE_STATUSES = (
    "pass",
    "crash",
    "timeout",
    "rejected",
    "eval_error_rejected",
    "construct_crash",
)

DISPATCHED_STATUSES = ("pass", "crash", "timeout", "construct_crash")


@dataclass
class CampaignConfig:
    max_examples: int = 100
    max_rejection_ratio: float = 0.9
    max_consecutive_rejections: int = 50
    default_timeout_s: float = 60.0
    seed: int = 0
    shrink_budget: int = 200
    boundary_bias: float = 0.25
    size_budget: int = 10_000

    def __post_init__(self) -> None:
        if min(
            self.max_examples,
            self.max_consecutive_rejections,
            self.shrink_budget,
            self.size_budget,
        ) <= 0 or self.default_timeout_s <= 0:
            raise ValueError("campaign budgets must be positive")
        if not (0.0 < self.max_rejection_ratio < 1.0):
            raise ValueError("max_rejection_ratio must be in (0, 1)")
        if not (0.0 <= self.boundary_bias <= 1.0):
            raise ValueError("boundary_bias must be in [0, 1]")

    def context(self) -> GenContext:
        return GenContext.from_seed(
            self.seed,
            size_budget=self.size_budget,
            boundary_bias=self.boundary_bias,
        )


@dataclass(frozen=True)
class CrashSignature:
    exc_type: str
    location: str


@dataclass
class CaseOutcome:
    case_index: int
    binding: Binding
    status: str
    signature: Optional[CrashSignature] = None
    # Crashes during construction are blamed on the generator/constructor.
    attribution: Optional[str] = None
    shrunk: Optional[Binding] = None
    frames: Optional[list[str]] = None


class FilterTooMuch(Exception):
    """Preconditions discard more candidates than the health budgets allow."""

    def __init__(self, fq_name: str, reason: str, outcomes: list[CaseOutcome]):
        super().__init__(f"{fq_name}: {reason}")
        self.fq_name = fq_name
        self.reason = reason
        self.outcomes = outcomes


class MissingConstructor(Exception):
    def __init__(self, class_name: str):
        super().__init__(
            f"class {class_name!r} has no annotated constructor or cc_example"
        )
        self.class_name = class_name


class ConstructorExampleCrash(Exception):
    """The fixed constructor example itself crashed; the class is untestable."""

    def __init__(self, class_name: str, outcome: CaseOutcome):
        super().__init__(f"cc_example constructor for {class_name!r} crashed")
        self.class_name = class_name
        self.outcome = outcome


class _ConstructCrashed(Exception):
    def __init__(self, gen: str, args: list[Value], resp: Response):
        super().__init__(f"construct {gen!r} crashed")
        self.gen = gen
        self.args = args
        self.resp = resp


class _ConstructTimedOut(Exception):
    def __init__(self, gen: str, args: list[Value]):
        super().__init__(f"construct {gen!r} timed out")
        self.gen = gen
        self.args = args


def _signature_of(resp: Response) -> CrashSignature:
    assert resp.exc_type and resp.location
    return CrashSignature(resp.exc_type, resp.location)


def _eval_requires(requires, binding: Binding) -> Optional[str]:
    for expr in requires:
        r = evaluate(expr, binding)
        if r is False:
            return "rejected"
        if isinstance(r, EvalError):
            return "eval_error_rejected"
    return None


def _provisional(out: GenOut) -> Value:
    """Stand-in values for require evaluation before constructs resolve."""
    if isinstance(out, NeedsConstruct):
        return VHandle(0, out.gen)
    if isinstance(out, VList):
        return VList(tuple(_provisional(x) for x in out.items))
    if isinstance(out, VTuple):
        return VTuple(tuple(_provisional(x) for x in out.items))
    if isinstance(out, VDict):
        return VDict(
            tuple((_provisional(k), _provisional(v)) for k, v in out.pairs)
        )
    return out


def binding_size(b: Binding) -> int:
    return sum(element_count(v) for v in b.values())


class _Session:
    """Campaign-side view of one worker: ids, constructs, handle recipes."""

    def __init__(self, worker: WorkerSession, cfg: CampaignConfig):
        self.worker = worker
        self.cfg = cfg
        self.recipes: dict[int, tuple[str, list[Value]]] = {}

    def request(self, op: str, target: Optional[str], args: list[Value],
                kwargs: Optional[VDict], timeout_s: float) -> Response:
        req = Request(
            id=self.worker.next_id(),
            op=op,
            target=target,
            args=args,
            kwargs=kwargs,
            timeout_ms=int(timeout_s * 1000),
        )
        return self.worker.call(req)

    def construct(self, gen: str, args: list[Value], timeout_s: float) -> VHandle:
        resp = self.request("construct", gen, args, None, timeout_s)
        if resp.status == "crash":
            raise _ConstructCrashed(gen, args, resp)
        if resp.status == "timeout":
            raise _ConstructTimedOut(gen, args)
        if resp.status != "ok" or not isinstance(resp.value, VHandle):
            raise ProtocolError(
                f"construct {gen!r} returned {resp.status}: {resp.message}"
            )
        handle = VHandle(resp.value.id, gen)
        self.recipes[handle.id] = (gen, args)
        return handle

    def resolve(self, out: GenOut, timeout_s: float) -> Value:
        """Depth-first replacement of pending constructs with live handles."""
        if isinstance(out, NeedsConstruct):
            args = [self.resolve(a, timeout_s) for a in out.args]
            return self.construct(out.gen, args, timeout_s)
        if isinstance(out, VList):
            return VList(tuple(self.resolve(x, timeout_s) for x in out.items))
        if isinstance(out, VTuple):
            return VTuple(tuple(self.resolve(x, timeout_s) for x in out.items))
        if isinstance(out, VDict):
            return VDict(
                tuple(
                    (self.resolve(k, timeout_s), self.resolve(v, timeout_s))
                    for k, v in out.pairs
                )
            )
        return out

    def reset(self) -> None:
        self.recipes.clear()
        resp = self.request("reset", None, [], None, self.cfg.default_timeout_s)
        if resp.status != "ok":
            raise ProtocolError(f"reset failed: {resp.status}")


def _split_kwargs(
    args: Mapping[str, TypeConstraint], binding: Binding
) -> tuple[list[Value], Optional[VDict]]:
    """An argument literally named `kwargs` with a dict constraint is splatted."""
    positional: list[Value] = []
    kwargs: Optional[VDict] = None
    for name, c in args.items():
        v = binding[name]
        if name == "kwargs" and isinstance(c, Dicts) and isinstance(v, VDict):
            kwargs = v
        else:
            positional.append(v)
    return positional, kwargs


class _FunctionCampaign:
    """Shared machinery for plain functions, constructors and methods."""

    def __init__(
        self,
        fq_name: str,
        ann: FunctionAnnotations,
        spec: AnnotationSpec,
        cfg: CampaignConfig,
        session: _Session,
        ctx: GenContext,
        wire_target: Optional[str] = None,
        instance: Optional[VHandle] = None,
        ctor: Optional[tuple[str, FunctionAnnotations]] = None,
    ):
        self.fq_name = fq_name
        self.ann = ann
        self.cfg = cfg
        self.session = session
        self.ctx = ctx
        self.wire_target = wire_target or fq_name
        self.instance = instance
        self.ctor = ctor  # (class name, ctor annotations) for per-case instances
        self.gen_args = {
            name: g.args for name, g in spec.generators.items()
        }
        self.timeout_s = (
            ann.timeout_s if ann.timeout_s is not None else cfg.default_timeout_s
        )
        self.outcomes: list[CaseOutcome] = []
        self.attempts = 0
        self.rejections = 0
        self.consecutive_rejections = 0

    # -- health -------------------------------------------------------------

    def _note_rejection(self) -> None:
        self.rejections += 1
        self.consecutive_rejections += 1
        if self.consecutive_rejections >= self.cfg.max_consecutive_rejections:
            raise FilterTooMuch(
                self.fq_name,
                f"{self.consecutive_rejections} consecutive rejections",
                self.outcomes,
            )
        if (
            self.attempts >= 100
            and self.rejections / self.attempts > self.cfg.max_rejection_ratio
        ):
            raise FilterTooMuch(
                self.fq_name,
                f"rejection ratio {self.rejections}/{self.attempts} exceeds "
                f"{self.cfg.max_rejection_ratio}",
                self.outcomes,
            )

    # -- case steps ----------------------------------------------------------

    def _requires_ok(self, binding: Binding) -> Optional[str]:
        """None if all preconditions hold, else the rejecting status."""
        return _eval_requires(self.ann.requires, binding)

    def _dispatch(self, binding: Binding) -> Response:
        positional, kwargs = _split_kwargs(self.ann.args, binding)
        if self.instance is not None:
            positional = [self.instance] + positional
        return self.session.request(
            "call", self.wire_target, positional, kwargs, self.timeout_s
        )

    def _draw_ctor(self, ctx: GenContext):
        """Constructor binding for a per-case instance, or a rejection status.

        Constructor preconditions gate instance construction the same way
        argument preconditions gate dispatch: nothing invalid hits the wire.
        """
        assert self.ctor is not None
        _, ctor_ann = self.ctor
        raw = generate_binding(ctor_ann.args, ctx, self.gen_args)
        provisional = {k: _provisional(v) for k, v in raw.items()}
        rejection = _eval_requires(ctor_ann.requires, provisional)
        if rejection is not None:
            return rejection, provisional
        return None, raw

    def _construct_instance(self, raw: Mapping[str, GenOut]) -> VHandle:
        assert self.ctor is not None
        class_name, ctor_ann = self.ctor
        args = [
            self.session.resolve(raw[name], self.timeout_s)
            for name in ctor_ann.args
        ]
        return self.session.construct(class_name, args, self.timeout_s)

    def run(self) -> list[CaseOutcome]:
        dispatched = 0
        case_index = 0
        while dispatched < self.cfg.max_examples:
            self.attempts += 1
            case_ctx, self.ctx = split(self.ctx)
            inst_ctx, case_ctx = split(case_ctx)
            try:
                raw = generate_binding(self.ann.args, case_ctx, self.gen_args)
            except GenerationError:
                self.outcomes.append(
                    CaseOutcome(case_index, {}, "rejected", attribution=self.fq_name)
                )
                case_index += 1
                self._note_rejection()
                continue

            provisional = {k: _provisional(v) for k, v in raw.items()}
            rejection = self._requires_ok(provisional)
            if rejection is not None:
                self.outcomes.append(
                    CaseOutcome(
                        case_index, provisional, rejection, attribution=self.fq_name
                    )
                )
                case_index += 1
                self._note_rejection()
                continue

            ctor_raw: Optional[Mapping[str, GenOut]] = None
            if self.ctor is not None and self.instance is None:
                ctor_rejection, ctor_raw = self._draw_ctor(inst_ctx)
                if ctor_rejection is not None:
                    self.outcomes.append(
                        CaseOutcome(
                            case_index,
                            ctor_raw,  # the rejected constructor binding
                            ctor_rejection,
                            attribution=self.fq_name,
                        )
                    )
                    case_index += 1
                    self._note_rejection()
                    continue
            self.consecutive_rejections = 0

            outcome = self._execute(case_index, raw, ctor_raw)
            self.outcomes.append(outcome)
            case_index += 1
            dispatched += 1
        return self.outcomes

    def _execute(
        self,
        case_index: int,
        raw: Mapping[str, GenOut],
        ctor_raw: Optional[Mapping[str, GenOut]],
    ) -> CaseOutcome:
        try:
            if ctor_raw is not None:
                instance = self._construct_instance(ctor_raw)
            else:
                instance = self.instance
            binding = {
                name: self.session.resolve(v, self.timeout_s)
                for name, v in raw.items()
            }
        except _ConstructCrashed as cc:
            gen_binding = self._construct_binding(cc.gen, cc.args)
            outcome = CaseOutcome(
                case_index,
                gen_binding,
                "construct_crash",
                signature=_signature_of(cc.resp),
                attribution=cc.gen,
                frames=cc.resp.frames,
            )
            outcome.shrunk = self._shrink_construct(cc, gen_binding, outcome)
            return outcome
        except _ConstructTimedOut as ct:
            return CaseOutcome(
                case_index,
                self._construct_binding(ct.gen, ct.args),
                "timeout",
                attribution=ct.gen,
            )

        saved_instance = self.instance
        self.instance = instance
        try:
            resp = self._dispatch(binding)
            if resp.status == "ok":
                return CaseOutcome(case_index, binding, "pass")
            if resp.status == "timeout":
                return CaseOutcome(case_index, binding, "timeout")
            if resp.status == "crash":
                sig = _signature_of(resp)
                outcome = CaseOutcome(
                    case_index,
                    binding,
                    "crash",
                    signature=sig,
                    attribution=self.fq_name,
                    frames=resp.frames,
                )
                outcome.shrunk = self._shrink_crash(binding, sig)
                return outcome
            raise ProtocolError(
                f"call {self.wire_target!r} rejected by worker: {resp.message}"
            )
        finally:
            self.instance = saved_instance

    def _construct_binding(self, gen: str, args: list[Value]) -> Binding:
        names = _construct_arg_names(self.gen_args.get(gen), len(args))
        return dict(zip(names, args))

    # -- shrinking ------------------------------------------------------------

    def _shrink_crash(self, binding: Binding, sig: CrashSignature) -> Binding:
        """Per-argument shrink; candidates must keep requires and signature.

        The budget is split fairly per round so one argument (floats halve
        almost indefinitely) cannot starve the ones after it.
        """
        shrunk = dict(binding)
        budget = self.cfg.shrink_budget
        names = [
            n for n in self.ann.args if not isinstance(shrunk[n], VHandle)
        ]

        def crashes_same(b: Binding) -> bool:
            if self._requires_ok(b) is not None:
                return False
            resp = self._dispatch(b)
            return (
                resp.status == "crash"
                and resp.exc_type == sig.exc_type
                and resp.location == sig.location
            )

        improved = True
        while improved and budget > 0:
            improved = False
            for name in names:
                if budget <= 0:
                    break
                c = self.ann.args[name]
                v = shrunk[name]
                share = min(budget, max(8, budget // max(1, len(names))))
                used = [0]

                def still_fails(cand: Value, name: str = name) -> bool:
                    used[0] += 1
                    trial = dict(shrunk)
                    trial[name] = cand
                    return crashes_same(trial)

                new_v = genmod.shrink(v, c, still_fails, budget=share)
                budget -= used[0]
                if new_v is not v and not _same(new_v, v):
                    shrunk[name] = new_v
                    improved = True
        return shrunk

    def _shrink_construct(
        self, cc: _ConstructCrashed, gen_binding: Binding, outcome: CaseOutcome
    ) -> Optional[Binding]:
        """Shrink generator arguments when their constraints are known."""
        gen_args = self.gen_args.get(cc.gen)
        if gen_args is None or len(gen_args) != len(cc.args):
            return None
        sig = outcome.signature
        assert sig is not None
        names = list(gen_args)
        shrunk = {n: v for n, v in zip(names, cc.args)}
        budget = self.cfg.shrink_budget

        def crashes_same(b: Binding) -> bool:
            args = [b[n] for n in names]
            try:
                self.session.construct(cc.gen, args, self.timeout_s)
            except _ConstructCrashed as again:
                return (
                    again.resp.exc_type == sig.exc_type
                    and again.resp.location == sig.location
                )
            except _ConstructTimedOut:
                return False
            return False

        for n in names:
            if budget <= 0:
                break
            c = gen_args[n]
            v = shrunk[n]
            if isinstance(v, VHandle) or not satisfies(v, c):
                continue
            share = min(budget, max(8, budget // max(1, len(names))))
            used = [0]

            def still_fails(cand: Value, n: str = n) -> bool:
                used[0] += 1
                trial = dict(shrunk)
                trial[n] = cand
                return crashes_same(trial)

            shrunk[n] = genmod.shrink(v, c, still_fails, budget=share)
            budget -= used[0]
        return dict(shrunk)


def _construct_arg_names(
    gen_args: Optional[Mapping[str, TypeConstraint]], n: int
) -> list[str]:
    if gen_args is not None and len(gen_args) == n:
        return list(gen_args)
    return [f"arg{i}" for i in range(n)]


def _same(a: Value, b: Value) -> bool:
    return structural_eq(a, b)


# ---------------------------------------------------------------------------
# Public campaign operations
# ---------------------------------------------------------------------------


def run_function_campaign(
    ann: FunctionAnnotations,
    fq_name: str,
    cfg: CampaignConfig,
    worker: WorkerSession,
    spec: Optional[AnnotationSpec] = None,
    session: Optional[_Session] = None,
    ctx: Optional[GenContext] = None,
    wire_target: Optional[str] = None,
) -> list[CaseOutcome]:
    """Full campaign for one non-excluded function."""
    assert not ann.excluded, "excluded functions are never campaign targets"
    spec = spec or AnnotationSpec(subject="", functions={fq_name: ann})
    session = session or _Session(worker, cfg)
    ctx = ctx or derive(cfg.context(), fq_name)
    campaign = _FunctionCampaign(
        fq_name, ann, spec, cfg, session, ctx, wire_target=wire_target
    )
    return campaign.run()


def run_method_campaign(
    class_name: str,
    method_name: str,
    method_ann: FunctionAnnotations,
    ctor_ann: Optional[FunctionAnnotations],
    cfg: CampaignConfig,
    worker: WorkerSession,
    spec: Optional[AnnotationSpec] = None,
    session: Optional[_Session] = None,
    ctx: Optional[GenContext] = None,
) -> list[CaseOutcome]:
    """Campaign for `Class.method`, constructing instances as needed.

    With a cc_example on the constructor the instance is built exactly once
    and reused; otherwise each case generates a fresh instance from the
    constructor's own annotations, and constructor crashes surface as
    construct_crash outcomes without stopping the campaign.
    """
    fq_name = f"{class_name}.{method_name}"
    if ctor_ann is None:
        # An annotated-but-empty block means a zero-argument constructor;
        # only a wholly absent block blocks method testing.
        raise MissingConstructor(class_name)
    spec = spec or AnnotationSpec(
        subject="", functions={fq_name: method_ann}
    )
    session = session or _Session(worker, cfg)
    ctx = ctx or derive(cfg.context(), fq_name)

    instance: Optional[VHandle] = None
    ctor: Optional[tuple[str, FunctionAnnotations]] = None
    if ctor_ann.cc_example is not None:
        try:
            args = [
                session.resolve(_example_item(i), cfg.default_timeout_s)
                for i in ctor_ann.cc_example
            ]
            instance = session.construct(class_name, args, cfg.default_timeout_s)
        except _ConstructCrashed as cc:
            outcome = CaseOutcome(
                0,
                {f"arg{i}": v for i, v in enumerate(cc.args)},
                "construct_crash",
                signature=_signature_of(cc.resp),
                attribution=f"{class_name}.__init__",
            )
            raise ConstructorExampleCrash(class_name, outcome) from None
    else:
        ctor = (class_name, ctor_ann)

    campaign = _FunctionCampaign(
        fq_name,
        method_ann,
        spec,
        cfg,
        session,
        ctx,
        instance=instance,
        ctor=ctor,
    )
    return campaign.run()


def _example_item(item) -> GenOut:
    if isinstance(item, GenRef):
        return NeedsConstruct(item.name, item.args)
    return item


def run_module_tests(
    spec: AnnotationSpec,
    cfg: CampaignConfig,
    worker: WorkerSession,
    session: Optional[_Session] = None,
) -> list[CaseOutcome]:
    """One import-and-execute request per listed module."""
    session = session or _Session(worker, cfg)
    outcomes = []
    for i, module in enumerate(spec.module_tests):
        resp = session.request(
            "module_test", module, [], None, cfg.default_timeout_s
        )
        if resp.status == "ok":
            outcomes.append(CaseOutcome(i, {}, "pass", attribution=module))
        elif resp.status == "timeout":
            outcomes.append(CaseOutcome(i, {}, "timeout", attribution=module))
        elif resp.status == "crash":
            outcomes.append(
                CaseOutcome(
                    i,
                    {},
                    "crash",
                    signature=_signature_of(resp),
                    attribution=module,
                    frames=resp.frames,
                )
            )
        else:
            raise ProtocolError(f"module_test {module!r}: {resp.message}")
    return outcomes


def dedup(
    outcomes: list[CaseOutcome],
) -> dict[CrashSignature, tuple[int, Binding]]:
    """Group crashes by signature; representative is the smallest reproducer."""
    best: dict[CrashSignature, tuple[int, Binding, int, int]] = {}
    for o in outcomes:
        if o.status not in ("crash", "construct_crash"):
            continue
        assert o.signature is not None
        b = o.shrunk if o.shrunk is not None else o.binding
        size = binding_size(b)
        prev = best.get(o.signature)
        if prev is None:
            best[o.signature] = (1, b, size, o.case_index)
            continue
        count, pb, psize, pidx = prev
        if size < psize or (size == psize and o.case_index < pidx):
            best[o.signature] = (count + 1, b, size, o.case_index)
        else:
            best[o.signature] = (count + 1, pb, psize, pidx)
    return {sig: (count, b) for sig, (count, b, _, _) in best.items()}


# ---------------------------------------------------------------------------
# Whole-spec driver
# ---------------------------------------------------------------------------


@dataclass
class FunctionResult:
    name: str
    kind: str  # function | constructor | method | generator | module_test
    outcomes: list[CaseOutcome] = field(default_factory=list)
    health: str = "ok"
    health_detail: str = ""


def _class_of(name: str) -> Optional[str]:
    if "." in name:
        return name.rsplit(".", 1)[0]
    return None


def run_campaign(
    spec: AnnotationSpec,
    cfg: CampaignConfig,
    worker: WorkerSession,
    only: Optional[set[str]] = None,
) -> tuple[list[FunctionResult], dict[int, tuple[str, list[Value]]]]:
    """Run every selected target in order; returns results plus handle recipes."""
    results: list[FunctionResult] = []
    recipes: dict[int, tuple[str, list[Value]]] = {}
    base_ctx = cfg.context()
    dead_classes: set[str] = set()
    ctor_done: set[str] = set()

    def selected(name: str) -> bool:
        return only is None or name in only

    def finish(session: _Session) -> None:
        recipes.update(session.recipes)
        session.reset()

    targets = [(name, ann, "function") for name, ann in spec.functions.items()]
    targets += [(name, ann, "generator") for name, ann in spec.generators.items()]

    ordered: list[tuple[str, FunctionAnnotations, str]] = []
    for name, ann, kind in targets:
        cls = _class_of(name)
        ctor_name = f"{cls}.__init__" if cls else None
        if (
            cls
            and ctor_name != name
            and ctor_name in spec.functions
            and ctor_name not in ctor_done
        ):
            # Constructor campaign precedes the first method of its class.
            ctor_done.add(ctor_name)
            ordered.append(
                (ctor_name, spec.functions[ctor_name], "constructor")
            )
        if name.endswith(".__init__"):
            if name not in ctor_done:
                ctor_done.add(name)
                ordered.append((name, ann, "constructor"))
        else:
            ordered.append((name, ann, kind))

    for name, ann, kind in ordered:
        if ann.excluded or not selected(name):
            continue
        session = _Session(worker, cfg)
        ctx = derive(base_ctx, name)
        cls = _class_of(name)
        result = FunctionResult(name=name, kind=kind)
        try:
            if kind == "constructor":
                assert cls is not None
                result.outcomes = run_function_campaign(
                    ann, name, cfg, worker,
                    spec=spec, session=session, ctx=ctx, wire_target=cls,
                )
            elif (
                cls is not None
                and kind == "function"
                and f"{cls}.__init__" in spec.functions
            ):
                result.kind = "method"
                if cls in dead_classes:
                    result.health = "constructor-example-crash"
                    result.health_detail = (
                        f"skipped: cc_example constructor for {cls!r} crashed"
                    )
                    results.append(result)
                    continue
                ctor_ann = spec.functions.get(f"{cls}.__init__")
                result.outcomes = run_method_campaign(
                    cls, name.rsplit(".", 1)[1], ann, ctor_ann, cfg, worker,
                    spec=spec, session=session, ctx=ctx,
                )
            else:
                result.outcomes = run_function_campaign(
                    ann, name, cfg, worker, spec=spec, session=session, ctx=ctx,
                )
        except FilterTooMuch as ftm:
            result.outcomes = ftm.outcomes
            result.health = "filter-too-much"
            result.health_detail = ftm.reason
        except MissingConstructor as mc:
            result.health = "missing-constructor"
            result.health_detail = str(mc)
        except ConstructorExampleCrash as cec:
            dead_classes.add(cec.class_name)
            result.outcomes = [cec.outcome]
            result.health = "constructor-example-crash"
            result.health_detail = str(cec)
        results.append(result)
        finish(session)

    if spec.module_tests and (
        only is None or any(m in only for m in spec.module_tests)
    ):
        session = _Session(worker, cfg)
        mods = [m for m in spec.module_tests if selected(m)]
        filtered = replace_module_tests(spec, mods)
        outcomes = run_module_tests(filtered, cfg, worker, session=session)
        for module in mods:
            results.append(
                FunctionResult(
                    name=module,
                    kind="module_test",
                    outcomes=[o for o in outcomes if o.attribution == module],
                )
            )
        finish(session)
    return results, recipes


def replace_module_tests(spec: AnnotationSpec, mods: list[str]) -> AnnotationSpec:
    return AnnotationSpec(
        subject=spec.subject,
        functions=spec.functions,
        generators=spec.generators,
        module_tests=mods,
    )

import os

import pytest

from anvil.model import (
    Anys,
    Bools,
    Dicts,
    Froms,
    GenRef,
    Ints,
    Lists,
    Objs,
    VDict,
    VHandle,
    VInt,
    VList,
    VStr,
    satisfies,
)
from anvil.orchestrator import (
    CampaignConfig,
    CaseOutcome,
    ConstructorExampleCrash,
    CrashSignature,
    FilterTooMuch,
    MissingConstructor,
    dedup,
    run_campaign,
    run_function_campaign,
    run_method_campaign,
    run_module_tests,
)
from anvil.parser import AnnotationSpec, FunctionAnnotations, parse_require, parse_spec
from anvil.requires import evaluate

from mockworker import MockWorker, SubjectCrash, SubjectHang


def fn_ann(args, requires=(), timeout=None, cc=None, excluded=False):
    ann = FunctionAnnotations()
    ann.args = dict(args)
    ann.requires = [
        parse_require(r, list(ann.args)) if isinstance(r, str) else r
        for r in requires
    ]
    ann.timeout_s = timeout
    ann.cc_example = cc
    ann.excluded = excluded
    return ann


def cfg_with(**kw):
    base = dict(max_examples=20, seed=7, default_timeout_s=5.0)
    base.update(kw)
    return CampaignConfig(**base)


def passing(args, kwargs, worker):
    return None


def test_campaign_dispatches_max_examples():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann({"x": Ints(0, 9)})
    outcomes = run_function_campaign(ann, "f", cfg_with(), worker)
    assert len(outcomes) == 20
    assert all(o.status == "pass" for o in outcomes)
    calls = [r for r in worker.log if r.op == "call"]
    assert len(calls) == 20


def test_rejected_cases_never_reach_wire_and_do_not_count():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann({"a": Ints(0, 9), "b": Ints(0, 9)}, requires=["a < b"])
    cfg = cfg_with(max_examples=30)
    outcomes = run_function_campaign(ann, "f", cfg, worker)
    dispatched = [o for o in outcomes if o.status == "pass"]
    rejected = [o for o in outcomes if o.status == "rejected"]
    assert len(dispatched) == 30
    assert rejected, "expected some rejections with a<b at uniform draws"
    # every binding that reached the wire satisfies the precondition
    req = ann.requires[0]
    for r in worker.log:
        if r.op != "call":
            continue
        binding = {"a": r.args[0], "b": r.args[1]}
        assert evaluate(req, binding) is True
    # rejected outcomes recorded with their candidate bindings
    for o in rejected:
        assert evaluate(req, o.binding) is False


def test_eval_error_counts_separately():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann(
        {"x": Anys((Ints(0, 5), Lists(Ints(0, 3), 1, 3)))},
        requires=["len(x) > 0"],
    )
    outcomes = run_function_campaign(ann, "f", cfg_with(max_examples=10), worker)
    assert any(o.status == "eval_error_rejected" for o in outcomes)
    assert sum(1 for o in outcomes if o.status == "pass") == 10


def test_filter_too_much_at_exactly_50_consecutive():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann({"x": Ints(0, 9)}, requires=["false"])
    with pytest.raises(FilterTooMuch) as ei:
        run_function_campaign(ann, "f", cfg_with(max_examples=100), worker)
    assert len(ei.value.outcomes) == 50
    assert all(o.status == "rejected" for o in ei.value.outcomes)
    assert not worker.log or all(r.op != "call" for r in worker.log)


def test_filter_too_much_by_ratio():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann({"a": Ints(0, 99)}, requires=["a == 73"])
    cfg = cfg_with(max_examples=1000, max_consecutive_rejections=10**9)
    with pytest.raises(FilterTooMuch) as ei:
        run_function_campaign(ann, "f", cfg, worker)
    assert "ratio" in ei.value.reason
    assert len(ei.value.outcomes) >= 100


def test_crash_outcome_shrinks_to_minimum():
    def explode(args, kwargs, worker):
        depth, mode = args
        if depth.value < 15:
            raise SubjectCrash("TypeError", "demo.py:42")
        return None

    worker = MockWorker(targets={"explode": explode})
    ann = fn_ann({"depth": Ints(10, 100), "mode": Froms((VStr("a"), VStr("b")))})
    outcomes = run_function_campaign(ann, "explode", cfg_with(max_examples=40), worker)
    crashes = [o for o in outcomes if o.status == "crash"]
    assert crashes
    for o in crashes:
        assert o.signature == CrashSignature("TypeError", "demo.py:42")
        assert o.shrunk is not None
        assert o.shrunk["depth"] == VInt(10)
        # shrunk binding still satisfies the argument constraints
        for name, c in ann.args.items():
            assert satisfies(o.shrunk[name], c)


def test_shrunk_binding_respects_requires():
    def crashy(args, kwargs, worker):
        a, b = args
        if a.value >= 1:
            raise SubjectCrash("ValueError", "demo.py:9")

    worker = MockWorker(targets={"g": crashy})
    ann = fn_ann({"a": Ints(0, 9), "b": Ints(0, 9)}, requires=["a < b"])
    outcomes = run_function_campaign(ann, "g", cfg_with(max_examples=25), worker)
    crashes = [o for o in outcomes if o.status == "crash"]
    assert crashes
    req = ann.requires[0]
    for o in crashes:
        assert evaluate(req, o.shrunk) is True
        # minimal crashing a under a<b is a=1 (b must be at least 2)
        assert o.shrunk["a"] == VInt(1)


def test_shrunk_binding_reproduces_signature_on_redispatch():
    def explode(args, kwargs, worker):
        if args[0].value < 15:
            raise SubjectCrash("TypeError", "demo.py:42")
        return None

    worker = MockWorker(targets={"explode": explode})
    ann = fn_ann({"depth": Ints(10, 100)})
    outcomes = run_function_campaign(ann, "explode", cfg_with(max_examples=30), worker)
    crash = next(o for o in outcomes if o.status == "crash")
    # independently re-dispatch the shrunk binding through the wire
    from anvil.wire import Request

    resp = worker.call(
        Request(
            id=worker.next_id(),
            op="call",
            target="explode",
            args=[crash.shrunk["depth"]],
            timeout_ms=5000,
        )
    )
    assert resp.status == "crash"
    assert CrashSignature(resp.exc_type, resp.location) == crash.signature


def test_nested_construct_inside_collection():
    def mk(args, kwargs, worker):
        return VStr("blob")

    seen = []

    def use(args, kwargs, worker):
        seen.append(args[0])
        return None

    worker = MockWorker(targets={"use": use, "mk": mk})
    spec = AnnotationSpec(subject="m")
    spec.generators["mk"] = fn_ann({"n": Ints(1, 2)}, excluded=True)
    spec.functions["use"] = fn_ann({"blobs": Lists(Objs("mk"), 1, 2)})
    outcomes = run_function_campaign(
        spec.functions["use"], "use", cfg_with(max_examples=4), worker, spec=spec
    )
    assert all(o.status == "pass" for o in outcomes)
    # subject side sees handles (gen tag is driver-side metadata only)
    for lst in seen:
        assert isinstance(lst, VList)
        assert all(isinstance(h, VHandle) for h in lst.items)
    # driver-side bindings keep the generator attribution on each handle
    for o in outcomes:
        assert all(h.gen == "mk" for h in o.binding["blobs"].items)


def test_request_ids_strictly_increase():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann({"a": Ints(0, 9), "b": Ints(0, 9)}, requires=["a < b"])
    run_function_campaign(ann, "f", cfg_with(max_examples=10), worker)
    ids = [r.id for r in worker.log]
    assert ids == sorted(ids)
    assert len(set(ids)) == len(ids)


def test_timeout_outcome():
    def slow(args, kwargs, worker):
        raise SubjectHang()

    worker = MockWorker(targets={"s": slow})
    ann = fn_ann({"x": Bools()})
    outcomes = run_function_campaign(ann, "s", cfg_with(max_examples=3), worker)
    assert [o.status for o in outcomes] == ["timeout"] * 3


def test_construct_crash_attributed_to_generator():
    def mk_bad(args, kwargs, worker):
        raise SubjectCrash("RuntimeError", "gens.py:5")

    worker = MockWorker(targets={"use": passing, "mk_bad": mk_bad})
    spec = AnnotationSpec(subject="m")
    spec.generators["mk_bad"] = fn_ann({"n": Ints(1, 3)}, excluded=True)
    spec.functions["use"] = fn_ann({"blob": Objs("mk_bad")})
    outcomes = run_function_campaign(
        spec.functions["use"], "use", cfg_with(max_examples=4), worker, spec=spec
    )
    assert len(outcomes) == 4
    for o in outcomes:
        assert o.status == "construct_crash"
        assert o.attribution == "mk_bad"
        assert o.signature == CrashSignature("RuntimeError", "gens.py:5")
        assert list(o.binding) == ["n"]  # generator's own argument names
    assert all(r.op != "call" for r in worker.log if r.target == "use")


def test_construct_success_flows_into_call():
    def mk(args, kwargs, worker):
        return VStr("blob")

    seen_handles = []

    def use(args, kwargs, worker):
        seen_handles.append(args[0])
        return None

    worker = MockWorker(targets={"use": use, "mk": mk})
    spec = AnnotationSpec(subject="m")
    spec.generators["mk"] = fn_ann({"n": Ints(1, 3)}, excluded=True)
    spec.functions["use"] = fn_ann({"blob": Objs("mk"), "flag": Bools()})
    outcomes = run_function_campaign(
        spec.functions["use"], "use", cfg_with(max_examples=5), worker, spec=spec
    )
    assert all(o.status == "pass" for o in outcomes)
    assert all(isinstance(h, VHandle) for h in seen_handles)
    assert len(set(h.id for h in seen_handles)) == 5  # fresh handle per case
    for o in outcomes:
        assert o.binding["blob"].gen == "mk"


def test_kwargs_dict_is_splatted():
    got = []

    def f(args, kwargs, worker):
        got.append((list(args), kwargs))
        return None

    worker = MockWorker(targets={"f": f})
    ann = fn_ann(
        {
            "k": Ints(1, 5),
            "kwargs": Dicts(Froms((VStr("input_shape"),)), Ints(0, 3), 1, 1),
        }
    )
    run_function_campaign(ann, "f", cfg_with(max_examples=5), worker)
    for args, kwargs in got:
        assert len(args) == 1  # the dict moved to the kwargs channel
        assert isinstance(kwargs, VDict)
        assert kwargs.pairs[0][0] == VStr("input_shape")


def test_excluded_function_asserts():
    worker = MockWorker(targets={"f": passing})
    ann = fn_ann({"x": Bools()}, excluded=True)
    with pytest.raises(AssertionError):
        run_function_campaign(ann, "f", cfg_with(), worker)


# -- method campaigns -----------------------------------------------------------


def widget_targets(ctor_should_crash=False):
    def ctor(args, kwargs, worker):
        mode = args[0]
        if ctor_should_crash and mode.value != "safe":
            raise SubjectCrash("ValueError", "widgets.py:3")
        return VStr(f"widget-{mode.value}")

    def ping(args, kwargs, worker):
        assert isinstance(args[0], VHandle)
        return None

    return {"Widget": ctor, "Widget.ping": ping}


def test_method_campaign_with_cc_example_constructs_once():
    worker = MockWorker(targets=widget_targets(ctor_should_crash=True))
    ctor_ann = fn_ann(
        {"mode": Froms((VStr("boom1"), VStr("boom2")))}, cc=[VStr("safe")]
    )
    method_ann = fn_ann({"n": Ints(0, 9)})
    outcomes = run_method_campaign(
        "Widget", "ping", method_ann, ctor_ann, cfg_with(max_examples=10), worker
    )
    assert len(outcomes) == 10
    assert all(o.status == "pass" for o in outcomes)
    constructs = [r for r in worker.log if r.op == "construct"]
    assert len(constructs) == 1
    assert constructs[0].args == [VStr("safe")]
    assert sum(1 for o in outcomes if o.status == "construct_crash") == 0


def test_method_campaign_without_cc_example_constructs_per_case():
    worker = MockWorker(targets=widget_targets())
    ctor_ann = fn_ann({"mode": Froms((VStr("safe"), VStr("fast")))})
    method_ann = fn_ann({"n": Ints(0, 9)})
    outcomes = run_method_campaign(
        "Widget", "ping", method_ann, ctor_ann, cfg_with(max_examples=6), worker
    )
    assert all(o.status == "pass" for o in outcomes)
    constructs = [r for r in worker.log if r.op == "construct"]
    assert len(constructs) == 6


def test_method_campaign_ctor_requires_gate_construction():
    constructed = []

    def ctor(args, kwargs, worker):
        constructed.append(args[0])
        return VStr("widget")

    def ping(args, kwargs, worker):
        return None

    worker = MockWorker(targets={"Widget": ctor, "Widget.ping": ping})
    ctor_ann = fn_ann({"size": Ints(0, 9)}, requires=["size >= 5"])
    method_ann = fn_ann({"n": Ints(0, 9)})
    outcomes = run_method_campaign(
        "Widget", "ping", method_ann, ctor_ann, cfg_with(max_examples=8), worker
    )
    passes = [o for o in outcomes if o.status == "pass"]
    rejected = [o for o in outcomes if o.status == "rejected"]
    assert len(passes) == 8
    assert rejected, "sub-threshold constructor draws must be discarded"
    # nothing invalid was ever constructed
    assert all(v.value >= 5 for v in constructed)


def test_method_campaign_ctor_crash_without_cc_example():
    worker = MockWorker(targets=widget_targets(ctor_should_crash=True))
    ctor_ann = fn_ann({"mode": Froms((VStr("boom1"), VStr("boom2")))})
    method_ann = fn_ann({"n": Ints(0, 9)})
    outcomes = run_method_campaign(
        "Widget", "ping", method_ann, ctor_ann, cfg_with(max_examples=6), worker
    )
    assert len(outcomes) == 6
    assert all(o.status == "construct_crash" for o in outcomes)
    assert all(o.attribution == "Widget" for o in outcomes)
    assert all(r.op != "call" for r in worker.log if r.target == "Widget.ping")


def test_method_campaign_missing_constructor():
    worker = MockWorker(targets=widget_targets())
    with pytest.raises(MissingConstructor):
        run_method_campaign(
            "Widget", "ping", fn_ann({"n": Ints(0, 9)}), None, cfg_with(), worker
        )


def test_method_campaign_zero_arg_constructor_block():
    def ctor(args, kwargs, worker):
        assert args == []
        return VStr("instance")

    def ping(args, kwargs, worker):
        return None

    worker = MockWorker(targets={"Widget": ctor, "Widget.ping": ping})
    outcomes = run_method_campaign(
        "Widget", "ping", fn_ann({"n": Ints(0, 9)}), fn_ann({}),
        cfg_with(max_examples=4), worker,
    )
    assert all(o.status == "pass" for o in outcomes)


def test_campaign_config_rejects_bad_budgets():
    with pytest.raises(ValueError):
        CampaignConfig(max_examples=0)
    with pytest.raises(ValueError):
        CampaignConfig(max_rejection_ratio=1.0)
    with pytest.raises(ValueError):
        CampaignConfig(boundary_bias=2.0)


def test_method_campaign_cc_example_crash_aborts_class():
    def ctor(args, kwargs, worker):
        raise SubjectCrash("OSError", "widgets.py:8")

    worker = MockWorker(targets={"Widget": ctor})
    ctor_ann = fn_ann({"mode": Froms((VStr("x"),))}, cc=[VStr("x")])
    with pytest.raises(ConstructorExampleCrash) as ei:
        run_method_campaign(
            "Widget", "ping", fn_ann({"n": Ints(0, 9)}), ctor_ann, cfg_with(), worker
        )
    assert ei.value.outcome.status == "construct_crash"
    assert ei.value.outcome.attribution == "Widget.__init__"


def test_cc_example_with_gen_call_items():
    def grids(args, kwargs, worker):
        return VStr("grid")

    def ctor(args, kwargs, worker):
        assert isinstance(args[1], VHandle)
        return VStr("instance")

    def draw(args, kwargs, worker):
        return None

    worker = MockWorker(targets={"Cb": ctor, "Cb.draw": draw, "grids": grids})
    ctor_ann = fn_ann(
        {"path": Froms((VStr("image1.png"),)), "generator": Objs("grids")},
        cc=[VStr("image1.png"), GenRef("grids", (VInt(3), VInt(6), VInt(6), VInt(3)))],
    )
    spec = AnnotationSpec(subject="m")
    spec.generators["grids"] = fn_ann({}, excluded=True)
    outcomes = run_method_campaign(
        "Cb", "draw", fn_ann({"n": Ints(0, 1)}), ctor_ann,
        cfg_with(max_examples=3), worker, spec=spec,
    )
    assert all(o.status == "pass" for o in outcomes)
    constructs = [r for r in worker.log if r.op == "construct"]
    # one for grids(3,6,6,3), one for the class instance
    assert [c.target for c in constructs] == ["grids", "Cb"]
    assert constructs[0].args == [VInt(3), VInt(6), VInt(6), VInt(3)]


# -- module tests -----------------------------------------------------------------


def test_module_tests_classification():
    def main_ok(args, kwargs, worker):
        return None

    def main_crash(args, kwargs, worker):
        raise SubjectCrash("RuntimeError", "main.py:5")

    def main_slow(args, kwargs, worker):
        raise SubjectHang()

    worker = MockWorker(
        modules={"m.ok": main_ok, "m.crash": main_crash, "m.slow": main_slow}
    )
    spec = AnnotationSpec(subject="m", module_tests=["m.ok", "m.crash", "m.slow"])
    outcomes = run_module_tests(spec, cfg_with(), worker)
    assert [o.status for o in outcomes] == ["pass", "crash", "timeout"]
    assert outcomes[1].signature == CrashSignature("RuntimeError", "main.py:5")


# -- dedup ------------------------------------------------------------------------


def sig(e, l):
    return CrashSignature(e, l)


def out(idx, status, signature=None, binding=None):
    return CaseOutcome(idx, binding or {}, status, signature=signature)


def test_dedup_groups_same_signature():
    s = sig("TypeError", "densenet.py:68")
    outcomes = [
        out(0, "crash", s, {"x": VInt(5)}),
        out(1, "crash", s, {"x": VInt(3)}),
    ]
    d = dedup(outcomes)
    assert len(d) == 1
    count, rep = d[s]
    assert count == 2


def test_dedup_distinguishes_exc_type_at_same_line():
    a = sig("TypeError", "densenet.py:68")
    b = sig("ValueError", "densenet.py:68")
    d = dedup([out(0, "crash", a), out(1, "crash", b)])
    assert len(d) == 2


def test_dedup_empty():
    assert dedup([]) == {}


def test_dedup_five_crashes_two_signatures():
    a = sig("TypeError", "f.py:1")
    b = sig("ValueError", "f.py:2")
    outcomes = [
        out(0, "crash", a),
        out(1, "crash", b),
        out(2, "crash", a),
        out(3, "construct_crash", a),
        out(4, "crash", b),
    ]
    d = dedup(outcomes)
    assert {s: c for s, (c, _) in d.items()} == {a: 3, b: 2}


def test_dedup_picks_smallest_then_earliest():
    s = sig("E", "f.py:1")
    big = {"x": VList((VInt(1), VInt(2), VInt(3)))}
    small_late = {"x": VList((VInt(1),))}
    small_early = {"x": VList((VInt(2),))}
    d = dedup(
        [
            out(0, "crash", s, big),
            out(1, "crash", s, small_early),
            out(2, "crash", s, small_late),
        ]
    )
    _, rep = d[s]
    assert rep == small_early


# -- whole-spec driver ---------------------------------------------------------


with open(
    os.path.join(os.path.dirname(__file__), "fixtures", "demo.an"),
    encoding="utf-8",
) as _fh:
    DEMO_SPEC = _fh.read()


def demo_worker():
    def clamp(args, kwargs, worker):
        return None

    def explode(args, kwargs, worker):
        depth, mode = args
        if depth.value < 15:
            raise SubjectCrash("TypeError", "demo.py:42")
        if mode.value == "b":
            raise SubjectCrash("ValueError", "demo.py:50")
        return None

    def widget_ctor(args, kwargs, worker):
        return VStr("widget")

    def widget_poke(args, kwargs, worker):
        if args[1].value == 9:
            raise SubjectCrash("AssertionError", "demo.py:77")
        return None

    def mk_blob(args, kwargs, worker):
        return VStr("blob")

    def use_blob(args, kwargs, worker):
        return None

    def demo_main(args, kwargs, worker):
        raise SubjectCrash("RuntimeError", "demo.py:5")

    return MockWorker(
        targets={
            "clamp": clamp,
            "explode": explode,
            "Widget": widget_ctor,
            "Widget.poke": widget_poke,
            "mk_blob": mk_blob,
            "use_blob": use_blob,
        },
        modules={"demo.main": demo_main},
    )


def test_run_campaign_order_and_results():
    spec = parse_spec(DEMO_SPEC)
    worker = demo_worker()
    results, recipes = run_campaign(spec, cfg_with(max_examples=15), worker)
    names = [r.name for r in results]
    assert names == [
        "clamp",
        "explode",
        "Widget.__init__",
        "Widget.poke",
        "use_blob",
        "demo.main",
    ]
    kinds = {r.name: r.kind for r in results}
    assert kinds["Widget.__init__"] == "constructor"
    assert kinds["Widget.poke"] == "method"
    assert kinds["demo.main"] == "module_test"
    by_name = {r.name: r for r in results}
    explode_sigs = {o.signature for o in by_name["explode"].outcomes if o.signature}
    assert explode_sigs == {
        CrashSignature("TypeError", "demo.py:42"),
        CrashSignature("ValueError", "demo.py:50"),
    }
    assert recipes  # use_blob's handles were recorded
    # worker got one reset per campaign target group
    assert worker.resets >= 5


def test_run_campaign_cc_crash_reports_dedicated_entry():
    spec_text = (
        'subject "m"\n'
        'fn "W.__init__":\n'
        '  @arg(mode): froms(["x"])\n'
        '  @cc_example(["x"])\n'
        'fn "W.ping":\n'
        "  @arg(n): ints(min=0, max=3)\n"
        'fn "W.pong":\n'
        "  @arg(n): ints(min=0, max=3)\n"
    )
    spec = parse_spec(spec_text)

    def ctor(args, kwargs, worker):
        raise SubjectCrash("OSError", "w.py:2")

    worker = MockWorker(targets={"W": ctor})
    results, _ = run_campaign(spec, cfg_with(max_examples=5), worker)
    by_name = {r.name: r for r in results}
    # the constructor's own campaign records the generated-input crashes
    assert by_name["W.__init__"].kind == "constructor"
    # the first method carries the dedicated abort entry
    ping = by_name["W.ping"]
    assert ping.health == "constructor-example-crash"
    assert len(ping.outcomes) == 1
    assert ping.outcomes[0].status == "construct_crash"
    assert ping.outcomes[0].attribution == "W.__init__"
    # the remaining methods of the class are skipped, not crashed
    pong = by_name["W.pong"]
    assert pong.health == "constructor-example-crash"
    assert pong.outcomes == []


def test_run_campaign_reproducible():
    spec = parse_spec(DEMO_SPEC)
    r1, _ = run_campaign(spec, cfg_with(max_examples=15), demo_worker())
    r2, _ = run_campaign(spec, cfg_with(max_examples=15), demo_worker())
    assert r1 == r2


def test_run_campaign_only_filter():
    spec = parse_spec(DEMO_SPEC)
    worker = demo_worker()
    results, _ = run_campaign(
        spec, cfg_with(max_examples=5), worker, only={"clamp"}
    )
    assert [r.name for r in results] == ["clamp"]
    # selection does not change the clamp stream: same outcomes as full run
    full, _ = run_campaign(spec, cfg_with(max_examples=5), demo_worker())
    full_clamp = next(r for r in full if r.name == "clamp")
    assert results[0].outcomes == full_clamp.outcomes

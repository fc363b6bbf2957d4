"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Runs entirely against the in-process mock worker; no subprocess worker is
required. Run with `pytest tests/test_acceptance.py -s` to see the verdict
lines.
"""

import json
import random
import sys
import time
from contextlib import contextmanager

import pytest

from anvil.gen import GenContext, generate, generate_binding, shrink, split
from anvil.model import (
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
    VHandle,
    VInt,
    VNone,
    VStr,
    satisfies,
    structural_eq,
)
from anvil.gen import NeedsConstruct
from anvil.orchestrator import (
    CampaignConfig,
    CaseOutcome,
    CrashSignature,
    FilterTooMuch,
    dedup,
    run_campaign,
    run_function_campaign,
)
from anvil.parser import parse_spec, render_spec, FunctionAnnotations
from anvil.report import build_report, write_report
from anvil.requires import evaluate
from anvil.wire import decode_value, encode_value

from fuzzers import fuzz_spec, fuzz_value
from test_orchestrator import DEMO_SPEC, demo_worker
from mockworker import MockWorker


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}", flush=True)
        raise
    print(f"ACCEPTANCE PASS: {name}", flush=True)


# ---------------------------------------------------------------------------
# Criterion 1: generator soundness, 12 forms x 3 parameterizations x 10^4
# ---------------------------------------------------------------------------

GEN_ARGS = {"mk": {"n": Ints(1, 3)}, "grids": {"a": Ints(1, 9), "b": Ints(1, 9)}}

SOUNDNESS_CASES = {
    "froms": [
        Froms((VInt(0), VNone(), VStr("x"))),
        Froms((VInt(-1),)),
        Froms((VStr("gan1"), VStr("gan2"), GenRef("mk", (VInt(2),)))),
    ],
    "bools": [Bools(), Bools(), Bools()],
    "ints": [Ints(10, 100), Ints(None, 5), Ints(-3, None)],
    "floats": [
        Floats(0.0, 1.0, exclude_min=True, exclude_max=True),
        Floats(min=1e-4, max=1e-2),
        Floats(width=32, min=-2.0, max=2.0, allow_nan=True),
    ],
    "lists": [
        Lists(Ints(0, 3), 0, 4),
        Lists(Bools(), 1, 2),
        Lists(Tuples((Ints(0, 1), Bools())), 0, 3),
    ],
    "int_lists": [
        IntLists(2, 5, 2, 5),
        IntLists(min_len=1, min=0),
        IntLists(0, 3, -5, None),
    ],
    "tuples": [
        Tuples((Ints(20, 70), Ints(20, 70), Ints(1, 3))),
        Tuples((Bools(),)),
        Tuples((Floats(0.0, 1.0), Ints(0, 1))),
    ],
    "np_shapes": [
        NpShapes(3, 3, 1, 10),
        NpShapes(1, 1, 1, 10),
        NpShapes(2, 4, 2, 6),
    ],
    "np_arrays": [
        NpArrays(DType.UINT32, (2, 2)),
        NpArrays(DType.FLOAT32, NpShapes(1, 2, 1, 4)),
        NpArrays(DType.INT8, (3,)),
    ],
    "dicts": [
        Dicts(Froms((VStr("input_shape"),)), NpShapes(1, 1, 1, 10), 0, 1),
        Dicts(Ints(0, 20), Bools(), 0, 4),
        Dicts(Froms((VStr("a"), VStr("b"), VStr("c"))), Ints(0, 9), 1, 3),
    ],
    "anys": [
        Anys((Froms((VInt(-1),)), Ints(1, 5), IntLists(2, 5, 2, 5))),
        Anys((Bools(),)),
        Anys((Ints(0, 1), Floats(0.0, 1.0))),
    ],
    "objs": [Objs("mk"), Objs("grids"), Objs("mk")],
}


def _resolve_constructs_for_check(out, counter=[0]):
    """Simulate handle resolution so soundness can use `satisfies`."""
    if isinstance(out, NeedsConstruct):
        for a in out.args:
            assert not isinstance(a, NeedsConstruct) or _resolve_constructs_for_check(a)
        counter[0] += 1
        return VHandle(counter[0], out.gen)
    return out


def test_acceptance_generator_soundness():
    with criterion("generator soundness (12 forms x 3 params x 10^4)"):
        assert len(SOUNDNESS_CASES) == 12
        started = time.monotonic()
        n = 10_000
        for fi, (form, cases) in enumerate(SOUNDNESS_CASES.items()):
            assert len(cases) == 3, form
            for pi, c in enumerate(cases):
                ctx = GenContext.from_seed(1000 * fi + pi)
                for _ in range(n):
                    child, ctx = split(ctx)
                    out = generate(c, child, GEN_ARGS)
                    v = _resolve_constructs_for_check(out)
                    assert satisfies(v, c), (form, pi, out)
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, f"soundness sweep took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# Criterion 2: determinism of full campaigns (byte-identical machine reports)
# ---------------------------------------------------------------------------


def test_acceptance_campaign_determinism():
    with criterion("campaign determinism (seed 7, byte-identical reports)"):
        blobs = []
        for _ in range(2):
            spec = parse_spec(DEMO_SPEC)
            cfg = CampaignConfig(seed=7, max_examples=25, default_timeout_s=5.0)
            results, recipes = run_campaign(spec, cfg, demo_worker())
            report = build_report(spec, cfg, results, recipes)
            blobs.append(write_report(report, "machine"))
        assert blobs[0] == blobs[1]
        assert json.loads(blobs[0].decode())["unique_bugs"] >= 3


# ---------------------------------------------------------------------------
# Criterion 3: rejection-rate oracle
# ---------------------------------------------------------------------------


def test_acceptance_rejection_rate():
    with criterion("rejection-rate oracle (a<b on ints 0..9 ~ 0.45 +/- 0.05)"):
        # Independent oracle: brute-force count over all 100 pairs.
        expected = sum(1 for a in range(10) for b in range(10) if a < b) / 100
        assert expected == 0.45

        args = {"a": Ints(0, 9), "b": Ints(0, 9)}
        ann = FunctionAnnotations()
        ann.args = dict(args)
        from anvil.parser import parse_require

        req = parse_require("a < b", ["a", "b"])
        ctx = GenContext.from_seed(7, boundary_bias=0.0)
        attempts = 10_000
        accepted = 0
        for _ in range(attempts):
            child, ctx = split(ctx)
            binding = generate_binding(args, child)
            if evaluate(req, binding) is True:
                accepted += 1
        rate = accepted / attempts
        assert abs(rate - expected) <= 0.05, rate


# ---------------------------------------------------------------------------
# Criterion 4: shrink optimality on scalars
# ---------------------------------------------------------------------------


def test_acceptance_shrink_optimality():
    with criterion("shrink optimality (20 random thresholds, exact minimum)"):
        rng = random.Random(20260810)
        for _ in range(20):
            lo = rng.randint(-1000, 1000)
            hi = lo + rng.randint(1, 2000)
            k = rng.randint(lo + 1, hi + 1)

            # Analytic minimum of {v in [lo,hi] : v < k} is lo itself.
            def still_fails(v, k=k):
                evals[0] += 1
                return v.value < k

            evals = [0]
            v0 = VInt(rng.randint(lo, k - 1))
            out = shrink(v0, Ints(lo, hi), still_fails, budget=200)
            assert out == VInt(lo), (lo, hi, k, v0, out)
            assert evals[0] <= 200


# ---------------------------------------------------------------------------
# Criterion 5: round-trips
# ---------------------------------------------------------------------------


def test_acceptance_round_trips():
    with criterion("round-trips (10^3 fuzzed specs, 10^4 fuzzed values)"):
        rng = random.Random(99)
        for i in range(1000):
            spec = fuzz_spec(rng)
            rendered = render_spec(spec)
            again = parse_spec(rendered)
            assert again == spec, f"spec fuzz case {i}"
            assert list(again.functions) == list(spec.functions)
        for i in range(10_000):
            v = fuzz_value(rng, wire_normal=True)
            assert structural_eq(decode_value(encode_value(v)), v), f"value case {i}"


# ---------------------------------------------------------------------------
# Criterion 6: health check fires at exactly the consecutive-rejection budget
# ---------------------------------------------------------------------------


def test_acceptance_health_check_budget():
    with criterion("health check (@require(false) -> FilterTooMuch at 50)"):
        spec = parse_spec(
            'subject "m"\nfn "f":\n  @arg(x): ints(min=0, max=9)\n  @require(false)\n'
        )
        worker = MockWorker(targets={"f": lambda a, k, w: None})
        cfg = CampaignConfig(seed=7, max_examples=100)
        assert cfg.max_consecutive_rejections == 50
        with pytest.raises(FilterTooMuch) as ei:
            run_function_campaign(spec.functions["f"], "f", cfg, worker)
        assert len(ei.value.outcomes) == 50
        assert all(o.status == "rejected" for o in ei.value.outcomes)
        # and the campaign driver reports it as a health verdict
        results, _ = run_campaign(spec, cfg, MockWorker(targets={"f": lambda a, k, w: None}))
        assert results[0].health == "filter-too-much"
        assert len(results[0].outcomes) == 50


# ---------------------------------------------------------------------------
# Criterion 7: dedup counts
# ---------------------------------------------------------------------------


def test_acceptance_dedup_counts():
    with criterion("dedup (5 crashes over 2 signatures -> counts {3,2})"):
        a = CrashSignature("TypeError", "f.py:1")
        b = CrashSignature("ValueError", "g.py:2")
        outcomes = [
            CaseOutcome(0, {}, "crash", signature=a),
            CaseOutcome(1, {}, "crash", signature=b),
            CaseOutcome(2, {}, "crash", signature=a),
            CaseOutcome(3, {}, "crash", signature=b),
            CaseOutcome(4, {}, "crash", signature=a),
        ]
        groups = dedup(outcomes)
        assert len(groups) == 2
        assert {s: c for s, (c, _) in groups.items()} == {a: 3, b: 2}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))

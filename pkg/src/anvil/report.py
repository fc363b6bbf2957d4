"""Campaign reports: canonical machine JSON and a human summary.

The machine format is byte-stable across runs with identical inputs, so it
deliberately carries no wall-clock data; elapsed time is shown only in the
human rendering.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .model import Value, VHandle, VDict, VList, VTuple, render_value
from .orchestrator import CampaignConfig, FunctionResult, dedup
from .parser import AnnotationSpec

REPORT_VERSION = 1

Recipes = dict[int, tuple[str, list[Value]]]


@dataclass
class UniqueCrash:
    exc_type: str
    location: str
    count: int
    reproducer: dict[str, str]  # argument name -> literal syntax
    frames: list[str] = field(default_factory=list)


@dataclass
class FunctionReport:
    name: str
    kind: str
    dispatched: int = 0
    rejected: int = 0
    eval_error_rejected: int = 0
    health: str = "ok"
    health_detail: str = ""
    unique_crashes: list[UniqueCrash] = field(default_factory=list)


@dataclass
class CampaignReport:
    subject: str
    seed: int
    config: dict
    functions: list[FunctionReport] = field(default_factory=list)
    unique_bugs: int = 0
    dispatched: int = 0
    rejected: int = 0
    eval_error_rejected: int = 0
    report_version: int = REPORT_VERSION


def render_reproducer_value(v: Value, recipes: Recipes) -> str:
    """Literal syntax with construct recipes substituted for handles."""
    if isinstance(v, VHandle) and v.id in recipes:
        gen, args = recipes[v.id]
        inner = ", ".join(render_reproducer_value(a, recipes) for a in args)
        return f"{gen}({inner})"
    if isinstance(v, VList):
        return "[" + ", ".join(render_reproducer_value(x, recipes) for x in v.items) + "]"
    if isinstance(v, VTuple):
        if len(v.items) == 1:
            return f"({render_reproducer_value(v.items[0], recipes)},)"
        return "(" + ", ".join(render_reproducer_value(x, recipes) for x in v.items) + ")"
    if isinstance(v, VDict):
        inner = ", ".join(
            f"{render_reproducer_value(k, recipes)}: "
            f"{render_reproducer_value(x, recipes)}"
            for k, x in v.pairs
        )
        return "{" + inner + "}"
    return render_value(v)


def build_report(
    spec: AnnotationSpec,
    cfg: CampaignConfig,
    results: list[FunctionResult],
    recipes: Optional[Recipes] = None,
) -> CampaignReport:
    recipes = recipes or {}
    report = CampaignReport(subject=spec.subject, seed=cfg.seed, config=asdict(cfg))

    entries: dict[str, FunctionReport] = {}
    order: list[str] = []

    for res in results:
        fr = FunctionReport(name=res.name, kind=res.kind)
        fr.health = res.health
        fr.health_detail = res.health_detail
        for o in res.outcomes:
            if o.status in ("pass", "crash", "timeout", "construct_crash"):
                fr.dispatched += 1
            elif o.status == "rejected":
                fr.rejected += 1
            elif o.status == "eval_error_rejected":
                fr.eval_error_rejected += 1
        entries[res.name] = fr
        order.append(res.name)

    # Crashes group under the function they are attributed to (constructors
    # and generators own their construct crashes).
    by_attribution: dict[str, list] = {}
    for res in results:
        for o in res.outcomes:
            if o.status in ("crash", "construct_crash"):
                owner = o.attribution or res.name
                by_attribution.setdefault(owner, []).append(o)

    for owner, outcomes in by_attribution.items():
        if owner not in entries:
            kind = "generator" if owner in spec.generators else "function"
            entries[owner] = FunctionReport(name=owner, kind=kind)
            order.append(owner)
        groups = dedup(outcomes)
        for sig, (count, binding) in groups.items():
            reproducer = {
                name: render_reproducer_value(v, recipes)
                for name, v in binding.items()
            }
            frames: list[str] = []
            for o in outcomes:
                if o.signature == sig:
                    frames = _frames_of(o)
                    break
            entries[owner].unique_crashes.append(
                UniqueCrash(
                    exc_type=sig.exc_type,
                    location=sig.location,
                    count=count,
                    reproducer=reproducer,
                    frames=frames,
                )
            )
        entries[owner].unique_crashes.sort(
            key=lambda u: (u.exc_type, u.location)
        )

    for name in order:
        fr = entries[name]
        report.functions.append(fr)
        report.unique_bugs += len(fr.unique_crashes)
        report.dispatched += fr.dispatched
        report.rejected += fr.rejected
        report.eval_error_rejected += fr.eval_error_rejected
    return report


def _frames_of(outcome) -> list[str]:
    frames = getattr(outcome, "frames", None)
    return list(frames) if frames else []


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def report_to_jsonable(r: CampaignReport) -> dict:
    return asdict(r)


def report_from_jsonable(j: dict) -> CampaignReport:
    functions = [
        FunctionReport(
            name=f["name"],
            kind=f["kind"],
            dispatched=f["dispatched"],
            rejected=f["rejected"],
            eval_error_rejected=f["eval_error_rejected"],
            health=f["health"],
            health_detail=f["health_detail"],
            unique_crashes=[UniqueCrash(**u) for u in f["unique_crashes"]],
        )
        for f in j["functions"]
    ]
    return CampaignReport(
        subject=j["subject"],
        seed=j["seed"],
        config=dict(j["config"]),
        functions=functions,
        unique_bugs=j["unique_bugs"],
        dispatched=j["dispatched"],
        rejected=j["rejected"],
        eval_error_rejected=j["eval_error_rejected"],
        report_version=j["report_version"],
    )


def write_report(
    r: CampaignReport, format: str = "machine", elapsed_s: Optional[float] = None
) -> bytes:
    if format == "machine":
        text = json.dumps(
            report_to_jsonable(r),
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return text.encode("utf-8") + b"\n"
    if format != "human":
        raise ValueError(f"unknown report format {format!r}")

    lines = [
        f"subject {r.subject}  (seed {r.seed})",
        "",
        f"{'function':<40} {'kind':<12} {'disp':>5} {'rej':>5} {'evalrej':>7}  health",
    ]
    for f in r.functions:
        health = f.health if f.health != "ok" else "ok"
        lines.append(
            f"{f.name:<40} {f.kind:<12} {f.dispatched:>5} {f.rejected:>5} "
            f"{f.eval_error_rejected:>7}  {health}"
        )
    lines.append("")
    if r.unique_bugs == 0:
        lines.append("no unique crashes found")
    else:
        lines.append(f"{r.unique_bugs} unique crash(es):")
        for f in r.functions:
            for u in f.unique_crashes:
                lines.append("")
                lines.append(
                    f"  [{f.name}] {u.exc_type} at {u.location} (x{u.count})"
                )
                for arg, lit in u.reproducer.items():
                    lines.append(f"      {arg} = {lit}")
                for frame in u.frames:
                    lines.append(f"      | {frame}")
    lines.append("")
    lines.append(
        f"totals: dispatched {r.dispatched}, rejected {r.rejected}, "
        f"precondition errors {r.eval_error_rejected}, unique bugs {r.unique_bugs}"
    )
    if elapsed_s is not None:
        lines.append(f"wall time: {elapsed_s:.2f}s")
    lines.append("")
    return "\n".join(lines).encode("utf-8")

"""Annotation-driven test-input generation with a crashing oracle.

Parse `.an` constraint annotations, generate seeded random inputs that
satisfy them, execute the subject through a line-delimited worker protocol,
and report deduplicated, shrunk crashes.
"""

from .gen import GenContext, NeedsConstruct, generate, shrink, split
from .model import TypeConstraint, Value, satisfies, structural_eq, validate
from .orchestrator import (
    CampaignConfig,
    CaseOutcome,
    CrashSignature,
    FilterTooMuch,
    dedup,
    run_campaign,
)
from .parser import AnnotationSpec, parse_require, parse_spec, render_spec
from .report import CampaignReport, build_report, write_report
from .requires import EvalError, evaluate
from .wire import Request, Response, WorkerSession, decode_value, encode_value

__version__ = "0.1.0"

__all__ = [
    "AnnotationSpec",
    "CampaignConfig",
    "CampaignReport",
    "CaseOutcome",
    "CrashSignature",
    "EvalError",
    "FilterTooMuch",
    "GenContext",
    "NeedsConstruct",
    "Request",
    "Response",
    "TypeConstraint",
    "Value",
    "WorkerSession",
    "build_report",
    "decode_value",
    "dedup",
    "encode_value",
    "evaluate",
    "generate",
    "parse_require",
    "parse_spec",
    "render_spec",
    "run_campaign",
    "satisfies",
    "shrink",
    "split",
    "structural_eq",
    "validate",
    "write_report",
]

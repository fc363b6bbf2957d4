"""Crash signature extraction from subject exceptions."""

from __future__ import annotations

import os
import traceback
from functools import lru_cache
from types import TracebackType
from typing import Optional

MAX_FRAMES = 10


@lru_cache(maxsize=4096)
def _real(path: str) -> str:
    # realpath stats every component; crash paths repeat, so cache hard.
    return os.path.realpath(path)


@lru_cache(maxsize=4096)
def _under(path: str, root: str) -> bool:
    try:
        rel = os.path.relpath(_real(path), _real(root))
    except ValueError:
        return False
    return not rel.startswith("..")


@lru_cache(maxsize=4096)
def _render(path: str, root: str) -> str:
    if _under(path, root):
        return os.path.relpath(_real(path), _real(root))
    return os.path.basename(path)


def classify_exception(
    exc: BaseException, subject_root: str, tb: Optional[TracebackType] = None
) -> tuple[str, str, list[str]]:
    """(exc_type, crash location, head of the stack).

    The location is the innermost frame inside the subject tree, so a crash
    raised deep in a library is still pinned to the subject line that led
    there; with no subject frame at all, the innermost frame wins.
    """
    tb = tb if tb is not None else exc.__traceback__
    entries = traceback.extract_tb(tb)
    exc_type = type(exc).__name__
    if not entries:
        return exc_type, "<unknown>:0", []
    subject_frames = [f for f in entries if _under(f.filename or "", subject_root)]
    chosen = subject_frames[-1] if subject_frames else entries[-1]
    location = f"{_render(chosen.filename, subject_root)}:{chosen.lineno}"
    frames = [
        f"{_render(f.filename, subject_root)}:{f.lineno}:{f.name}"
        for f in entries[:MAX_FRAMES]
    ]
    return exc_type, location, frames

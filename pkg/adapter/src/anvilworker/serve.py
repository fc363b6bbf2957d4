"""Worker request loop: one JSON object per line on stdio, protocol v1.

The real stdout fd is reserved for protocol lines before the subject ever
runs; fd 1 is re-pointed at stderr so stray prints from subject code cannot
corrupt the stream. Subject exceptions never kill the process: they come
back as crash responses and the loop keeps serving.
"""

from __future__ import annotations

import importlib
import io
import json
import os
import runpy
import signal
import sys
from typing import Optional

from .classify import classify_exception
from .codec import WireValueError, decode, dumps, encode

PROTOCOL_VERSION = 1


class SoftTimeout(BaseException):
    """Raised by the alarm handler when a request exceeds its timeout."""


def _trim_worker_frames(tb):
    """Drop this file's own frames from the head of a subject traceback."""
    here = os.path.abspath(__file__)
    t = tb
    while t is not None and os.path.abspath(t.tb_frame.f_code.co_filename) == here:
        t = t.tb_next
    return t if t is not None else tb


class Worker:
    def __init__(self, subject_root: str, module_id: str, proto_out: io.RawIOBase):
        self.subject_root = subject_root
        self.module_id = module_id
        self.out = proto_out
        self.handles: dict[int, object] = {}
        self.next_handle = 0
        self._module = None
        self._timer_ok = hasattr(signal, "setitimer") and hasattr(signal, "SIGALRM")

    # -- plumbing -------------------------------------------------------------

    def send(self, obj: dict) -> None:
        self.out.write(dumps(obj) + b"\n")

    def module(self):
        if self._module is None:
            self._module = importlib.import_module(self.module_id)
        return self._module

    def resolve(self, target: str):
        obj = self.module()
        for part in target.split("."):
            obj = getattr(obj, part)
        return obj

    def store(self, obj: object) -> int:
        self.next_handle += 1
        self.handles[self.next_handle] = obj
        return self.next_handle

    def _handle_id_of(self, obj: object) -> Optional[int]:
        for hid, known in self.handles.items():
            if known is obj:
                return hid
        return None

    # -- timeouts --------------------------------------------------------------

    def _run_guarded(self, fn, timeout_ms: Optional[int]):
        """Run subject code under the soft per-request timer."""
        if not (self._timer_ok and timeout_ms):
            return fn()

        def on_alarm(signum, frame):
            raise SoftTimeout()

        old = signal.signal(signal.SIGALRM, on_alarm)
        signal.setitimer(signal.ITIMER_REAL, timeout_ms / 1000.0)
        try:
            return fn()
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0.0)
            signal.signal(signal.SIGALRM, old)

    # -- request handling --------------------------------------------------------

    def crash_response(self, rid: int, exc: BaseException) -> dict:
        exc_type, location, frames = classify_exception(
            exc, self.subject_root, tb=_trim_worker_frames(exc.__traceback__)
        )
        return {
            "id": rid,
            "status": "crash",
            "exc_type": exc_type,
            "location": location,
            "message": str(exc)[:500],
            "frames": frames,
        }

    def handle(self, req: dict) -> bool:
        """Serve one request; False when the loop should stop."""
        rid = req.get("id")
        op = req.get("op")
        if not isinstance(rid, int) or not isinstance(op, str):
            self.send({"id": -1, "status": "invalid", "message": "bad envelope"})
            return True
        if op == "hello":
            self.send({"id": rid, "status": "ok", "value": PROTOCOL_VERSION})
            return True
        if op == "reset":
            self.handles.clear()
            self.send({"id": rid, "status": "ok"})
            return True
        if op == "shutdown":
            self.send({"id": rid, "status": "ok"})
            return False
        if op in ("call", "construct"):
            self._call(req, rid, store=op == "construct")
            return True
        if op == "module_test":
            self._module_test(req, rid)
            return True
        self.send({"id": rid, "status": "invalid", "message": f"unknown op {op!r}"})
        return True

    def _call(self, req: dict, rid: int, store: bool) -> None:
        target = req.get("target")
        if not isinstance(target, str) or not target:
            self.send({"id": rid, "status": "invalid", "message": "missing target"})
            return
        try:
            args = [decode(x, self.handles) for x in req.get("args", [])]
            kwargs = {}
            if req.get("kwargs") is not None:
                kw = decode(req["kwargs"], self.handles)
                if not isinstance(kw, dict) or not all(
                    isinstance(k, str) for k in kw
                ):
                    raise WireValueError("kwargs keys must be strings")
                kwargs = kw
        except WireValueError as e:
            self.send({"id": rid, "status": "invalid", "message": str(e)})
            return
        try:
            mod = self.module()
        except ModuleNotFoundError as e:
            if e.name == self.module_id:
                self.send(
                    {"id": rid, "status": "invalid",
                     "message": f"cannot import subject {self.module_id!r}"}
                )
                return
            # the subject imported something missing: a finding, not a typo
            self.send(self.crash_response(rid, e))
            return
        except BaseException as e:
            # the subject module crashed while importing
            self.send(self.crash_response(rid, e))
            return
        try:
            fn = mod
            for part in target.split("."):
                fn = getattr(fn, part)
        except AttributeError:
            self.send(
                {"id": rid, "status": "invalid", "message": f"unknown target {target!r}"}
            )
            return
        try:
            result = self._run_guarded(lambda: fn(*args, **kwargs), req.get("timeout_ms"))
        except SoftTimeout:
            self.send({"id": rid, "status": "timeout", "message": "soft timer expired"})
            return
        except BaseException as e:
            self.send(self.crash_response(rid, e))
            return
        if store:
            hid = self.store(result)
            self.send({"id": rid, "status": "ok", "value": {"$h": hid}})
            return
        resp = {"id": rid, "status": "ok"}
        try:
            resp["value"] = encode(result, self._handle_id_of)
        except WireValueError:
            pass  # crashing oracle: return values are optional
        self.send(resp)

    def _module_test(self, req: dict, rid: int) -> None:
        target = req.get("target")
        if not isinstance(target, str) or not target:
            self.send({"id": rid, "status": "invalid", "message": "missing target"})
            return

        def run():
            runpy.run_module(target, run_name="__main__", alter_sys=False)

        try:
            self._run_guarded(run, req.get("timeout_ms"))
        except SoftTimeout:
            self.send({"id": rid, "status": "timeout", "message": "soft timer expired"})
            return
        except ImportError as e:
            self.send({"id": rid, "status": "invalid", "message": str(e)})
            return
        except BaseException as e:
            self.send(self.crash_response(rid, e))
            return
        self.send({"id": rid, "status": "ok"})


def serve(subject_root: str, module_id: str) -> int:
    """Run the request loop until shutdown or stdin EOF."""
    # Reserve the protocol channel, then point fd 1 at stderr so subject
    # prints (including C-level writes) go to the campaign log instead.
    proto_fd = os.dup(1)
    os.dup2(2, 1)
    proto_out = os.fdopen(proto_fd, "wb", buffering=0)
    sys.stdout = sys.stderr

    sys.path.insert(0, os.path.abspath(subject_root))
    worker = Worker(os.path.abspath(subject_root), module_id, proto_out)
    stdin = sys.stdin.buffer
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            worker.send({"id": -1, "status": "invalid", "message": f"bad line: {e}"})
            continue
        if not worker.handle(req):
            break
    return 0

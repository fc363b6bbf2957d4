"""Wire protocol v1: line-delimited JSON requests/responses over stdio.

One JSON object per line in each direction; request ids are strictly
increasing and every request gets exactly one response with the same id.
Values use a canonical tagged encoding (see docs/wire_v1.md for byte-level
examples). The session layer owns the worker subprocess lifecycle: hard
timeouts, death detection and respawn. A dying worker never aborts a
campaign, it just yields a synthesized response.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

from .model import (
    DType,
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
    structural_eq,
)

PROTOCOL_VERSION = 1

REQUEST_OPS = ("hello", "call", "construct", "module_test", "reset", "shutdown")
RESPONSE_STATUSES = ("ok", "crash", "timeout", "invalid")

TIMEOUT_GRACE_S = 2.0


class DecodeError(Exception):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class ProtocolError(Exception):
    """The worker spoke out of turn: bad handshake, id mismatch, bad line."""


# ---------------------------------------------------------------------------
# Value codec
# ---------------------------------------------------------------------------


def value_to_jsonable(v: Value) -> object:
    if isinstance(v, VNone):
        return None
    if isinstance(v, VBool):
        return v.value
    if isinstance(v, VInt):
        return v.value
    if isinstance(v, VFloat):
        x = v.value
        if math.isnan(x):
            return {"$f": "nan"}
        if math.isinf(x):
            return {"$f": "+inf" if x > 0 else "-inf"}
        return x
    if isinstance(v, VStr):
        return v.value
    if isinstance(v, VList):
        return [value_to_jsonable(x) for x in v.items]
    if isinstance(v, VTuple):
        return {"$t": [value_to_jsonable(x) for x in v.items]}
    if isinstance(v, VDict):
        return {
            "$d": [
                [value_to_jsonable(k), value_to_jsonable(x)] for k, x in v.pairs
            ]
        }
    if isinstance(v, VArray):
        return {
            "$nd": {
                "dtype": v.dtype.value,
                "shape": list(v.shape),
                "data": [value_to_jsonable(x) for x in v.data],
            }
        }
    if isinstance(v, VHandle):
        return {"$h": v.id}
    raise TypeError(f"not a Value: {v!r}")


def _expect_scalar(j: object, dtype: DType) -> Value:
    v = value_from_jsonable(j)
    if dtype.is_bool:
        if not isinstance(v, VBool):
            raise DecodeError(0, f"array element {j!r} is not bool")
        return v
    if dtype.is_float:
        if not isinstance(v, VFloat):
            raise DecodeError(0, f"array element {j!r} is not float")
        return v
    if not isinstance(v, VInt):
        raise DecodeError(0, f"array element {j!r} is not an integer")
    lo, hi = dtype.int_bounds()
    if not (lo <= v.value <= hi):
        raise DecodeError(0, f"array element {v.value} outside {dtype.value}")
    return v


def value_from_jsonable(j: object) -> Value:
    if j is None:
        return VNone()
    if isinstance(j, bool):
        return VBool(j)
    if isinstance(j, int):
        if not (INT64_MIN <= j <= INT64_MAX):
            raise DecodeError(0, "integer out of 64-bit range")
        return VInt(j)
    if isinstance(j, float):
        return VFloat(j)
    if isinstance(j, str):
        return VStr(j)
    if isinstance(j, list):
        return VList(tuple(value_from_jsonable(x) for x in j))
    if isinstance(j, dict):
        if len(j) != 1:
            raise DecodeError(0, "value object must have exactly one tag key")
        tag, body = next(iter(j.items()))
        if tag == "$t":
            if not isinstance(body, list):
                raise DecodeError(0, "$t body must be an array")
            return VTuple(tuple(value_from_jsonable(x) for x in body))
        if tag == "$d":
            if not isinstance(body, list):
                raise DecodeError(0, "$d body must be an array of pairs")
            pairs = []
            for entry in body:
                if not (isinstance(entry, list) and len(entry) == 2):
                    raise DecodeError(0, "$d entries must be [key, value]")
                pairs.append(
                    (value_from_jsonable(entry[0]), value_from_jsonable(entry[1]))
                )
            for i, (k, _) in enumerate(pairs):
                if any(structural_eq(k, kk) for kk, _ in pairs[:i]):
                    raise DecodeError(0, "duplicate dict key")
            return VDict(tuple(pairs))
        if tag == "$f":
            if body == "nan":
                return VFloat(math.nan)
            if body == "+inf":
                return VFloat(math.inf)
            if body == "-inf":
                return VFloat(-math.inf)
            raise DecodeError(0, f"unknown $f token {body!r}")
        if tag == "$nd":
            if not isinstance(body, dict):
                raise DecodeError(0, "$nd body must be an object")
            try:
                dtype = DType(body["dtype"])
            except (KeyError, ValueError):
                raise DecodeError(0, "bad or missing ndarray dtype") from None
            shape = body.get("shape")
            data = body.get("data")
            if not (
                isinstance(shape, list)
                and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in shape)
            ):
                raise DecodeError(0, "ndarray shape must be a list of naturals")
            if not isinstance(data, list):
                raise DecodeError(0, "ndarray data must be an array")
            if math.prod(shape) != len(data):
                raise DecodeError(0, "ndarray shape/data length mismatch")
            return VArray(
                dtype, tuple(shape), tuple(_expect_scalar(x, dtype) for x in data)
            )
        if tag == "$h":
            if not isinstance(body, int) or isinstance(body, bool) or body < 0:
                raise DecodeError(0, "$h body must be a natural")
            return VHandle(body)
        raise DecodeError(0, f"unknown tag {tag!r}")
    raise DecodeError(0, f"cannot decode {type(j).__name__}")


def _dumps(obj: object) -> bytes:
    return json.dumps(
        obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def encode_value(v: Value) -> bytes:
    """Canonical single-line encoding; shortest round-trip float decimals."""
    return _dumps(value_to_jsonable(v))


def decode_value(data: bytes) -> Value:
    try:
        j = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise DecodeError(e.start, "invalid UTF-8") from None
    except json.JSONDecodeError as e:
        raise DecodeError(e.pos, e.msg) from None
    return value_from_jsonable(j)


# ---------------------------------------------------------------------------
# Requests and responses
# ---------------------------------------------------------------------------


@dataclass
class Request:
    id: int
    op: str
    target: Optional[str] = None
    args: list[Value] = field(default_factory=list)
    kwargs: Optional[VDict] = None
    timeout_ms: Optional[int] = None

    def to_jsonable(self) -> dict:
        out: dict = {"id": self.id, "op": self.op}
        if self.target is not None:
            out["target"] = self.target
        if self.args:
            out["args"] = [value_to_jsonable(v) for v in self.args]
        if self.kwargs is not None:
            out["kwargs"] = value_to_jsonable(self.kwargs)
        if self.timeout_ms is not None:
            out["timeout_ms"] = self.timeout_ms
        return out


@dataclass
class Response:
    id: int
    status: str
    value: Optional[Value] = None
    exc_type: Optional[str] = None
    message: Optional[str] = None
    location: Optional[str] = None
    frames: Optional[list[str]] = None


def encode_request(req: Request) -> bytes:
    if req.op not in REQUEST_OPS:
        raise ValueError(f"unknown op {req.op!r}")
    if req.op in ("call", "construct") and not req.target:
        raise ValueError(f"{req.op} requires a target")
    return _dumps(req.to_jsonable()) + b"\n"


def decode_request(line: bytes) -> Request:
    """Inverse of encode_request; workers use this to read their stdin."""
    try:
        j = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DecodeError(getattr(e, "pos", 0), f"malformed request: {e}") from None
    if not isinstance(j, dict):
        raise DecodeError(0, "request is not an object")
    rid = j.get("id")
    op = j.get("op")
    if not isinstance(rid, int) or op not in REQUEST_OPS:
        raise DecodeError(0, f"bad request envelope: {j!r}")
    target = j.get("target")
    if target is not None and not isinstance(target, str):
        raise DecodeError(0, "target must be a string")
    args = [value_from_jsonable(x) for x in j.get("args", [])]
    kwargs = None
    if j.get("kwargs") is not None:
        kw = value_from_jsonable(j["kwargs"])
        if not isinstance(kw, VDict):
            raise DecodeError(0, "kwargs must be a dict value")
        kwargs = kw
    timeout_ms = j.get("timeout_ms")
    if timeout_ms is not None and (
        not isinstance(timeout_ms, int) or isinstance(timeout_ms, bool)
    ):
        raise DecodeError(0, "timeout_ms must be an integer")
    return Request(
        id=rid, op=op, target=target, args=args, kwargs=kwargs, timeout_ms=timeout_ms
    )


def encode_response(resp: Response) -> bytes:
    out: dict = {"id": resp.id, "status": resp.status}
    if resp.value is not None:
        out["value"] = value_to_jsonable(resp.value)
    if resp.exc_type is not None:
        out["exc_type"] = resp.exc_type
    if resp.message is not None:
        out["message"] = resp.message
    if resp.location is not None:
        out["location"] = resp.location
    if resp.frames is not None:
        out["frames"] = resp.frames
    return _dumps(out) + b"\n"


def decode_response(line: bytes) -> Response:
    try:
        j = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"malformed response line: {e}") from None
    if not isinstance(j, dict):
        raise ProtocolError("response is not an object")
    rid = j.get("id")
    status = j.get("status")
    if not isinstance(rid, int) or status not in RESPONSE_STATUSES:
        raise ProtocolError(f"bad response envelope: {j!r}")
    value = None
    if "value" in j and j["value"] is not None:
        try:
            value = value_from_jsonable(j["value"])
        except DecodeError as e:
            raise ProtocolError(f"bad response value: {e}") from None
    frames = j.get("frames")
    if frames is not None and not (
        isinstance(frames, list) and all(isinstance(f, str) for f in frames)
    ):
        raise ProtocolError("frames must be a list of strings")
    resp = Response(
        id=rid,
        status=status,
        value=value,
        exc_type=j.get("exc_type"),
        message=j.get("message"),
        location=j.get("location"),
        frames=frames,
    )
    if status == "crash" and not (resp.exc_type and resp.location):
        raise ProtocolError("crash response missing exc_type/location")
    return resp


# ---------------------------------------------------------------------------
# Worker session
# ---------------------------------------------------------------------------

_EOF = object()


class WorkerSession:
    """Owns one worker subprocess; not shareable across threads."""

    def __init__(
        self,
        cmd: Sequence[str],
        stderr: Optional[IO[bytes]] = None,
        start_timeout_s: float = 60.0,
    ):
        self.cmd = list(cmd)
        self.stderr = stderr
        self.start_timeout_s = start_timeout_s
        self._proc: Optional[subprocess.Popen] = None
        self._lines: "queue.Queue[object]" = queue.Queue()
        self._next_id = 0

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._spawn()
        self._handshake()

    def _spawn(self) -> None:
        self._lines = queue.Queue()
        try:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self.stderr,
                bufsize=0,
            )
        except OSError as e:
            raise ProtocolError(f"cannot start worker {self.cmd!r}: {e}") from None
        t = threading.Thread(
            target=self._pump, args=(self._proc.stdout, self._lines), daemon=True
        )
        t.start()

    @staticmethod
    def _pump(stream: IO[bytes], out: "queue.Queue[object]") -> None:
        for line in stream:
            out.put(line)
        out.put(_EOF)

    def _handshake(self) -> None:
        req = Request(id=self.next_id(), op="hello")
        resp = self._exchange(req, self.start_timeout_s)
        if resp is None:
            raise ProtocolError("worker did not answer hello")
        if resp.status != "ok" or not structural_eq(
            resp.value or VNone(), VInt(PROTOCOL_VERSION)
        ):
            raise ProtocolError(f"bad hello response: {resp!r}")

    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def next_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def kill(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except Exception:
                pass
        self._proc = None

    def close(self) -> None:
        if self.alive():
            try:
                req = Request(id=self.next_id(), op="shutdown")
                assert self._proc is not None and self._proc.stdin is not None
                self._proc.stdin.write(encode_request(req))
                self._proc.stdin.flush()
                self._proc.wait(timeout=2)
            except Exception:
                pass
        self.kill()

    def _respawn(self) -> None:
        self.kill()
        self._spawn()
        self._handshake()
        # Replay reset so the worker starts from a clean handle table.
        reset = Request(id=self.next_id(), op="reset")
        resp = self._exchange(reset, self.start_timeout_s)
        if resp is None or resp.status != "ok":
            raise ProtocolError("worker failed reset replay after respawn")

    # -- request/response ----------------------------------------------------

    def _exchange(self, req: Request, deadline_s: float) -> Optional[Response]:
        """Send one request and wait for its line; None means worker died."""
        assert self._proc is not None and self._proc.stdin is not None
        data = encode_request(req)
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return None
        deadline = time.monotonic() + deadline_s
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise _DeadlineExceeded()
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                raise _DeadlineExceeded() from None
            if line is _EOF:
                return None
            resp = decode_response(line)  # ProtocolError on malformed lines
            if resp.id != req.id:
                raise ProtocolError(
                    f"response id {resp.id} does not match request id {req.id}"
                )
            return resp

    def call(self, req: Request) -> Response:
        """Exactly one response per request, synthesized if the worker fails."""
        if not self.alive():
            self._respawn()
        if req.timeout_ms is not None:
            deadline_s = req.timeout_ms / 1000.0 + TIMEOUT_GRACE_S
        else:
            deadline_s = self.start_timeout_s
        try:
            resp = self._exchange(req, deadline_s)
        except _DeadlineExceeded:
            self.kill()
            self._respawn()
            return Response(
                id=req.id,
                status="timeout",
                message=f"no response within {deadline_s:.1f}s; worker killed",
            )
        if resp is None:
            self._respawn()
            return Response(
                id=req.id,
                status="crash",
                exc_type="WorkerDied",
                location="<process>",
                message="worker process died mid-request",
                frames=[],
            )
        return resp


class _DeadlineExceeded(Exception):
    pass


def session_call(worker: WorkerSession, req: Request) -> Response:
    """Dispatch one request on a started session."""
    return worker.call(req)

"""Wire protocol and client for model-backed queries.

All model access goes through newline-delimited JSON over a sidecar
process's stdin/stdout: one request object per line, one response per line,
matched by ``id``.  Three operations are defined (plus a ``hello``
handshake):

* ``attention``  -- subword-level self-attention for the requested layers,
  with the subword-to-word alignment needed to reduce to word level.
* ``mlm_topk``   -- top-k single-token replacements for one masked word,
  with log-probabilities, sorted descending.
* ``upos``       -- universal POS tags aligned to the words.

Attention responses are validated at this boundary: every subword row must
sum to 1 within ``ROW_SUM_TOL``.
"""

from __future__ import annotations

import json
import subprocess
import threading
import time
from dataclasses import dataclass
from queue import Empty, Queue

import numpy as np

OP_ATTENTION = "attention"
OP_MLM_TOPK = "mlm_topk"
OP_UPOS = "upos"
OP_HELLO = "hello"

ROW_SUM_TOL = 1e-4
DEFAULT_TIMEOUT = 120.0


class ProviderError(Exception):
    """Base class for everything that can go wrong talking to a backend."""


class TransportError(ProviderError):
    """The backend process died, closed its pipes, or never answered."""


class ProviderTimeout(TransportError):
    pass


class BackendError(ProviderError):
    """The backend answered with an error payload."""


class ProtocolError(ProviderError):
    """The backend answered with a payload violating the protocol contract."""


def encode(obj: dict) -> str:
    """Canonical one-line JSON encoding (sorted keys, compact separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def decode(line: str) -> dict:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ProtocolError(f"expected a JSON object, got {type(obj).__name__}")
    return obj


@dataclass(frozen=True)
class ModelRequest:
    id: int
    op: str
    words: tuple[str, ...] = ()
    layers: tuple[int, ...] = ()
    position: int | None = None
    k: int | None = None

    def __post_init__(self):
        if self.op not in (OP_ATTENTION, OP_MLM_TOPK, OP_UPOS, OP_HELLO):
            raise ValueError(f"unknown op {self.op!r}")
        if self.op == OP_ATTENTION and not self.layers:
            raise ValueError("attention request needs a non-empty layer list")
        if self.op == OP_MLM_TOPK:
            if self.position is None or not 0 <= self.position < len(self.words):
                raise ValueError("mlm_topk position out of range")
            if self.k is None or self.k < 1:
                raise ValueError("mlm_topk needs k >= 1")

    def to_wire(self) -> dict:
        msg: dict = {"id": self.id, "op": self.op}
        if self.op != OP_HELLO:
            msg["words"] = list(self.words)
        if self.op == OP_ATTENTION:
            msg["layers"] = list(self.layers)
        if self.op == OP_MLM_TOPK:
            msg["position"] = self.position
            msg["k"] = self.k
        return msg

    @classmethod
    def from_wire(cls, msg: dict) -> "ModelRequest":
        return cls(
            id=msg["id"],
            op=msg["op"],
            words=tuple(msg.get("words", ())),
            layers=tuple(msg.get("layers", ())),
            position=msg.get("position"),
            k=msg.get("k"),
        )


@dataclass
class ModelResponse:
    id: int
    subword_forms: list[str] | None = None
    word_ids: list[int | None] | None = None
    attention: dict[int, np.ndarray] | None = None  # layer -> (heads, T, T)
    candidates: list[tuple[str, float]] | None = None
    upos: list[str] | None = None
    model: str | None = None
    model_layers: int | None = None
    model_heads: int | None = None

    def to_wire(self) -> dict:
        msg: dict = {"id": self.id}
        if self.subword_forms is not None:
            msg["subword_forms"] = list(self.subword_forms)
        if self.word_ids is not None:
            msg["word_ids"] = list(self.word_ids)
        if self.attention is not None:
            msg["attention"] = {
                str(layer): np.asarray(tensor, dtype=float).tolist()
                for layer, tensor in self.attention.items()
            }
        if self.candidates is not None:
            msg["candidates"] = [[w, float(p)] for w, p in self.candidates]
        if self.upos is not None:
            msg["upos"] = list(self.upos)
        if self.model is not None:
            msg["model"] = self.model
            msg["layers"] = self.model_layers
            msg["heads"] = self.model_heads
        return msg

    @classmethod
    def from_wire(cls, msg: dict) -> "ModelResponse":
        attention = None
        if "attention" in msg:
            attention = {
                int(layer): np.asarray(tensor, dtype=float)
                for layer, tensor in msg["attention"].items()
            }
        candidates = None
        if "candidates" in msg:
            candidates = [(str(w), float(p)) for w, p in msg["candidates"]]
        return cls(
            id=msg["id"],
            subword_forms=msg.get("subword_forms"),
            word_ids=msg.get("word_ids"),
            attention=attention,
            candidates=candidates,
            upos=msg.get("upos"),
            model=msg.get("model"),
            model_layers=msg.get("layers") if "model" in msg else None,
            model_heads=msg.get("heads") if "model" in msg else None,
        )

    def validate_for(self, req: ModelRequest) -> "ModelResponse":
        """Enforce the response contract for ``req``; raise ProtocolError otherwise."""
        if self.id != req.id:
            raise ProtocolError(f"response id {self.id} does not match request {req.id}")
        if req.op == OP_ATTENTION:
            if self.subword_forms is None or self.word_ids is None or self.attention is None:
                raise ProtocolError("attention response missing payload fields")
            t = len(self.subword_forms)
            if len(self.word_ids) != t:
                raise ProtocolError("word_ids and subword_forms lengths differ")
            for layer in req.layers:
                if layer not in self.attention:
                    raise ProtocolError(f"attention response missing layer {layer}")
                tensor = self.attention[layer]
                if tensor.ndim != 3 or tensor.shape[1:] != (t, t):
                    raise ProtocolError(f"layer {layer}: bad tensor shape {tensor.shape}")
                if not np.isfinite(tensor).all() or (tensor < 0).any():
                    raise ProtocolError(f"layer {layer}: non-finite or negative attention")
                sums = tensor.sum(axis=-1)
                if np.abs(sums - 1.0).max() > ROW_SUM_TOL:
                    raise ProtocolError(
                        f"layer {layer}: attention row sums deviate from 1 by "
                        f"{np.abs(sums - 1.0).max():.2e} (> {ROW_SUM_TOL})")
        elif req.op == OP_MLM_TOPK:
            if self.candidates is None:
                raise ProtocolError("mlm_topk response missing candidates")
            if req.k is not None and len(self.candidates) > req.k:
                raise ProtocolError(f"{len(self.candidates)} candidates exceed k={req.k}")
            probs = [p for _, p in self.candidates]
            if any(probs[i] < probs[i + 1] for i in range(len(probs) - 1)):
                raise ProtocolError("candidates not sorted by descending log-probability")
        elif req.op == OP_UPOS:
            if self.upos is None or len(self.upos) != len(req.words):
                raise ProtocolError("upos response not aligned to words")
        elif req.op == OP_HELLO:
            if self.model is None:
                raise ProtocolError("hello response missing model info")
        return self


def parse_response(line: str) -> ModelResponse:
    msg = decode(line)
    if "error" in msg:
        raise BackendError(str(msg["error"]))
    return ModelResponse.from_wire(msg)


@dataclass(frozen=True)
class HelloInfo:
    model: str
    layers: int
    heads: int


class SidecarClient:
    """Talk to a sidecar process over stdio.

    Writes are serialized and responses demultiplexed by id, so several
    worker threads may call :meth:`request` concurrently through one client.
    """

    def __init__(self, command: list[str], timeout: float = DEFAULT_TIMEOUT):
        self._timeout = timeout
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise TransportError(f"could not start sidecar {command!r}: {exc}") from exc
        self._next_id = 1
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._pending: dict[int, Queue] = {}
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        assert self._proc.stdout is not None
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = decode(line)
                except (json.JSONDecodeError, ProtocolError):
                    continue
                msg_id = msg.get("id")
                with self._lock:
                    queue = self._pending.get(msg_id)
                if queue is not None:
                    queue.put(msg)
        finally:
            self._closed.set()

    def _next_request_id(self) -> int:
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            return rid

    def _exchange(self, msg: dict, timeout: float) -> dict:
        rid = msg["id"]
        queue: Queue = Queue(maxsize=1)
        with self._lock:
            self._pending[rid] = queue
        try:
            line = encode(msg)
            try:
                with self._write_lock:
                    assert self._proc.stdin is not None
                    self._proc.stdin.write(line + "\n")
                    self._proc.stdin.flush()
            except (BrokenPipeError, ValueError, OSError) as exc:
                raise TransportError(f"sidecar pipe closed while sending: {exc}") from exc
            deadline = time.monotonic() + timeout
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ProviderTimeout(
                        f"no response for request {rid} within {timeout:.0f}s")
                try:
                    return queue.get(timeout=min(0.2, remaining))
                except Empty:
                    if self._closed.is_set() or self._proc.poll() is not None:
                        raise TransportError(
                            f"sidecar exited (code {self._proc.poll()}) before answering")
        finally:
            with self._lock:
                self._pending.pop(rid, None)

    def request(self, req: ModelRequest, timeout: float | None = None) -> ModelResponse:
        msg = self._exchange(req.to_wire(), timeout or self._timeout)
        if "error" in msg:
            raise BackendError(str(msg["error"]))
        return ModelResponse.from_wire(msg).validate_for(req)

    def hello(self, timeout: float | None = None) -> HelloInfo:
        req = ModelRequest(id=self._next_request_id(), op=OP_HELLO)
        resp = self.request(req, timeout=timeout)
        return HelloInfo(model=resp.model, layers=resp.model_layers,
                         heads=resp.model_heads)

    def new_request(self, op: str, **kwargs) -> ModelRequest:
        return ModelRequest(id=self._next_request_id(), op=op, **kwargs)

    def close(self):
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
                self._proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

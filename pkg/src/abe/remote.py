"""Wire protocol "abe/1": remote model adapters and the toy reference server.

Frames are newline-delimited UTF-8 JSON documents, one per line, with no
embedded newlines. Every request carries a client-chosen id echoed in the
response, and exactly one request is in flight per connection. Responses
are serialized canonically (sorted keys, compact separators, raw UTF-8)
so independent implementations produce byte-identical transcripts.
Log-probabilities are base e; log(0) rides as JSON null since -infinity
has no decimal form. Transports: a spawned child process over stdio, or a
TCP socket -- both carry identical frames.

The full grammar lives in docs/wire-protocol.md.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import socket
import socketserver
import subprocess
import sys
import threading
from typing import Any, Sequence

import numpy as np

from .errors import AdapterError, ProtocolError
from .model import ModelAdapter
from .vocab import Vocabulary, vocabulary_from_dict, vocabulary_to_dict

PROTOCOL_VERSION = "abe/1"
DEFAULT_TIMEOUT = 60.0


def encode_frame(doc: dict) -> bytes:
    return (
        json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        + "\n"
    ).encode("utf-8")


def logprobs_to_wire(values: Sequence[float]) -> list[float | None]:
    return [float(v) if np.isfinite(v) else None for v in values]


def logprobs_from_wire(values: Sequence[float | None]) -> list[float]:
    return [float("-inf") if v is None else float(v) for v in values]


class _LineChannel:
    """Buffered line reader/writer over a raw fd pair, with read timeouts."""

    def __init__(self, read_fd: int, write, closer=None) -> None:
        self._read_fd = read_fd
        self._write = write
        self._closer = closer
        self._buf = bytearray()

    def send(self, data: bytes) -> None:
        self._write(data)

    def recv_line(self, timeout: float | None) -> bytes | None:
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line = bytes(self._buf[:nl])
                del self._buf[: nl + 1]
                return line
            if timeout is not None:
                ready, _, _ = select.select([self._read_fd], [], [], timeout)
                if not ready:
                    raise TimeoutError(f"no response within {timeout}s")
            chunk = os.read(self._read_fd, 65536)
            if not chunk:
                return None  # peer closed
            self._buf.extend(chunk)

    def close(self) -> None:
        if self._closer:
            self._closer()


def _spawn_channel(command: str) -> _LineChannel:
    proc = subprocess.Popen(
        shlex.split(command),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
    )
    assert proc.stdin is not None and proc.stdout is not None

    def write(data: bytes) -> None:
        proc.stdin.write(data)
        proc.stdin.flush()

    def close() -> None:
        try:
            proc.stdin.close()
        except OSError:
            pass
        proc.terminate()
        proc.wait(timeout=10)

    return _LineChannel(proc.stdout.fileno(), write, close)


def _tcp_channel(host: str, port: int) -> _LineChannel:
    sock = socket.create_connection((host, port))

    def write(data: bytes) -> None:
        sock.sendall(data)

    return _LineChannel(sock.fileno(), write, sock.close)


def open_channel(endpoint: str) -> _LineChannel:
    """Endpoint forms: "spawn:<command>" or "tcp:<host>:<port>"."""
    if endpoint.startswith("spawn:"):
        return _spawn_channel(endpoint[len("spawn:") :])
    if endpoint.startswith("tcp:"):
        host, _, port = endpoint[len("tcp:") :].rpartition(":")
        return _tcp_channel(host or "127.0.0.1", int(port))
    raise ValueError(f"unknown endpoint {endpoint!r}; use spawn:... or tcp:host:port")


class RemoteModel(ModelAdapter):
    """Presents any conforming protocol peer as a model adapter.

    One session is opened per distinct conditioning value; requests are
    strictly serialized per connection.
    """

    def __init__(self, channel: _LineChannel, endpoint: str, timeout: float) -> None:
        self._channel = channel
        self._endpoint = endpoint
        self._timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._sessions: dict[str, str] = {}
        hello = self._request({"kind": "hello", "version": PROTOCOL_VERSION})
        if hello.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                self.identity, f"server speaks {hello.get('version')!r}, not {PROTOCOL_VERSION}"
            )
        self._model_name = hello.get("model", "?")
        self._vocab = vocabulary_from_dict(self._request({"kind": "vocab"})["vocab"])

    @classmethod
    def connect(cls, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> "RemoteModel":
        return cls(open_channel(endpoint), endpoint, timeout)

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def identity(self) -> str:
        return f"remote:{self._endpoint}"

    def _request(self, doc: dict) -> dict:
        with self._lock:
            self._next_id += 1
            rid = self._next_id
            doc = dict(doc, id=rid)
            try:
                self._channel.send(encode_frame(doc))
                line = self._channel.recv_line(self._timeout)
            except (OSError, TimeoutError) as exc:
                raise ProtocolError(self.identity, str(exc)) from exc
            if line is None:
                raise ProtocolError(self.identity, "connection closed by server")
            try:
                resp = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(self.identity, f"malformed frame {line[:80]!r}") from exc
            if resp.get("id") != rid:
                raise ProtocolError(
                    self.identity, f"response id {resp.get('id')!r} for request {rid}"
                )
            if resp.get("kind") == "error":
                raise AdapterError(
                    self.identity, f"{resp.get('code')}: {resp.get('error')}"
                )
            return resp

    def _session_for(self, conditioning: Any) -> str:
        key = json.dumps(conditioning, sort_keys=True, ensure_ascii=False)
        session = self._sessions.get(key)
        if session is None:
            resp = self._request(
                {"kind": "start_session", "conditioning": conditioning}
            )
            session = resp["session"]
            self._sessions[key] = session
        return session

    def next_logprobs(self, prefix: Sequence[int], conditioning: Any = None) -> np.ndarray:
        session = self._session_for(conditioning)
        resp = self._request(
            {"kind": "step", "session": session, "prefix": [int(i) for i in prefix]}
        )
        ids = resp["ids"]
        values = logprobs_from_wire(resp["logprobs"])
        if sorted(ids) != list(range(self._vocab.size)):
            raise ProtocolError(self.identity, "step response is not a full permutation")
        dense = np.empty(self._vocab.size, dtype=np.float64)
        dense[ids] = values
        return dense

    def score_sequence(self, ids: Sequence[int], conditioning: Any = None) -> float:
        session = self._session_for(conditioning)
        resp = self._request(
            {"kind": "score", "session": session, "ids": [int(i) for i in ids]}
        )
        return float(resp["score"])

    def close(self) -> None:
        for session in self._sessions.values():
            try:
                self._request({"kind": "end_session", "session": session})
            except (AdapterError, ProtocolError):
                break
        self._channel.close()

    def __enter__(self) -> "RemoteModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> RemoteModel:
    """Open an endpoint and wrap it as a ModelAdapter."""
    return RemoteModel.connect(endpoint, timeout)


# -- server side ----------------------------------------------------------------


class ProtocolSession:
    """Per-connection request dispatch over one in-process model."""

    def __init__(self, model: ModelAdapter) -> None:
        self._model = model
        self._sessions: dict[str, Any] = {}
        self._counter = 0

    def handle_line(self, line: bytes) -> bytes:
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            return encode_frame(
                {"id": None, "kind": "error", "code": "bad_request", "error": "not JSON"}
            )
        rid = doc.get("id")
        try:
            return encode_frame(self._dispatch(doc, rid))
        except _RequestError as exc:
            return encode_frame(
                {"id": rid, "kind": "error", "code": exc.code, "error": str(exc)}
            )
        except Exception as exc:  # pragma: no cover - defensive
            return encode_frame(
                {"id": rid, "kind": "error", "code": "internal", "error": str(exc)}
            )

    def _dispatch(self, doc: dict, rid) -> dict:
        kind = doc.get("kind")
        if kind == "hello":
            if doc.get("version") != PROTOCOL_VERSION:
                raise _RequestError(
                    "version_mismatch", f"server speaks {PROTOCOL_VERSION}"
                )
            return {
                "id": rid,
                "kind": "hello",
                "model": self._model.identity,
                "version": PROTOCOL_VERSION,
            }
        if kind == "vocab":
            return {
                "id": rid,
                "kind": "vocab",
                "vocab": vocabulary_to_dict(self._model.vocabulary),
            }
        if kind == "start_session":
            self._counter += 1
            session = f"s{self._counter}"
            self._sessions[session] = doc.get("conditioning")
            return {"id": rid, "kind": "start_session", "session": session}
        if kind == "end_session":
            session = doc.get("session")
            if session not in self._sessions:
                raise _RequestError("unknown_session", f"no session {session!r}")
            del self._sessions[session]
            return {"id": rid, "kind": "end_session"}
        if kind == "step":
            cond, prefix = self._session_args(doc, "prefix")
            logprobs = self._model.next_logprobs(prefix, cond)
            order = np.lexsort((np.arange(len(logprobs)), -np.asarray(logprobs)))
            return {
                "id": rid,
                "kind": "step",
                "ids": [int(i) for i in order],
                "logprobs": logprobs_to_wire(np.asarray(logprobs)[order]),
            }
        if kind == "score":
            cond, ids = self._session_args(doc, "ids")
            return {
                "id": rid,
                "kind": "score",
                "score": float(self._model.score_sequence(ids, cond)),
            }
        raise _RequestError("bad_request", f"unknown kind {kind!r}")

    def _session_args(self, doc: dict, field: str) -> tuple[Any, list[int]]:
        session = doc.get("session")
        if session not in self._sessions:
            raise _RequestError("unknown_session", f"no session {session!r}")
        ids = doc.get(field)
        if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
            raise _RequestError("bad_request", f"{field} must be a list of ints")
        size = self._model.vocabulary.size
        if any(not 0 <= i < size for i in ids):
            raise _RequestError("invalid_token", f"{field} contains out-of-range ids")
        return self._sessions[session], ids


class _RequestError(Exception):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


def serve_stdio(model: ModelAdapter) -> None:
    """Serve the protocol over this process's stdin/stdout until EOF."""
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    session = ProtocolSession(model)
    for line in stdin:
        stdout.write(session.handle_line(line.rstrip(b"\n")))
        stdout.flush()


class ToyServer(socketserver.TCPServer):
    """Sequential TCP server over one in-process model; for tests and CLI."""

    allow_reuse_address = True

    def __init__(self, model: ModelAdapter, host: str = "127.0.0.1", port: int = 0):
        self._model = model
        super().__init__((host, port), _TcpHandler)

    @property
    def port(self) -> int:
        return self.server_address[1]


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        session = ProtocolSession(self.server._model)  # type: ignore[attr-defined]
        for line in self.rfile:
            self.wfile.write(session.handle_line(line.rstrip(b"\n")))


def serve_toy(
    model: ModelAdapter,
    *,
    stdio: bool = False,
    host: str = "127.0.0.1",
    port: int = 0,
) -> None:
    """Run the reference toy server until interrupted (or stdin EOF)."""
    if stdio:
        serve_stdio(model)
        return
    with ToyServer(model, host, port) as server:
        print(f"serving {model.identity} on tcp:{host}:{server.port}", file=sys.stderr)
        server.serve_forever()

"""Second-stage model server and client.

Wire format, all little-endian. Every message is a frame: a u32 payload
length followed by the payload.

    request:  magic u32 | request id u64 | feature count u16 | features f64 * count
    response: request id u64 | status u8 | probability f64

The server handles each connection on its own thread and answers one
request per round trip. A :class:`LatencyInjector` holds every answer
for an extra delay after the model has run, standing in for network and
service time.
"""

from __future__ import annotations

import multiprocessing as mp
import random
import signal
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import BindFailed, Disconnected, RpcError, SchemaMismatch, ServerError, Timeout
from .gbdt import GbdtModel
from .logistic import sigmoid

MAGIC = 0x5257424C  # "LBWR" on the wire
OK, SCHEMA_MISMATCH, SERVER_ERROR = 0, 1, 2
FIRST, SECOND = "first", "second"

_LEN = struct.Struct("<I")
_REQ_HEAD = struct.Struct("<IQH")
_RESP = struct.Struct("<QBd")
MAX_FRAME = 1 << 20


def encode_request(req_id: int, row) -> bytes:
    payload = _REQ_HEAD.pack(MAGIC, req_id, len(row)) + struct.pack(f"<{len(row)}d", *row)
    return _LEN.pack(len(payload)) + payload


def decode_request(payload: bytes) -> tuple[int, tuple[float, ...]]:
    if len(payload) < _REQ_HEAD.size:
        raise RpcError("short request")
    magic, req_id, count = _REQ_HEAD.unpack_from(payload)
    if magic != MAGIC:
        raise RpcError(f"bad magic {magic:#x}")
    if len(payload) != _REQ_HEAD.size + 8 * count:
        raise RpcError("feature count does not match frame length")
    return req_id, struct.unpack_from(f"<{count}d", payload, _REQ_HEAD.size)


def encode_response(req_id: int, status: int, prob: float) -> bytes:
    return _LEN.pack(_RESP.size) + _RESP.pack(req_id, status, prob)


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise Disconnected("connection closed by peer")
        buf += chunk
    return bytes(buf)


def _recv_frame(sock) -> bytes:
    (n,) = _LEN.unpack(_recv_exact(sock, 4))
    if n > MAX_FRAME:
        raise RpcError(f"frame of {n} bytes exceeds limit")
    return _recv_exact(sock, n)


@dataclass(frozen=True)
class LatencyInjector:
    """Fixed delay plus uniform jitter, both in milliseconds."""

    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delay and jitter must be >= 0")

    def sampler(self, delay=None):
        """Seconds to hold the next answer. ``delay`` (anything with a
        ``value`` in ms) overrides the fixed delay and may change live."""
        rng = random.Random(self.seed)
        fixed = self.delay_ms

        def sample() -> float:
            d = delay.value if delay is not None else fixed
            return (d + (rng.uniform(0.0, self.jitter_ms) if self.jitter_ms else 0.0)) / 1e3
        return sample


def wait_until(deadline: float):
    # sleep most of the way, then spin: time.sleep alone overshoots by ~0.1 ms
    left = deadline - time.perf_counter()
    if left > 2e-3:
        time.sleep(left - 1e-3)
    while time.perf_counter() < deadline:
        pass


try:  # optional accelerator for the server's one-row path
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


def _walk(base, feat, thr, cat, left, right, value, roots, x):
    m = base
    for r in roots:
        i = r
        while feat[i] >= 0:
            v = x[feat[i]]
            if cat[i]:
                go_left = v == thr[i]
            else:
                go_left = v < thr[i]
            i = left[i] if go_left else right[i]
        m += value[i]
    return m


_walk_jit = njit(cache=True, nogil=True)(_walk) if njit is not None else None


class ScalarEnsemble:
    """GBDT flattened into shared node arrays for fast one-row scoring.

    Trees are walked in order and leaf values summed one by one onto the
    base score, exactly as ``predict_gbdt`` does, so probabilities are
    identical. With numba installed the walk is compiled; otherwise all
    trees advance together one level per numpy step.
    """

    def __init__(self, model: GbdtModel, compiled: bool | None = None):
        self.n_features = model.n_features
        self.base = float(model.base_score)
        sizes = [t.n_nodes for t in model.trees]
        offs = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64) if sizes else np.zeros(0, np.int64)

        def cat(parts, dtype):
            return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)
        self.roots = offs
        self.feat = cat([t.feature for t in model.trees], np.int64)
        self.thr = cat([t.threshold for t in model.trees], np.float64)
        self.cat = cat([t.categorical for t in model.trees], np.bool_)
        self.left = cat([np.where(t.feature >= 0, t.left + o, np.arange(t.n_nodes) + o)
                         for t, o in zip(model.trees, offs)], np.int64)
        self.right = cat([np.where(t.feature >= 0, t.right + o, np.arange(t.n_nodes) + o)
                          for t, o in zip(model.trees, offs)], np.int64)
        self.value = cat([t.value for t in model.trees], np.float64)
        self.depth = max((t.depth() for t in model.trees), default=0)
        self.compiled = (_walk_jit is not None) if compiled is None else (compiled and _walk_jit is not None)
        if self.compiled:
            self.margin(np.zeros(self.n_features))  # compile before the first request

    def margin(self, x) -> float:
        if self.compiled:
            return _walk_jit(self.base, self.feat, self.thr, self.cat, self.left, self.right,
                             self.value, self.roots, x)
        node = self.roots
        feat = np.maximum(self.feat, 0)
        for _ in range(self.depth):
            v = x[feat[node]]
            t = self.thr[node]
            go_left = np.where(self.cat[node], v == t, v < t)
            node = np.where(go_left, self.left[node], self.right[node])
        m = self.base
        for v in self.value[node].tolist():
            m += v
        return m

    def predict(self, row) -> float:
        if len(row) != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {len(row)}")
        return sigmoid(self.margin(np.asarray(row, dtype=np.float64)))


class _Counter:
    def __init__(self, value=0):
        self._lock = threading.Lock()
        self.value = value

    def get_lock(self):
        return self._lock


class _Handler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def handle(self):
        srv = self.server
        delay = srv.injector.sampler(srv.delay)
        while True:
            try:
                payload = _recv_frame(self.request)
            except (Disconnected, ConnectionError, OSError):
                return
            with srv.counter.get_lock():
                srv.counter.value += 1
            try:
                req_id, row = decode_request(payload)
            except RpcError:
                return  # unparseable stream, drop the connection
            try:
                prob, status = srv.ensemble.predict(row), OK
            except SchemaMismatch:
                prob, status = 0.0, SCHEMA_MISMATCH
            except Exception:  # noqa: BLE001 - reported to the caller
                prob, status = 0.0, SERVER_ERROR
            wait_until(time.perf_counter() + delay())
            try:
                self.request.sendall(encode_response(req_id, status, prob))
            except OSError:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def _parse_address(address) -> tuple[str, int]:
    if isinstance(address, str):
        host, _, port = address.rpartition(":")
        return host or "127.0.0.1", int(port)
    return address


def _make_server(model, address, injector, counter, delay):
    try:
        srv = _TCPServer(_parse_address(address), _Handler)
    except OSError as e:
        raise BindFailed(f"cannot bind {address}: {e}") from e
    srv.ensemble = ScalarEnsemble(model)
    srv.injector = injector
    srv.delay = delay
    srv.counter = counter
    return srv


class ServerHandle:
    """A running server; ``requests`` counts every request received."""

    def __init__(self, address, counter, stop, delay):
        self.address = address
        self._counter = counter
        self._stop = stop
        self._delay = delay

    @property
    def requests(self) -> int:
        return self._counter.value

    @property
    def delay_ms(self) -> float:
        return self._delay.value

    def set_delay(self, ms: float):
        """Change the fixed part of the injected delay on the running server."""
        if ms < 0:
            raise ValueError("delay must be >= 0")
        self._delay.value = float(ms)

    def reset_counter(self):
        with self._counter.get_lock():
            self._counter.value = 0

    def stop(self):
        self._stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(model: GbdtModel, address="127.0.0.1:0", injector: LatencyInjector = LatencyInjector()) -> ServerHandle:
    """Start a server on a background thread of this process."""
    counter = _Counter()
    delay = _Counter(injector.delay_ms)
    srv = _make_server(model, address, injector, counter, delay)
    thread = threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()

    def stop():
        srv.shutdown()
        srv.server_close()
        thread.join()
    return ServerHandle(srv.server_address[:2], counter, stop, delay)


def _process_main(model, address, injector, counter, delay, ready):
    try:
        srv = _make_server(model, address, injector, counter, delay)
    except BindFailed as e:
        ready.send(("error", str(e)))
        return
    ready.send(("ok", srv.server_address[:2]))
    signal.signal(signal.SIGTERM, lambda *_: threading.Thread(target=srv.shutdown).start())
    srv.serve_forever(poll_interval=0.05)
    srv.server_close()


def serve_in_subprocess(model: GbdtModel, address="127.0.0.1:0",
                        injector: LatencyInjector = LatencyInjector()) -> ServerHandle:
    """Start a server in a child process so it does not share the caller's
    interpreter lock; the request counter lives in shared memory."""
    ctx = mp.get_context("fork")
    counter = ctx.Value("q", 0)
    delay = ctx.Value("d", injector.delay_ms)
    parent, child = ctx.Pipe()
    proc = ctx.Process(target=_process_main, args=(model, address, injector, counter, delay, child),
                       daemon=True)
    proc.start()
    status, info = parent.recv()
    if status != "ok":
        proc.join()
        raise BindFailed(info)

    def stop():
        proc.terminate()
        proc.join(5)
    return ServerHandle(tuple(info), counter, stop, delay)


def serve_until_signal(model: GbdtModel, address, injector: LatencyInjector = LatencyInjector(), on_ready=None):
    """Serve in the foreground until SIGINT or SIGTERM, then shut down cleanly."""
    counter = _Counter()
    srv = _make_server(model, address, injector, counter, _Counter(injector.delay_ms))

    def stop(*_):
        threading.Thread(target=srv.shutdown, daemon=True).start()
    old = {s: signal.signal(s, stop) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        if on_ready is not None:
            on_ready(srv.server_address[:2])
        srv.serve_forever(poll_interval=0.05)
    finally:
        srv.server_close()
        for s, h in old.items():
            signal.signal(s, h)
    return counter.value


class Client:
    """One connection, one caller. Not thread-safe."""

    def __init__(self, address, timeout: float = 1.0):
        self.address = _parse_address(address)
        self.timeout = timeout
        self._next_id = 1
        self.calls = 0
        try:
            self.sock = socket.create_connection(self.address, timeout=timeout)
        except socket.timeout as e:
            raise Timeout(f"connect to {address} timed out") from e
        except OSError as e:
            raise Disconnected(f"cannot connect to {address}: {e}") from e
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def predict(self, row) -> float:
        if self.sock is None:
            raise Disconnected("client is closed")
        req_id = self._next_id
        self._next_id += 1
        self.calls += 1
        try:
            self.sock.sendall(encode_request(req_id, [float(v) for v in row]))
            payload = _recv_frame(self.sock)
        except socket.timeout as e:
            # a late answer would desynchronize the stream, so give up on it
            self.close()
            raise Timeout(f"no answer within {self.timeout}s") from e
        except (ConnectionError, OSError) as e:
            self.close()
            raise Disconnected(str(e)) from e
        except Disconnected:
            self.close()
            raise
        if len(payload) != _RESP.size:
            self.close()
            raise RpcError("malformed response")
        resp_id, status, prob = _RESP.unpack(payload)
        if resp_id != req_id:
            self.close()
            raise RpcError(f"response id {resp_id} does not match request id {req_id}")
        if status == SCHEMA_MISMATCH:
            raise SchemaMismatch(f"server rejected a row of {len(row)} features")
        if status != OK:
            raise ServerError(f"server status {status}")
        return prob

    def close(self):
        if self.sock is not None:
            self.sock.close()
            self.sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_predict(client: Client, row) -> float:
    return client.predict(row)


def multistage_predict(first, client: Client, row) -> tuple[float, str]:
    """First-stage score on a hit, remote GBDT on a miss. No blending.

    ``first`` is an imported :class:`~lrwbins.config_table.FirstStageTable`
    (or anything with ``predict(row) -> float | None``).
    """
    p = first.predict(row)
    if p is not None:
        return p, FIRST
    return client.predict(row), SECOND

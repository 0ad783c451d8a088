"""Socket transport: N independent answer servers and a client orchestrator.

Frame layout (little-endian)::

    magic        4 bytes  b"PCR1"
    type         1 byte   0=hello 1=query 2=answer 3=error
    session_id  16 bytes
    scheme_id    1 byte   0-2 baseline/diff/mask, 3-5 weighted
    payload_len  4 bytes  unsigned, = 8 * element count
    payload      element count x 8-byte unsigned integers

Servers never open connections to each other; each one only ever sees the
query addressed to it.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    SESSION_BYTES,
    AnswerBundle,
    ClientRandomness,
    Database,
    RetrievalResult,
    SchemeConfig,
    UserInput,
    new_session_id,
)
from .schemes import Server, SchemeError, decode, gen_query

log = logging.getLogger(__name__)

MAGIC = b"PCR1"
HEADER = struct.Struct("<4sB16sBI")
HEADER_SIZE = HEADER.size
MAX_ELEMENTS = 1 << 24

HELLO, QUERY, ANSWER, ERROR = 0, 1, 2, 3

ERR_MALFORMED = 1
ERR_SCHEME = 2
ERR_QUERY = 3
ERR_INTERNAL = 4


class ProtocolError(RuntimeError):
    pass


class ServerError(RuntimeError):
    def __init__(self, code: int, address):
        super().__init__(f"server {address} returned error code {code}")
        self.code = code


@dataclass(frozen=True)
class WireMessage:
    type: int
    session_id: bytes
    scheme_id: int
    elements: tuple[int, ...] = ()

    def encode(self) -> bytes:
        if len(self.session_id) != SESSION_BYTES:
            raise ProtocolError("session id must be 16 bytes")
        payload = struct.pack(f"<{len(self.elements)}Q", *self.elements)
        return HEADER.pack(MAGIC, self.type, self.session_id, self.scheme_id, len(payload)) + payload

    @classmethod
    def decode_header(cls, raw: bytes) -> tuple[int, bytes, int, int]:
        magic, mtype, sid, scheme, plen = HEADER.unpack(raw)
        if magic != MAGIC:
            raise ProtocolError(f"bad magic {magic!r}")
        if mtype > ERROR:
            raise ProtocolError(f"unknown message type {mtype}")
        if plen % 8 or plen // 8 > MAX_ELEMENTS:
            raise ProtocolError(f"bad payload length {plen}")
        return mtype, sid, scheme, plen

    @classmethod
    def decode(cls, raw: bytes) -> "WireMessage":
        mtype, sid, scheme, plen = cls.decode_header(raw[:HEADER_SIZE])
        body = raw[HEADER_SIZE:]
        if len(body) != plen:
            raise ProtocolError("payload length does not match header")
        return cls(mtype, sid, scheme, struct.unpack(f"<{plen // 8}Q", body))

    @property
    def n_elements(self) -> int:
        return len(self.elements)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf.extend(chunk)
    return bytes(buf)


def read_message(sock: socket.socket) -> WireMessage | None:
    first = sock.recv(HEADER_SIZE)
    if not first:
        return None
    raw = first + _recv_exact(sock, HEADER_SIZE - len(first)) if len(first) < HEADER_SIZE else first
    mtype, sid, scheme, plen = WireMessage.decode_header(raw)
    body = _recv_exact(sock, plen) if plen else b""
    return WireMessage(mtype, sid, scheme, struct.unpack(f"<{plen // 8}Q", body))


def write_message(sock: socket.socket, msg: WireMessage) -> None:
    sock.sendall(msg.encode())


@dataclass
class ServerState:
    config: SchemeConfig
    db: Database
    seed: bytes
    index: int
    host: str = "127.0.0.1"
    port: int = 0

    def hello_elements(self) -> tuple[int, ...]:
        c = self.config
        return (c.q, c.R, c.d, c.M, c.L, c.d_min, self.index)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        state: ServerState = self.server.state
        engine: Server = self.server.engine
        sock = self.request
        while True:
            try:
                msg = read_message(sock)
            except (ProtocolError, struct.error) as e:
                log.info("server %d: malformed frame (%s)", state.index, e)
                self._error(bytes(SESSION_BYTES), 255, ERR_MALFORMED)
                return
            except (ConnectionError, OSError):
                return
            if msg is None:
                return
            log.info("server %d: type=%d elements=%d", state.index, msg.type, msg.n_elements)
            if msg.type == HELLO:
                write_message(sock, WireMessage(HELLO, msg.session_id, state.config.scheme_id, state.hello_elements()))
                continue
            if msg.scheme_id != state.config.scheme_id:
                self._error(msg.session_id, msg.scheme_id, ERR_SCHEME)
                return
            if msg.type != QUERY:
                self._error(msg.session_id, msg.scheme_id, ERR_MALFORMED)
                return
            try:
                query = self._parse_query(msg, state.config)
                ans = engine.respond(query, msg.session_id)
            except (SchemeError, ValueError) as e:
                log.info("server %d: rejected query (%s)", state.index, e)
                self._error(msg.session_id, msg.scheme_id, ERR_QUERY)
                return
            elements = tuple(int(v) for v in ans.values)
            write_message(sock, WireMessage(ANSWER, msg.session_id, msg.scheme_id, elements))
            log.info("server %d: answered %d elements", state.index, len(elements))

    @staticmethod
    def _parse_query(msg: WireMessage, config: SchemeConfig) -> np.ndarray:
        want = 2 * config.d if config.weighted else config.d
        if msg.n_elements != want:
            raise SchemeError(f"query has {msg.n_elements} elements, expected {want}")
        if any(v >= config.q for v in msg.elements):
            raise SchemeError("query element outside the field")
        arr = np.array(msg.elements, dtype=np.int64 if config.q < (1 << 31) else object)
        return arr.reshape(2, config.d) if config.weighted else arr

    def _error(self, sid: bytes, scheme: int, code: int):
        try:
            write_message(self.request, WireMessage(ERROR, sid, scheme, (code,)))
        except OSError:
            pass


class AnswerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, state: ServerState):
        self.state = state
        self.engine = Server(state.config, state.db, state.seed, state.index)
        super().__init__((state.host, state.port), _Handler)
        state.port = self.server_address[1]

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]


def serve(state: ServerState) -> None:
    """Blocking listener for one replica."""
    with AnswerServer(state) as srv:
        log.info("server %d listening on %s:%d", state.index, *srv.address)
        srv.serve_forever()


def start_background(state: ServerState, poll_interval: float = 0.01) -> AnswerServer:
    """Start a replica on a daemon thread; call ``shutdown()`` to stop it."""
    srv = AnswerServer(state)
    threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": poll_interval}, daemon=True).start()
    return srv


@dataclass
class Transcript:
    address: tuple[str, int]
    sent: list[WireMessage] = field(default_factory=list)
    received: list[WireMessage] = field(default_factory=list)


class Client:
    """Runs retrieval sessions against the configured replicas."""

    def __init__(self, config: SchemeConfig, servers: list[tuple[str, int]], timeout: float = 10.0):
        if len(servers) != config.N:
            raise ValueError(f"{config.name} needs {config.N} servers, got {len(servers)}")
        self.config = config
        self.servers = [(h, int(p)) for h, p in servers]
        self.timeout = timeout
        self.last_transcripts: list[Transcript] = []

    def hello(self, n: int) -> WireMessage:
        with socket.create_connection(self.servers[n - 1], timeout=self.timeout) as sock:
            write_message(sock, WireMessage(HELLO, bytes(SESSION_BYTES), self.config.scheme_id))
            reply = read_message(sock)
        if reply is None or reply.type != HELLO:
            raise ProtocolError("no hello reply")
        return reply

    def _exchange(self, n: int, session_id: bytes, query: np.ndarray) -> tuple[Transcript, WireMessage]:
        c = self.config
        address = self.servers[n - 1]
        tr = Transcript(address)
        with socket.create_connection(address, timeout=self.timeout) as sock:
            hello = WireMessage(HELLO, session_id, c.scheme_id)
            write_message(sock, hello)
            tr.sent.append(hello)
            reply = read_message(sock)
            if reply is None:
                raise ProtocolError(f"server {address} closed during hello")
            tr.received.append(reply)
            if reply.type == ERROR:
                raise ServerError(reply.elements[0] if reply.elements else ERR_INTERNAL, address)
            expect = (c.q, c.R, c.d, c.M, c.L, c.d_min, n)
            if reply.scheme_id != c.scheme_id or reply.elements != expect:
                raise ProtocolError(f"server {address} parameters {reply.elements} differ from {expect}")
            msg = WireMessage(QUERY, session_id, c.scheme_id, tuple(int(v) for v in np.ravel(query)))
            write_message(sock, msg)
            tr.sent.append(msg)
            reply = read_message(sock)
            if reply is None:
                raise ProtocolError(f"server {address} closed before answering")
            tr.received.append(reply)
        if reply.type == ERROR:
            raise ServerError(reply.elements[0] if reply.elements else ERR_INTERNAL, address)
        if reply.type != ANSWER or reply.session_id != session_id:
            raise ProtocolError(f"unexpected reply from {address}")
        if reply.n_elements != c.answer_len:
            raise ProtocolError(f"answer length {reply.n_elements} from {address}, expected {c.answer_len}")
        return tr, reply

    def retrieve(self, x, w=None, rng: np.random.Generator | None = None, session_id: bytes | None = None) -> RetrievalResult:
        """One retrieval: send each server its own query concurrently, then decode.

        Any server failure aborts the whole session.
        """
        inp = UserInput(x, w)
        inp.validate(self.config)
        session_id = session_id or new_session_id()
        cr = ClientRandomness.sample(self.config, rng)
        query = gen_query(inp, cr, self.config)
        with ThreadPoolExecutor(max_workers=self.config.N) as pool:
            futures = [pool.submit(self._exchange, n, session_id, query.for_server(n)) for n in range(1, self.config.N + 1)]
            results = [f.result() for f in futures]
        self.last_transcripts = [tr for tr, _ in results]
        answers = [
            AnswerBundle(n, np.array(reply.elements, dtype=np.int64 if self.config.q < (1 << 31) else object))
            for n, (_, reply) in enumerate(results, start=1)
        ]
        result = decode(answers, cr, self.config)
        up = sum(m.n_elements for tr in self.last_transcripts for m in tr.sent if m.type == QUERY)
        down = sum(m.n_elements for tr in self.last_transcripts for m in tr.received if m.type == ANSWER)
        result.cost = (up, down)
        return result


def retrieve(config: SchemeConfig, servers, x, w=None, rng=None, timeout: float = 10.0) -> RetrievalResult:
    return Client(config, servers, timeout).retrieve(x, w, rng)

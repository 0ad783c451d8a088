import socket
import struct

import numpy as np
import pytest

from pcr.core import Database, SchemeConfig, UserInput, cost_of, new_seed
from pcr.schemes import run_session
from pcr.transport import (
    ANSWER,
    ERROR,
    ERR_MALFORMED,
    ERR_QUERY,
    ERR_SCHEME,
    HELLO,
    QUERY,
    Client,
    ProtocolError,
    ServerState,
    WireMessage,
    read_message,
    start_background,
    write_message,
)

SID = bytes(range(16))


@pytest.fixture
def cluster():
    started = []

    def launch(config, db, seeds):
        servers = [start_background(ServerState(config, db, s, n)) for n, s in enumerate(seeds, start=1)]
        started.extend(servers)
        return servers

    yield launch
    for s in started:
        s.shutdown()
        s.server_close()


def recording(servers):
    """Wrap each replica's engine so every query it computes on is kept."""
    seen = {}
    for srv in servers:
        idx = srv.state.index
        seen[idx] = []
        orig = srv.engine.respond

        def respond(query, session_id, _orig=orig, _log=seen[idx]):
            _log.append(np.asarray(query).ravel().tolist())
            return _orig(query, session_id)

        srv.engine.respond = respond
    return seen


def big_config(variant, weighted=False, M=6, d=3, R=9):
    return SchemeConfig(
        q=2**61 - 1, R=R, d=d, M=M, variant=variant, weighted=weighted, L=4 if weighted else 1,
        d_min=5 if variant == "mask" else 1,
    )


class TestWire:
    def test_encode_bit_exact(self):
        raw = WireMessage(QUERY, SID, 4, (1, 2**64 - 1)).encode()
        expected = b"PCR1" + b"\x01" + SID + b"\x04" + (16).to_bytes(4, "little")
        expected += (1).to_bytes(8, "little") + (2**64 - 1).to_bytes(8, "little")
        assert raw == expected
        assert WireMessage.decode(raw) == WireMessage(QUERY, SID, 4, (1, 2**64 - 1))

    def test_header_size(self):
        assert len(WireMessage(HELLO, SID, 0).encode()) == 26

    @pytest.mark.parametrize(
        "raw",
        [
            b"XXXX" + bytes(22),
            b"PCR1" + b"\x09" + bytes(21),
            b"PCR1" + b"\x01" + SID + b"\x00" + (7).to_bytes(4, "little") + bytes(7),
        ],
    )
    def test_decode_rejects(self, raw):
        with pytest.raises(ProtocolError):
            WireMessage.decode(raw)

    def test_length_mismatch(self):
        raw = WireMessage(QUERY, SID, 0, (1, 2)).encode()[:-8]
        with pytest.raises(ProtocolError):
            WireMessage.decode(raw)


def raw_exchange(address, payload: bytes, expect_close: bool = True):
    with socket.create_connection(address, timeout=5) as s:
        s.sendall(payload)
        reply = read_message(s)
        closed = s.recv(1) == b"" if expect_close else None
    return reply, closed


class TestServer:
    def test_hello_echo(self, cluster, worked_db, worked_mask_config):
        (srv, _) = cluster(worked_mask_config, worked_db, [new_seed()] * 2)
        reply, _ = raw_exchange(srv.address, WireMessage(HELLO, SID, worked_mask_config.scheme_id).encode(), False)
        assert reply.type == HELLO and reply.session_id == SID
        assert reply.elements == (809, 20, 2, 2, 1, 40, 1)
        assert reply.scheme_id == worked_mask_config.scheme_id

    def test_malformed_frame(self, cluster, worked_db, worked_mask_config):
        (srv, _) = cluster(worked_mask_config, worked_db, [new_seed()] * 2)
        reply, closed = raw_exchange(srv.address, b"GARBAGE-GARBAGE-GARBAGE-GA")
        assert reply.type == ERROR and reply.elements == (ERR_MALFORMED,)
        assert closed

    def test_unknown_scheme(self, cluster, worked_db, worked_mask_config):
        (srv, _) = cluster(worked_mask_config, worked_db, [new_seed()] * 2)
        reply, closed = raw_exchange(srv.address, WireMessage(QUERY, SID, 0, (1, 2)).encode())
        assert reply.type == ERROR and reply.elements == (ERR_SCHEME,) and closed

    def test_bad_query(self, cluster, worked_db, worked_mask_config):
        c = worked_mask_config
        (srv, _) = cluster(c, worked_db, [new_seed()] * 2)
        for elements in [(1, 2, 3), (1, 900)]:
            reply, closed = raw_exchange(srv.address, WireMessage(QUERY, SID, c.scheme_id, elements).encode())
            assert reply.type == ERROR and reply.elements == (ERR_QUERY,) and closed


class TestRetrieval:
    def test_worked_example(self, cluster, worked_db, worked_mask_config):
        c = worked_mask_config
        servers = cluster(c, worked_db, [new_seed()] * 2)
        client = Client(c, [s.address for s in servers])
        for _ in range(5):
            res = client.retrieve([1, 2])
            assert res.theta_star == 2 and res.consistent
            assert res.cost == cost_of(c) == (4, 4)
            assert 365 <= res.revealed[0] <= 404 and 325 <= res.revealed[1] <= 364

    @pytest.mark.parametrize("variant", ["baseline", "diff", "mask"])
    @pytest.mark.parametrize("weighted", [False, True])
    def test_cost_and_recovery(self, cluster, rng, variant, weighted):
        c = big_config(variant, weighted)
        db = Database(rng.integers(0, 10, size=(6, 3)), 9)
        servers = cluster(c, db, [new_seed()] * c.N)
        client = Client(c, [s.address for s in servers])
        for _ in range(10):
            x = rng.integers(0, 10, size=3)
            w = rng.integers(1, 5, size=3) if weighted else None
            dist = db.distances(x, w)
            res = client.retrieve(x, w)
            assert res.cost == cost_of(c)
            m = 5 if variant == "diff" else 6
            assert sum(res.cost) == (6 * 3 + 3 * m if weighted else 2 * (3 + m))
            # every scheme lands on a true minimiser (tie rules differ by scheme)
            assert dist[res.theta_star - 1] == dist.min() or variant == "mask"
            assert res.consistent

    def test_weighted_unit_matches_unweighted(self, cluster, rng):
        db = Database(rng.integers(0, 10, size=(6, 3)), 9)
        cu, cw = big_config("baseline"), big_config("baseline", True)
        cu_srv = cluster(cu, db, [new_seed()] * 2)
        cw_srv = cluster(cw, db, [new_seed()] * 3)
        for _ in range(10):
            x = rng.integers(0, 10, size=3)
            a = Client(cu, [s.address for s in cu_srv]).retrieve(x)
            b = Client(cw, [s.address for s in cw_srv]).retrieve(x, [1, 1, 1])
            assert a.theta_star == b.theta_star
            assert a.revealed.tolist() == b.revealed.tolist()

    @pytest.mark.parametrize("variant", ["baseline", "diff", "mask"])
    def test_mismatched_seeds_flagged(self, cluster, rng, variant):
        c = big_config(variant)
        db = Database(rng.integers(0, 10, size=(6, 3)), 9)
        servers = cluster(c, db, [new_seed(), new_seed()])
        res = Client(c, [s.address for s in servers]).retrieve([1, 2, 3])
        assert not res.consistent

    def test_matches_in_process(self, cluster, rng):
        c = big_config("mask")
        db = Database(rng.integers(0, 10, size=(6, 3)), 9)
        seed = new_seed()
        servers = cluster(c, db, [seed] * 2)
        client = Client(c, [s.address for s in servers])
        for k in range(5):
            x = rng.integers(0, 10, size=3)
            sid = bytes([k]) * 16
            wire = client.retrieve(x, rng=np.random.default_rng(k), session_id=sid)
            local = run_session(c, db, UserInput(x), seed, np.random.default_rng(k), sid)
            assert wire.theta_star == local.theta_star
            assert wire.revealed.tolist() == local.revealed.tolist()

    def test_each_server_sees_only_its_query(self, cluster, rng):
        c = big_config("baseline", True)
        db = Database(rng.integers(0, 10, size=(6, 3)), 9)
        servers = cluster(c, db, [new_seed()] * 3)
        seen = recording(servers)
        client = Client(c, [s.address for s in servers])
        for _ in range(4):
            client.retrieve(rng.integers(0, 10, size=3), [1, 2, 3])
            sent = [[m.elements for m in tr.sent if m.type == QUERY] for tr in client.last_transcripts]
            assert all(len(s) == 1 for s in sent)
            for n, tr in enumerate(client.last_transcripts, start=1):
                assert tuple(seen[n][-1]) == sent[n - 1][0]
                assert [m.type for m in tr.received] == [HELLO, ANSWER]
            assert len({s[0] for s in sent}) == 3
        assert all(len(v) == 4 for v in seen.values())

    def test_parameter_mismatch_aborts(self, cluster, worked_db, worked_mask_config):
        servers = cluster(worked_mask_config, worked_db, [new_seed()] * 2)
        other = SchemeConfig(q=809, R=20, d=2, M=2, variant="mask", d_min=39, strict=False)
        with pytest.raises(ProtocolError):
            Client(other, [s.address for s in servers]).retrieve([1, 2])

    def test_unreachable_server(self, worked_mask_config):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        with pytest.raises(OSError):
            Client(worked_mask_config, [("127.0.0.1", port)] * 2, timeout=1).retrieve([1, 2])

    def test_input_validated_first(self, worked_mask_config):
        with pytest.raises(ValueError):
            Client(worked_mask_config, [("127.0.0.1", 9)] * 2).retrieve([1, 99])

    def test_server_count(self, worked_mask_config):
        with pytest.raises(ValueError):
            Client(worked_mask_config, [("127.0.0.1", 9)])

import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcr import kernels
from pcr.core import (
    AnswerBundle,
    ClientRandomness,
    Database,
    SchemeConfig,
    ServerSharedRandomness,
    UserInput,
    expand_shared_randomness,
    new_seed,
)
from pcr.field import min_field_size
from pcr.schemes import (
    SchemeError,
    answer,
    decode,
    gen_query,
    run_session,
    solve_coefficients,
    true_argmin,
)


def zero_pads(config):
    n = config.answer_len
    return ServerSharedRandomness(
        np.zeros(n, dtype=np.int64),
        np.zeros(n, dtype=np.int64) if config.weighted else None,
        np.zeros(n, dtype=np.int64) if config.variant == "mask" else None,
    )


def decode_with(config, db, x, cr, sr, w=None):
    query = gen_query(UserInput(x, w), cr, config)
    answers = [answer(db, query.for_server(n), sr, n, config) for n in range(1, config.N + 1)]
    return decode(answers, cr, config)


def tie_free_instance(rng, weighted):
    while True:
        R, d, M = int(rng.integers(1, 11)), int(rng.integers(1, 6)), int(rng.integers(2, 51))
        L = int(rng.integers(1, 5)) if weighted else 1
        db = rng.integers(0, R + 1, size=(M, d))
        x = rng.integers(0, R + 1, size=d)
        w = rng.integers(1, L + 1, size=d) if weighted else None
        dist = (((db - x) ** 2) * (1 if w is None else w)).sum(axis=1)
        if len(set(dist.tolist())) == M:
            return R, d, M, L, Database(db, R), x, w


class TestQuery:
    def test_zero_pad(self):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        qb = gen_query(UserInput([1, 2]), ClientRandomness(np.zeros(2, dtype=np.int64)), c)
        assert qb.for_server(1).tolist() == qb.for_server(2).tolist() == [1, 2]

    def test_worked_pad(self):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        qb = gen_query(UserInput([1, 2]), ClientRandomness(np.array([3, 5])), c)
        assert qb.for_server(1).tolist() == [4, 7]
        assert qb.for_server(2).tolist() == [7, 12]
        assert qb.symbols == 4

    def test_weighted_zero_second_pad(self):
        c = SchemeConfig(q=10007, R=20, d=2, M=2, variant="baseline", weighted=True, L=3)
        cr = ClientRandomness(np.array([3, 5]), np.zeros(2, dtype=np.int64))
        qb = gen_query(UserInput([1, 2], [3, 2]), cr, c)
        for n in (1, 2, 3):
            assert qb.for_server(n)[1].tolist() == [3, 2]

    def test_stale_randomness_rejected(self):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        cr = ClientRandomness.sample(c)
        gen_query(UserInput([1, 2]), cr, c)
        with pytest.raises(SchemeError):
            gen_query(UserInput([2, 2]), cr, c)


class TestAnswers:
    def test_zero_pads_reveal_distances(self, worked_db):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        qb = gen_query(UserInput([1, 2]), ClientRandomness(np.zeros(2, dtype=np.int64)), c)
        assert answer(worked_db, qb.for_server(1), zero_pads(c), 1, c).values.tolist() == [365, 325]

    def test_worked_example_round_trip(self, worked_db):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        res = run_session(c, worked_db, UserInput([1, 2]))
        assert res.revealed.tolist() == [365, 325]
        assert res.theta_star == 2 and res.consistent

    def test_diff_identical_samples(self):
        c = SchemeConfig(q=10007, R=3, d=2, M=3, variant="diff")
        db = Database(np.array([[1, 1], [1, 1], [0, 3]]), 3)
        qb = gen_query(UserInput([2, 2]), ClientRandomness(np.zeros(2, dtype=np.int64)), c)
        assert answer(db, qb.for_server(1), zero_pads(c), 1, c).values[0] == 0

    def test_diff_five_three_seven(self):
        # x = 0 in d=4: (2,1,0,0) -> 5, (1,1,1,0) -> 3, (2,1,1,1) -> 7
        db = Database(np.array([[2, 1, 0, 0], [1, 1, 1, 0], [2, 1, 1, 1]]), 3)
        c = SchemeConfig(q=min_field_size(3, 4, 1, "diff"), R=3, d=4, M=3, variant="diff")
        x = [0, 0, 0, 0]
        assert db.distances(x).tolist() == [5, 3, 7]
        cr = ClientRandomness(np.zeros(4, dtype=np.int64))
        qb = gen_query(UserInput(x), cr, c)
        assert answer(db, qb.for_server(1), zero_pads(c), 1, c).values.tolist() == [2, c.q - 4]
        res = decode_with(c, db, x, ClientRandomness.sample(c), expand_shared_randomness(new_seed(), c))
        assert res.revealed.tolist() == [2, c.q - 4]
        assert res.theta_star == 2

    def test_mask_unit_equals_baseline(self, worked_db, rng):
        base = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        mask = SchemeConfig(q=809, R=20, d=2, M=2, variant="mask", d_min=1)
        seed, sid = new_seed(), bytes(16)
        qb = gen_query(UserInput([1, 2]), ClientRandomness.sample(base, rng), base)
        a = answer(worked_db, qb.for_server(1), expand_shared_randomness(seed, base, sid), 1, base)
        b = answer(worked_db, qb.for_server(1), expand_shared_randomness(seed, mask, sid), 1, mask)
        assert a.values.tolist() == b.values.tolist()

    def test_weighted_unit_weights_match_unweighted_answers(self, rng):
        for _ in range(50):
            R, d, M = 6, 3, 5
            db = Database(rng.integers(0, R + 1, size=(M, d)), R)
            x = rng.integers(0, R + 1, size=d)
            for variant in ("baseline", "diff", "mask"):
                cu = SchemeConfig(q=10007, R=R, d=d, M=M, variant=variant, d_min=3 if variant == "mask" else 1)
                cw = SchemeConfig(q=10007, R=R, d=d, M=M, variant=variant, weighted=True, L=1, d_min=cu.d_min)
                Z = rng.integers(0, 10007, size=d)
                sr = expand_shared_randomness(new_seed(), cw)
                sru = ServerSharedRandomness(sr.zprime1, None, sr.mu)
                srw = ServerSharedRandomness(sr.zprime1, np.zeros_like(sr.zprime1), sr.mu)
                qu = gen_query(UserInput(x), ClientRandomness(Z.copy()), cu)
                qw = gen_query(UserInput(x, np.ones(d)), ClientRandomness(Z.copy(), np.zeros(d, dtype=np.int64)), cw)
                for n in (1, 2):
                    assert (
                        answer(db, qu.for_server(n), sru, n, cu).values.tolist()
                        == answer(db, qw.for_server(n), srw, n, cw).values.tolist()
                    )

    def test_bad_query_shape(self, worked_db):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        with pytest.raises(SchemeError):
            answer(worked_db, np.array([1, 2, 3]), zero_pads(c), 1, c)
        with pytest.raises(SchemeError):
            answer(worked_db, np.array([1, 2]), zero_pads(c), 3, c)

    def test_decode_needs_every_server(self, worked_db):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        cr = ClientRandomness.sample(c)
        with pytest.raises(SchemeError):
            solve_coefficients([AnswerBundle(1, np.zeros(2, dtype=np.int64))], cr, c)


class TestDecode:
    def test_single_candidate(self):
        c = SchemeConfig(q=809, R=20, d=2, M=1, variant="baseline")
        res = run_session(c, Database(np.array([[3, 3]]), 20), UserInput([1, 2]))
        assert res.theta_star == 1

    def test_worked_masks_never_flip(self, worked_db, worked_mask_config):
        c = worked_mask_config
        for mu in itertools.product(range(40), repeat=2):
            sr = ServerSharedRandomness(np.array([7, 100]), None, np.array(mu))
            res = decode_with(c, worked_db, [1, 2], ClientRandomness.sample(c), sr)
            assert res.revealed.tolist() == [365 + mu[0], 325 + mu[1]]
            assert res.theta_star == 2 and not res.mask_ambiguous

    def test_mask_tie_flagged(self):
        c = SchemeConfig(q=10007, R=5, d=1, M=2, variant="mask", d_min=3)
        db = Database(np.array([[1], [3]]), 5)
        sr = ServerSharedRandomness(np.zeros(2, dtype=np.int64), None, np.array([0, 0]))
        res = decode_with(c, db, [2], ClientRandomness.sample(c), sr)
        assert res.theta_star == 1 and res.mask_ambiguous

    def test_distance_zero_allowed(self, worked_db):
        c = SchemeConfig(q=809, R=20, d=2, M=2, variant="baseline")
        assert run_session(c, worked_db, UserInput([0, 20])).theta_star == 2


class TestChampionScan:
    @pytest.mark.parametrize("backend", ["python", "cython"])
    def test_hand_trace(self, backend):
        # r = (5-3, 3-7) mod 59 = (2, 55): step 1 moves the champion to 2,
        # step 2 lands at 55 (negative) and keeps it
        assert kernels.champion_scan([2, 55], 27, 59, backend) == 2
        assert kernels.champion_scan([2, 55], 54, 59, backend) == 2

    @pytest.mark.parametrize("backend", ["python", "cython"])
    def test_increasing_and_equal(self, backend):
        q, b = 10007, 100
        dist = np.array([1, 4, 9, 16, 30])
        assert kernels.champion_scan((dist[:-1] - dist[1:]) % q, b, q, backend) == 1
        assert kernels.champion_scan(np.zeros(4, dtype=np.int64), b, q, backend) == 5

    @settings(max_examples=300)
    @given(st.lists(st.integers(0, 50), min_size=2, max_size=30))
    def test_matches_last_minimum(self, dist):
        q, b = 10007, 50
        d = np.array(dist)
        got = kernels.champion_scan((d[:-1] - d[1:]) % q, b, q, "python")
        # ties advance, so the scan lands on the last index achieving the minimum
        assert got == int(np.flatnonzero(d == d.min()).max()) + 1


SCHEMES = [(v, w) for w in (False, True) for v in ("baseline", "diff", "mask")]


@pytest.mark.parametrize("variant,weighted", SCHEMES)
def test_exact_recovery_random_instances(variant, weighted):
    rng = np.random.default_rng(SCHEMES.index((variant, weighted)))
    for _ in range(200):
        R, d, M, L, db, x, w = tie_free_instance(rng, weighted)
        dist = db.distances(x, w)
        d_min = int(np.diff(np.sort(dist)).min()) if variant == "mask" else 1
        q = min_field_size(R, d, L, variant)
        while q <= max(R * R * L * d + d_min, 3):
            q = min_field_size(q, 1)
        c = SchemeConfig(q=q, R=R, d=d, M=M, variant=variant, weighted=weighted, L=L, d_min=d_min)
        res = run_session(c, db, UserInput(x, w), rng=rng)
        assert res.theta_star == true_argmin(db, x, w)
        assert res.consistent


@pytest.mark.parametrize("weighted", [False, True])
def test_variants_agree_tie_free(weighted, rng):
    for _ in range(100):
        R, d, M, L, db, x, w = tie_free_instance(rng, weighted)
        got = set()
        for v in ("baseline", "diff", "mask"):
            c = SchemeConfig(q=100003, R=R, d=d, M=M, variant=v, weighted=weighted, L=L)
            got.add(run_session(c, db, UserInput(x, w), rng=rng).theta_star)
        assert len(got) == 1


def test_weighted_unit_weights_same_argmin(rng):
    for _ in range(100):
        R, d, M, _, db, x, _ = tie_free_instance(rng, False)
        for v in ("baseline", "diff", "mask"):
            cu = SchemeConfig(q=100003, R=R, d=d, M=M, variant=v)
            cw = SchemeConfig(q=100003, R=R, d=d, M=M, variant=v, weighted=True, L=1)
            assert run_session(cu, db, UserInput(x)).theta_star == run_session(cw, db, UserInput(x, np.ones(d))).theta_star


@pytest.mark.parametrize("variant", ["baseline", "diff", "mask"])
def test_interference_uniform_and_database_independent(variant):
    q = 5
    c = SchemeConfig(q=q, R=1, d=1, M=2, variant=variant, strict=False)
    cr_z = np.array([3])
    laws = []
    for db_rows in ([[0], [1]], [[1], [1]], [[1], [0]]):
        db = Database(np.array(db_rows), 1)
        law = Counter()
        for zp in itertools.product(range(q), repeat=c.answer_len):
            sr = ServerSharedRandomness(np.array(zp), None, np.zeros(c.answer_len, dtype=np.int64))
            cr = ClientRandomness(cr_z.copy())
            qb = gen_query(UserInput([0]), cr, c)
            ans = [answer(db, qb.for_server(n), sr, n, c) for n in (1, 2)]
            law[tuple(solve_coefficients(ans, cr, c)[1].tolist())] += 1
        assert len(law) == q ** c.answer_len and set(law.values()) == {1}
        laws.append(law)
    assert laws[0] == laws[1] == laws[2]


class TestKernelParity:
    @settings(max_examples=150)
    @given(st.sampled_from([5, 809, 40009, 2**31 - 1, 2**61 - 1]), st.data())
    def test_distances(self, q, data):
        M = data.draw(st.integers(1, 8))
        d = data.draw(st.integers(1, 6))
        ints = st.integers(0, q - 1)
        db = np.array(data.draw(st.lists(st.lists(ints, min_size=d, max_size=d), min_size=M, max_size=M)), dtype=object)
        v = np.array(data.draw(st.lists(ints, min_size=d, max_size=d)), dtype=object)
        w = np.array(data.draw(st.lists(ints, min_size=d, max_size=d)), dtype=object)
        exact = [sum((int(a) - int(b)) ** 2 for a, b in zip(row, v)) % q for row in db]
        wexact = [sum((int(a) - int(b)) ** 2 * int(c) for a, b, c in zip(row, v, w)) % q for row in db]
        for backend in ("python", "cython"):
            assert [int(t) for t in kernels.sq_dists(db, v, q, backend)] == exact
            assert [int(t) for t in kernels.wsq_dists(db, v, w, q, backend)] == wexact

    @settings(max_examples=150)
    @given(st.lists(st.integers(0, 2002), min_size=1, max_size=40), st.integers(0, 1000))
    def test_champion_scan(self, r, bound):
        assert kernels.champion_scan(r, bound, 2003, "python") == kernels.champion_scan(r, bound, 2003, "cython")

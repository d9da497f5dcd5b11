import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hssrand import flops
from hssrand.dense import (
    IdFailed,
    RngStream,
    block_gram_schmidt,
    hmt_factor,
    interp_decomp,
    pivoted_qr,
    randn,
    rrqr,
    rrqr_hmt,
)

# first six deviates of seed 42, frozen
SEED42 = [
    0.2345499249868942,
    0.5842987087552288,
    -0.4201587892586172,
    0.3276818666328492,
    -1.2955005147471352,
    0.5659727175030451,
]


def lowrank(m, n, k, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, k)) @ rng.standard_normal((k, n))


class TestRng:
    def test_frozen_values(self):
        r = RngStream(42)
        X = randn(r, 2, 3)
        assert X.ravel(order="F").tolist() == SEED42
        assert r.counter == 6

    def test_split_draws_match_one_draw(self):
        a, b = RngStream(7), RngStream(7)
        whole = randn(a, 5, 6)
        parts = np.hstack([randn(b, 5, 1), randn(b, 5, 2), randn(b, 5, 3)])
        np.testing.assert_array_equal(whole, parts)

    def test_moments(self):
        z = randn(RngStream(1), 200_000, 1).ravel()
        assert abs(z.mean()) < 0.01
        assert abs(z.var() - 1) < 0.01

    def test_spawn_differs(self):
        r = RngStream(3)
        assert not np.allclose(randn(r.spawn(1), 4, 1), randn(r.spawn(2), 4, 1))

    def test_negative_shape(self):
        with pytest.raises(ValueError):
            randn(RngStream(0), -1, 2)

    @given(st.integers(0, 2**63), st.integers(0, 50), st.integers(1, 13))
    @settings(max_examples=30, deadline=None)
    def test_offset_consistency(self, seed, skip, k):
        a = RngStream(seed)
        full = randn(a, skip + k, 1).ravel()
        b = RngStream(seed, counter=skip)
        np.testing.assert_array_equal(randn(b, k, 1).ravel(), full[skip:])


class TestPivotedQR:
    def test_full_factorization(self):
        A = np.random.default_rng(0).standard_normal((30, 12))
        f = pivoted_qr(A, lambda k, rkk, r00: False)
        Q, R = f.Q(), f.R
        np.testing.assert_allclose(Q @ R, A[:, f.perm], atol=1e-12)
        np.testing.assert_allclose(Q.T @ Q, np.eye(12), atol=1e-12)
        d = np.abs(np.diag(R))
        assert np.all(d[:-1] >= d[1:] - 1e-12)

    def test_rank_revealed(self):
        A = lowrank(50, 40, 7)
        Q, R, perm, k = rrqr(A, 1e-12, 0.0)
        assert k == 7
        np.testing.assert_allclose(Q @ R, A[:, perm], atol=1e-9)

    def test_zero_matrix(self):
        _, _, _, k = rrqr(np.zeros((5, 4)), 1e-8, 1e-8)
        assert k == 0

    def test_absolute_tolerance(self):
        A = np.diag([10.0, 1.0, 1e-3, 1e-6])
        assert rrqr(A, 0.0, 1e-2)[3] == 2

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 100))
    @settings(max_examples=25, deadline=None)
    def test_reconstruction_property(self, m, n, seed):
        A = np.random.default_rng(seed).standard_normal((m, n))
        Q, R, perm, k = rrqr(A, 0.0, 0.0)
        assert k == min(m, n)
        np.testing.assert_allclose(Q @ R, A[:, perm], atol=1e-10)


class TestHmt:
    def test_factor_value(self):
        assert hmt_factor(3, 20, 100, 50) == pytest.approx(8.905694150420949, rel=1e-14)

    def test_factor_infinite_without_spare(self):
        assert math.isinf(hmt_factor(9, 10, 100, 100))

    def test_deflated_rank_not_smaller(self):
        rng = np.random.default_rng(5)
        U = np.linalg.qr(rng.standard_normal((80, 30)))[0]
        A = (U * np.logspace(0, -12, 30)) @ rng.standard_normal((30, 40))
        plain = rrqr(A, 1e-6, 0.0)[3]
        deflated = rrqr_hmt(A, 30, 10, 80, 80, 1e-6, 0.0)[3]
        assert deflated >= plain

    def test_unit_factor_matches_plain(self):
        A = lowrank(40, 20, 6, seed=2) + 1e-9 * np.random.default_rng(2).standard_normal((40, 20))
        a = rrqr(A, 1e-6, 1e-6)[3]
        b = rrqr_hmt(A, 10, 10, 40, 40, 1e-6, 1e-6, factor=lambda k: 1.0)[3]
        assert a == b


class TestInterpDecomp:
    def test_exact_low_rank(self):
        S = lowrank(60, 20, 5, seed=3)
        res = interp_decomp(S.T, 1e-12, 0.0)
        assert res.rank == 5
        np.testing.assert_allclose(res.apply(S[res.selected]), S, atol=1e-9)
        np.testing.assert_allclose(res.dense()[res.selected], np.eye(5))

    def test_apply_t_is_transpose(self):
        S = lowrank(30, 10, 4, seed=4)
        res = interp_decomp(S.T, 1e-12, 0.0)
        y = np.random.default_rng(0).standard_normal((30, 3))
        np.testing.assert_allclose(res.apply_t(y), res.dense().T @ y, atol=1e-12)

    def test_max_rank(self):
        S = np.random.default_rng(1).standard_normal((20, 10))
        with pytest.raises(IdFailed):
            interp_decomp(S.T, 1e-12, 0.0, max_rank=5)

    def test_flops_counted(self):
        S = lowrank(30, 10, 4, seed=4)
        with flops.counting() as c, flops.phase("id"):
            interp_decomp(S.T, 1e-12, 0.0)
        assert c.by_phase["id"] > 0 and c.total == c.by_phase["id"]


def test_block_gram_schmidt():
    rng = np.random.default_rng(9)
    Q = np.linalg.qr(rng.standard_normal((40, 6)))[0]
    S = rng.standard_normal((40, 4))
    out = block_gram_schmidt(Q, S)
    assert np.abs(Q.T @ out).max() < 1e-14
    np.testing.assert_allclose(out + Q @ (Q.T @ S), S, atol=1e-12)
    np.testing.assert_array_equal(block_gram_schmidt(np.zeros((40, 0)), S), S)

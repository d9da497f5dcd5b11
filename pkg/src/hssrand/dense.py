"""Dense building blocks: Gaussian sketches, QR, pivoted QR and the
interpolative decomposition.

All matrices are float64 numpy arrays.  Indices are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la

from . import flops

# Column norms are recomputed from scratch once the downdated value drops
# below this fraction of the last exact value.
NORM_RECOMPUTE_FRACTION = 0.1
# Smallest |R1| diagonal accepted before back-substitution.
R1_BREAKDOWN = 1e-300


class IdFailed(Exception):
    """The ID could not reach the tolerance with the available samples."""


# --------------------------------------------------------------------------
# random numbers


@dataclass
class RngStream:
    """Counter-based stream of N(0, 1) deviates.

    Deviate ``i`` of a stream depends only on ``(seed, i)``: uniforms come
    from the Philox-4x64 counter generator and are turned into normals
    pairwise by the Box-Muller transform.  ``counter`` is the index of the
    next deviate to be handed out.
    """

    seed: int
    counter: int = 0

    def spawn(self, key: int) -> "RngStream":
        """Independent substream, e.g. one per worker shard."""
        mixed = np.random.SeedSequence([self.seed, key]).generate_state(1, np.uint64)[0]
        return RngStream(int(mixed))


def _normals(seed: int, start: int, count: int) -> np.ndarray:
    if count == 0:
        return np.empty(0)
    # one Philox block = 4 raw words = 2 Box-Muller pairs = 4 deviates
    first = start // 4
    last = (start + count - 1) // 4
    gen = np.random.Philox(key=seed % (1 << 64), counter=first)
    raw = gen.random_raw(4 * (last - first + 1)).reshape(-1, 2)
    scale = 2.0**-53
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * scale
    u2 = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * scale
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty(2 * rad.size)
    z[0::2] = rad * np.cos(ang)
    z[1::2] = rad * np.sin(ang)
    off = start - 4 * first
    return z[off : off + count]


def randn(rng: RngStream, m: int, n: int) -> np.ndarray:
    """An m x n matrix of iid N(0, 1) entries, filled column by column."""
    if m < 0 or n < 0:
        raise ValueError("matrix dimensions must be non-negative")
    z = _normals(rng.seed, rng.counter, m * n)
    rng.counter += m * n
    return np.asfortranarray(z.reshape(n, m).T)


# --------------------------------------------------------------------------
# QR family


def qr(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin Householder QR of a tall matrix."""
    S = np.asarray(S, dtype=float)
    m, n = S.shape
    if m < n:
        raise ValueError("qr expects rows >= cols")
    flops.add(2 * m * n * n)
    Q, R = np.linalg.qr(S, mode="reduced")
    return Q, R


@dataclass
class PivotedQR:
    """Packed result of a (possibly truncated) column-pivoted Householder QR.

    ``packed[:rank]`` holds R in its upper trapezoid, the reflectors live
    below the diagonal of the first ``rank`` columns.
    """

    packed: np.ndarray
    taus: np.ndarray
    perm: np.ndarray
    rank: int
    diag: np.ndarray = field(repr=False)

    @property
    def R(self) -> np.ndarray:
        return np.triu(self.packed[: self.rank, :])

    def Q(self) -> np.ndarray:
        m = self.packed.shape[0]
        k = self.rank
        Q = np.zeros((m, k))
        Q[:k, :k] = np.eye(k)
        for j in range(k - 1, -1, -1):
            if self.taus[j] == 0.0:
                continue
            v = np.concatenate(([1.0], self.packed[j + 1 :, j]))
            Q[j:, j:] -= self.taus[j] * np.outer(v, v @ Q[j:, j:])
            flops.add(4 * (m - j) * (k - j))
        return Q


StopRule = Callable[[int, float, float], bool]


def pivoted_qr(S: np.ndarray, stop: StopRule) -> PivotedQR:
    """Column-pivoted Householder QR, halted early by ``stop``.

    Before eliminating column ``k`` the rule ``stop(k, |R_kk|, |R_00|)`` is
    consulted with the norm of the best remaining column; returning True
    ends the factorization with rank ``k``.
    """
    A = np.array(S, dtype=float, order="F", copy=True)
    m, n = A.shape
    kmax = min(m, n)
    perm = np.arange(n)
    norms = np.linalg.norm(A, axis=0) if m else np.zeros(n)
    ref = norms.copy()
    taus = np.zeros(kmax)
    diag = np.zeros(kmax)
    flops.add(2 * m * n)
    r00 = 0.0
    rank = kmax
    for j in range(kmax):
        p = j + int(np.argmax(norms[j:]))
        if p != j:
            A[:, [j, p]] = A[:, [p, j]]
            perm[[j, p]] = perm[[p, j]]
            norms[[j, p]] = norms[[p, j]]
            ref[[j, p]] = ref[[p, j]]
        x = A[j:, j]
        rjj = float(np.linalg.norm(x))
        flops.add(2 * (m - j))
        if j == 0:
            r00 = rjj
        if stop(j, rjj, r00):
            rank = j
            break
        diag[j] = rjj
        if rjj == 0.0:
            continue
        sign = 1.0 if x[0] >= 0.0 else -1.0
        v0 = x[0] + sign * rjj
        v = x / v0
        v[0] = 1.0
        tau = v0 / (sign * rjj)
        taus[j] = tau
        A[j, j] = -sign * rjj
        A[j + 1 :, j] = v[1:]
        if j + 1 < n:
            trail = A[j:, j + 1 :]
            trail -= tau * np.outer(v, v @ trail)
            flops.add(4 * (m - j) * (n - j - 1))
            # downdate trailing column norms
            rest = norms[j + 1 :]
            rest[:] = np.sqrt(np.maximum(rest**2 - A[j, j + 1 :] ** 2, 0.0))
            flops.add(3 * (n - j - 1))
            stale = np.nonzero(rest < NORM_RECOMPUTE_FRACTION * ref[j + 1 :])[0]
            if stale.size:
                cols = stale + j + 1
                fresh = np.linalg.norm(A[j + 1 :, cols], axis=0) if j + 1 < m else np.zeros(cols.size)
                norms[cols] = fresh
                ref[cols] = fresh
                flops.add(2 * (m - j - 1) * cols.size)
    return PivotedQR(packed=A, taus=taus, perm=perm, rank=rank, diag=diag[:rank])


def _tolerance_rule(eps_rel: float, eps_abs: float) -> StopRule:
    def stop(k: int, rkk: float, r00: float) -> bool:
        if rkk <= eps_abs:
            return True
        return r00 > 0.0 and rkk / r00 <= eps_rel

    return stop


def hmt_factor(k: int, n_samples: int, m_orig: int, n_orig: int) -> float:
    """Tolerance deflation applied at candidate rank ``k`` when only
    ``n_samples - k - 1`` samples are left over as oversampling."""
    spare = n_samples - k - 1
    if spare <= 0:
        return math.inf
    return 1.0 + 4.0 * math.sqrt(n_samples) / spare * math.sqrt(min(m_orig, n_orig))


def _hmt_rule(
    eps_rel: float, eps_abs: float, factor: Callable[[int], float]
) -> StopRule:
    def stop(k: int, rkk: float, r00: float) -> bool:
        if rkk == 0.0:
            # nothing left to factor, whatever the deflation
            return True
        f = factor(k)
        if math.isinf(f):
            return False
        if rkk <= eps_abs / f:
            return True
        return r00 > 0.0 and rkk / r00 <= eps_rel / f

    return stop


def rrqr(
    S: np.ndarray, eps_rel: float, eps_abs: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Rank-revealing QR with column pivoting.

    Stops at the first k with ``|R_kk| <= eps_abs`` or
    ``|R_kk| / |R_00| <= eps_rel``.  Returns ``(Q, R, perm, rank)`` with Q of
    shape (m, rank) and R of shape (rank, n) in pivoted column order.
    """
    f = pivoted_qr(S, _tolerance_rule(eps_rel, eps_abs))
    return f.Q(), f.R, f.perm, f.rank


@dataclass(frozen=True)
class HmtParams:
    """Sample count and original Hankel block shape for :func:`rrqr_hmt`."""

    d0: int
    p: int
    m_orig: int
    n_orig: int

    def factor(self, k: int) -> float:
        return hmt_factor(k, self.d0 + self.p, self.m_orig, self.n_orig)


def _hmt_factorization(
    S: np.ndarray,
    params: HmtParams,
    eps_rel: float,
    eps_abs: float,
    factor: Callable[[int], float] | None = None,
) -> PivotedQR:
    return pivoted_qr(S, _hmt_rule(eps_rel, eps_abs, factor or params.factor))


def rrqr_hmt(
    S: np.ndarray,
    d0: int,
    p: int,
    m_orig: int,
    n_orig: int,
    eps_rel: float,
    eps_abs: float,
    factor: Callable[[int], float] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """:func:`rrqr` with both tolerances divided by :func:`hmt_factor`.

    ``m_orig`` and ``n_orig`` are the dimensions of the block that was
    sampled, not of ``S``.  ``factor`` overrides the deflation (used to
    check the limit where it tends to one).
    """
    params = HmtParams(d0, p, m_orig, n_orig)
    f = _hmt_factorization(S, params, eps_rel, eps_abs, factor)
    return f.Q(), f.R, f.perm, f.rank


# --------------------------------------------------------------------------
# interpolative decomposition


@dataclass
class IdResult:
    """Row ID ``S ~= U @ S[selected]`` with ``U = P [I; E]``.

    ``selected`` are the skeleton rows, ``rest`` the remaining rows in
    pivot order and ``coeff`` (E) maps skeleton rows onto ``rest``.
    """

    selected: np.ndarray
    rest: np.ndarray
    coeff: np.ndarray
    perm: np.ndarray
    rank: int

    @property
    def n(self) -> int:
        return self.selected.size + self.rest.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        """U @ x."""
        x = np.asarray(x, dtype=float)
        out = np.empty((self.n,) + x.shape[1:])
        out[self.selected] = x
        out[self.rest] = self.coeff @ x
        cols = x.shape[1] if x.ndim == 2 else 1
        flops.add(2 * self.rest.size * self.rank * cols)
        return out

    def apply_t(self, y: np.ndarray) -> np.ndarray:
        """U.T @ y."""
        y = np.asarray(y, dtype=float)
        cols = y.shape[1] if y.ndim == 2 else 1
        flops.add(2 * self.rest.size * self.rank * cols)
        return y[self.selected] + self.coeff.T @ y[self.rest]

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.rank))

    @property
    def n_stored(self) -> int:
        return int(self.coeff.size)


def interp_decomp(
    St: np.ndarray,
    eps_rel: float,
    eps_abs: float,
    hmt: HmtParams | None = None,
    max_rank: int | None = None,
) -> IdResult:
    """Interpolative decomposition from the transposed sample ``St = S.T``.

    Pivoted QR of ``St`` picks columns of ``St`` (rows of S);
    ``E = (R1^-1 R2).T``.  With ``hmt`` the truncation uses the deflated
    tolerances of :func:`rrqr_hmt`.  Raises :class:`IdFailed` if the rank
    exceeds ``max_rank`` or R1 is numerically singular.
    """
    St = np.asarray(St, dtype=float)
    if hmt is None:
        f = pivoted_qr(St, _tolerance_rule(eps_rel, eps_abs))
    else:
        f = _hmt_factorization(St, hmt, eps_rel, eps_abs)
    k = f.rank
    n = St.shape[1]
    if max_rank is not None and k > max_rank:
        raise IdFailed(f"rank {k} exceeds the {max_rank} supported by the samples")
    if k and np.min(np.abs(np.diag(f.packed[:k, :k]))) < R1_BREAKDOWN:
        raise IdFailed("R1 is numerically singular")
    if k and n > k:
        R1 = np.triu(f.packed[:k, :k])
        X = la.solve_triangular(R1, f.packed[:k, k:], lower=False)
        flops.add(k * k * (n - k))
    else:
        X = np.zeros((k, n - k))
    return IdResult(
        selected=f.perm[:k].copy(),
        rest=f.perm[k:].copy(),
        coeff=np.ascontiguousarray(X.T),
        perm=f.perm.copy(),
        rank=k,
    )


def block_gram_schmidt(Q: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``(I - Q Q^T)^2 S`` as two classical block Gram-Schmidt passes."""
    S = np.asarray(S, dtype=float)
    if Q.shape[1] == 0:
        return S.copy()
    m, q = Q.shape
    c = S.shape[1]
    out = S
    for _ in range(2):
        out = out - Q @ (Q.T @ out)
        flops.add(4 * m * q * c)
    return out

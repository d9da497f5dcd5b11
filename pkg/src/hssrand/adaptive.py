"""Adaptive range finders for a single sampled block.

Two ways of growing a Gaussian sample until it captures the range of a
block to a relative or absolute tolerance:

* :func:`rs_doubling` redoes a deflated rank-revealing QR on the whole
  sample each round and doubles the column count on failure.
* :func:`rs_incrementing` adds a fixed number of columns per round,
  orthogonalizes them against the basis found so far and only runs the
  rank-revealing factorization once a stopping test fires.

Both take a ``sampler(k)`` callback returning ``k`` fresh sample columns of
the block, so the same code serves standalone blocks and HSS nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import flops
from .dense import block_gram_schmidt, rrqr, rrqr_hmt

Sampler = Callable[[int], np.ndarray]

CRITERIA = ("C1", "C2", "C3", "C4")
# extra label: the basis already spans every row of the block
FULL = "FULL"
# label used by the HMT-style absolute test
HMT = "HMT"

RHO_POLICIES = ("first", "max_first", "max_all")


class MaxColumns(RuntimeError):
    """No more sample columns may be drawn and the tests have not fired."""


@dataclass(frozen=True)
class StopCriteria:
    eps_rel: float
    eps_abs: float
    # how rho is taken from the R factors of the orthogonalized blocks:
    # "first" = |R_1[0, 0]|, "max_first" = max |diag R_1|,
    # "max_all" = max over every block so far
    rho_policy: str = "first"

    def __post_init__(self) -> None:
        if self.eps_rel < 0 or self.eps_abs < 0:
            raise ValueError("tolerances must be non-negative")
        if self.rho_policy not in RHO_POLICIES:
            raise ValueError(f"rho_policy must be one of {RHO_POLICIES}")


def eval_stop(
    S_hat: np.ndarray,
    S: np.ndarray,
    r_diag: np.ndarray | None,
    rho: float,
    crit: StopCriteria,
    d: int,
) -> frozenset[str]:
    """Which of the four stopping conditions hold (strict inequalities).

    C1: min |r| < eps_rel * rho        C2: min |r| < eps_abs
    C3: |S_hat|_F / |S|_F < eps_rel    C4: |S_hat|_F / sqrt(d) < eps_abs

    ``r_diag=None`` skips C1 and C2 (no QR done yet).
    """
    fired = set()
    if r_diag is not None and len(r_diag):
        rmin = float(np.min(np.abs(r_diag)))
        if rmin < crit.eps_rel * rho:
            fired.add("C1")
        if rmin < crit.eps_abs:
            fired.add("C2")
    nh = float(np.linalg.norm(S_hat))
    ns = float(np.linalg.norm(S))
    ratio = 0.0 if nh == 0.0 else (nh / ns if ns > 0.0 else math.inf)
    if ratio < crit.eps_rel:
        fired.add("C3")
    if d > 0 and nh / math.sqrt(d) < crit.eps_abs:
        fired.add("C4")
    return frozenset(fired)


def _qr_any(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR that also accepts wide input (Q is then square)."""
    m, c = S.shape
    k = min(m, c)
    flops.add(2 * m * c * k)
    return np.linalg.qr(S, mode="reduced")


class IncrementalRange:
    """Basis grown block by block under the four-way stopping test."""

    def __init__(self, m: int, crit: StopCriteria):
        self.m = m
        self.crit = crit
        self.Q = np.zeros((m, 0))
        self.rho = 0.0
        self.fired: frozenset[str] = frozenset()

    @property
    def done(self) -> bool:
        return bool(self.fired)

    def absorb(self, S: np.ndarray) -> frozenset[str]:
        """Feed one new sample block; returns the conditions that fired."""
        if self.done:
            return self.fired
        S = np.asarray(S, dtype=float)
        d = S.shape[1]
        if self.Q.shape[1] >= self.m:
            self.fired = frozenset({FULL})
            return self.fired
        with flops.phase("orthogonalize"):
            S_hat = block_gram_schmidt(self.Q, S)
        fired = eval_stop(S_hat, S, None, self.rho, self.crit, d)
        if fired:
            self.fired = fired
            return fired
        with flops.phase("qr"):
            Qk, Rk = _qr_any(S_hat)
        diag = np.abs(np.diag(Rk))
        if self.crit.rho_policy == "first":
            rho = self.rho if self.Q.shape[1] else float(diag[0])
        elif self.crit.rho_policy == "max_first":
            rho = self.rho if self.Q.shape[1] else float(diag.max())
        else:
            rho = max(self.rho, float(diag.max()))
        self.rho = rho
        fired = eval_stop(S_hat, S, diag, rho, self.crit, d)
        if fired:
            self.fired = fired
            return fired
        room = self.m - self.Q.shape[1]
        self.Q = np.hstack([self.Q, Qk[:, :room]])
        if self.Q.shape[1] >= self.m:
            self.fired = frozenset({FULL})
        return self.fired


def hmt_bound(max_col_norm: float, alpha: float, p: int) -> tuple[float, float]:
    """Probabilistic 2-norm bound from ``p`` Gaussian probes.

    ``|B|_2 <= alpha sqrt(2/pi) max_i |B w_i|`` except with probability
    ``alpha**-p``.  Returns ``(bound, failure_probability)``.
    """
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    if p < 1:
        raise ValueError("p must be positive")
    return alpha * math.sqrt(2.0 / math.pi) * max_col_norm, alpha ** (-p)


HMT_ALPHA = 10.0


class HmtRange:
    """Basis grown until the HMT absolute bound on the residual is met."""

    def __init__(self, m: int, eps_abs: float, alpha: float = HMT_ALPHA):
        self.m = m
        self.eps_abs = eps_abs
        self.alpha = alpha
        self.Q = np.zeros((m, 0))
        self.fired: frozenset[str] = frozenset()

    @property
    def done(self) -> bool:
        return bool(self.fired)

    def absorb(self, S: np.ndarray) -> frozenset[str]:
        if self.done:
            return self.fired
        S = np.asarray(S, dtype=float)
        if self.Q.shape[1] >= self.m:
            self.fired = frozenset({FULL})
            return self.fired
        with flops.phase("orthogonalize"):
            S_hat = block_gram_schmidt(self.Q, S)
        colmax = float(np.max(np.linalg.norm(S_hat, axis=0))) if S.size else 0.0
        bound, _ = hmt_bound(colmax, self.alpha, max(S.shape[1], 1))
        if bound <= self.eps_abs:
            self.fired = frozenset({HMT})
            return self.fired
        with flops.phase("qr"):
            Qk, _ = _qr_any(S_hat)
        room = self.m - self.Q.shape[1]
        self.Q = np.hstack([self.Q, Qk[:, :room]])
        if self.Q.shape[1] >= self.m:
            self.fired = frozenset({FULL})
        return self.fired


# --------------------------------------------------------------------------
# traced drivers


@dataclass
class AdaptRound:
    d_before: int
    d_added: int
    criterion_fired: tuple[str, ...] | None
    flops: int
    rank_if_final: int | None = None


@dataclass
class AdaptTrace:
    rounds: list[AdaptRound] = field(default_factory=list)
    rrqr_count: int = 0

    @property
    def columns(self) -> int:
        return sum(r.d_added for r in self.rounds)

    @property
    def rank(self) -> int | None:
        return self.rounds[-1].rank_if_final if self.rounds else None


def _column_limit(m: int, first: int, max_columns: int | None) -> int:
    return max(m, first) if max_columns is None else max_columns


def rs_incrementing(
    sampler: Sampler,
    m: int,
    d0: int,
    delta_d: int,
    eps_rel: float,
    eps_abs: float,
    max_columns: int | None = None,
    rho_policy: str = "first",
) -> tuple[np.ndarray, AdaptTrace]:
    """Incrementing range finder; one rank-revealing QR at the very end.

    Raw sample blocks are kept and the final factorization runs on all of
    them.  Raises :class:`MaxColumns` if the stopping tests have not fired
    once ``max_columns`` (default: the row count) columns are drawn.
    """
    if d0 < 1 or delta_d < 1:
        raise ValueError("d0 and delta_d must be positive")
    crit = StopCriteria(eps_rel, eps_abs, rho_policy)
    limit = _column_limit(m, d0, max_columns)
    state = IncrementalRange(m, crit)
    trace = AdaptTrace()
    blocks: list[np.ndarray] = []
    d, k = 0, d0
    while True:
        if d and d >= limit:
            raise MaxColumns(f"stopping tests did not fire within {limit} columns")
        k = min(k, limit - d) if d else k
        with flops.counting() as c:
            with flops.phase("sampling"):
                S = np.asarray(sampler(k), dtype=float)
            blocks.append(S)
            fired = state.absorb(S)
        trace.rounds.append(
            AdaptRound(d, k, tuple(sorted(fired)) or None, c.total)
        )
        d += k
        if fired:
            break
        k = delta_d
    with flops.counting() as c, flops.phase("qr"):
        Q, _, _, rank = rrqr(np.hstack(blocks), eps_rel, eps_abs)
    trace.rrqr_count = 1
    last = trace.rounds[-1]
    last.flops += c.total
    last.rank_if_final = rank
    return Q, trace


def rs_doubling(
    sampler: Sampler,
    m: int,
    d0: int,
    p: int,
    eps_rel: float,
    eps_abs: float,
    n: int | None = None,
    max_columns: int | None = None,
) -> tuple[np.ndarray, AdaptTrace]:
    """Doubling range finder with a deflated rank-revealing QR every round.

    Round ``k`` (1-based) factors the whole sample and accepts the rank
    ``r`` if ``r < 2**(k-1) * d0`` or if ``r`` equals the row count;
    otherwise ``2**(k-1) * d0 + p`` columns are appended.  ``n`` is the
    column count of the sampled block (default ``m``).
    """
    if d0 < 1 or p < 0:
        raise ValueError("need d0 >= 1 and p >= 0")
    n_orig = m if n is None else n
    limit = _column_limit(m, d0 + p, max_columns)
    trace = AdaptTrace()
    blocks: list[np.ndarray] = []
    d, add, k = 0, d0 + p, 1
    while True:
        with flops.counting() as c:
            with flops.phase("sampling"):
                blocks.append(np.asarray(sampler(add), dtype=float))
            S = np.hstack(blocks)
            cols = S.shape[1]
            with flops.phase("qr"):
                Q, _, _, r = rrqr_hmt(S, cols - p, p, m, n_orig, eps_rel, eps_abs)
        trace.rrqr_count += 1
        accept = r < 2 ** (k - 1) * d0 or r == m
        trace.rounds.append(
            AdaptRound(d, add, ("RRQR",) if accept else None, c.total, r if accept else None)
        )
        d = cols
        if accept:
            return Q, trace
        if d >= limit:
            raise MaxColumns(f"rank not revealed within {limit} columns")
        add = min(2 ** (k - 1) * d0 + p, limit - d)
        k += 1

"""Analytic flop and communication models for the two adaptation strategies.

Communication is priced as a :class:`CostPair` ``[#messages, #words]``
along the critical path of ``P`` processes.  Logarithms are base 2.
Nothing here measures real traffic; the point is to compare Doubling and
Incrementing at scales that cannot be run on a desk.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


class PreconditionViolated(UserWarning):
    """A formula was evaluated outside the regime it was derived for."""


@dataclass(frozen=True)
class CostPair:
    messages: float
    words: float

    def __post_init__(self) -> None:
        if self.messages < 0 or self.words < 0:
            raise ValueError("cost components must be non-negative")

    def __add__(self, other: "CostPair") -> "CostPair":
        return CostPair(self.messages + other.messages, self.words + other.words)

    def __mul__(self, k: float) -> "CostPair":
        return CostPair(self.messages * k, self.words * k)

    __rmul__ = __mul__

    def as_list(self) -> list[float]:
        return [self.messages, self.words]


ZERO = CostPair(0.0, 0.0)


@dataclass(frozen=True)
class MachineParams:
    P: int
    NB: int = 64  # block size
    L: int = 1  # levels of process halving below the node

    def __post_init__(self) -> None:
        if self.P < 1 or self.NB < 1 or self.L < 1:
            raise ValueError("P, NB and L must be positive")


def _log(P: float) -> float:
    if P < 1:
        raise ValueError("P must be at least 1")
    return math.log2(P)


def _pair_sum(pairs) -> CostPair:
    total = ZERO
    for c in pairs:
        total = total + c
    return total


def cost_broadcast(P: int, w: float) -> CostPair:
    lg = _log(P)
    return CostPair(lg, w * lg)


def _check_tall(m: int, n: int, P: int) -> None:
    if n > 0 and m / P < n:
        warnings.warn(
            f"QR cost model assumes m/P >= n (m={m}, n={n}, P={P})",
            PreconditionViolated,
            stacklevel=3,
        )


def cost_pdgeqrf(m: int, n: int, P: int) -> CostPair:
    """Unpivoted distributed QR of an m x n matrix."""
    _check_tall(m, n, P)
    lg = _log(P)
    return CostPair(2 * n * lg, m * n / math.sqrt(P) * lg)


def cost_pdgeqpf(m: int, n: int, P: int) -> CostPair:
    """Column-pivoted QR: one extra norm reduction per column."""
    _check_tall(m, n, P)
    lg = _log(P)
    return CostPair(3 * n * lg, m * n / math.sqrt(P) * lg)


def cost_pxgemm(M: int, K: int, N_dim: int, P: int) -> CostPair:
    """Pipelined SUMMA for an (M x K) @ (K x N) product.

    The largest of A (M x K), B (K x N) and C (M x N) stays put and the two
    others move; ties keep C in place, then A.  The loop runs over the
    dimension the stationary matrix lacks, one message per step.
    """
    if min(M, K, N_dim) < 1:
        raise ValueError("dimensions must be positive")
    _log(P)
    sizes = {"C": M * N_dim, "A": M * K, "B": K * N_dim}
    stationary = max(("C", "A", "B"), key=lambda k: sizes[k])  # first wins ties
    loop, outer = {
        "A": (N_dim, max(M, K)),
        "B": (M, max(K, N_dim)),
        "C": (K, max(M, N_dim)),
    }[stationary]
    return CostPair(float(loop), loop * outer / math.sqrt(P))


def cost_scalapack_panel(N: int, NB: int, P: int) -> CostPair:
    """``[log P * N/NB, log P * N^2/sqrt(P)]``, the generic ScaLAPACK line."""
    lg = _log(P)
    return CostPair(lg * N / NB, lg * N * N / math.sqrt(P))


# --------------------------------------------------------------------------
# adaptation strategies


@dataclass(frozen=True)
class ClosedVsSum:
    """A closed form next to the term-by-term sum it approximates."""

    closed: CostPair
    term_sum: CostPair
    steps: int

    @property
    def ratio(self) -> tuple[float, float]:
        def r(a: float, b: float) -> float:
            return 1.0 if a == b else (a / b if b else math.inf)

        return (
            r(self.term_sum.messages, self.closed.messages),
            r(self.term_sum.words, self.closed.words),
        )

    @property
    def asymptotic_ok(self) -> bool:
        """Whether the closed form is within 5% of the sum."""
        return all(abs(x - 1.0) <= 0.05 for x in self.ratio)


def doubling_steps(r: int, d0: int) -> int:
    if r < 1 or d0 < 1:
        raise ValueError("r and d0 must be positive")
    return max(0, math.ceil(math.log2(r / d0))) if r > d0 else 0


def incrementing_steps(r: int, delta_d: int) -> int:
    if r < 1 or delta_d < 1:
        raise ValueError("r and delta_d must be positive")
    return max(1, math.ceil(r / delta_d))


def cost_doubling_comm(r: int, d0: int, m: int, P: int) -> ClosedVsSum:
    """Pivoted QR of the m x d0 2^k sample for k = 0..s, s = ceil(log(r/d0))."""
    lg, sq = _log(P), math.sqrt(P)
    s = doubling_steps(r, d0)
    closed = CostPair(6 * r * lg, 2 * m * r / sq * lg)
    terms = (
        CostPair(3 * d0 * 2**k * lg, m * d0 * 2**k / sq * lg) for k in range(s + 1)
    )
    return ClosedVsSum(closed, _pair_sum(terms), s)


def cost_doubling_comm_legacy(r: int, d0: int, m: int, P: int, NB: int) -> ClosedVsSum:
    """Earlier accounting: one message per panel of width NB."""
    lg, sq = _log(P), math.sqrt(P)
    s = doubling_steps(r, d0)
    closed = CostPair(2 * r / NB * lg, 2 * r * m / sq * lg)
    terms = (
        CostPair(d0 * 2**i / NB * lg, m * d0 * 2**i / sq * lg) for i in range(s + 1)
    )
    return ClosedVsSum(closed, _pair_sum(terms), s)


@dataclass(frozen=True)
class IncrementingComm:
    gs: ClosedVsSum
    qr: ClosedVsSum
    final_rrqr: CostPair

    @property
    def total(self) -> CostPair:
        """Leading cost; Gram-Schmidt is lower order and left out."""
        return self.qr.closed + self.final_rrqr


def cost_incrementing_comm(r: int, delta_d: int, m: int, P: int) -> IncrementingComm:
    lg, sq = _log(P), math.sqrt(P)
    s = incrementing_steps(r, delta_d)
    gs_closed = CostPair(4 * r, 4 * (m * r + r * r / 2) / sq)
    gs_terms = (
        CostPair(4 * delta_d, 4 * delta_d * (m + delta_d * k) / sq) for k in range(1, s + 1)
    )
    qr_closed = CostPair(2 * r * lg, m * r / sq * lg)
    qr_terms = (
        CostPair(2 * delta_d * lg, m * delta_d / sq * lg) for _ in range(s)
    )
    return IncrementingComm(
        gs=ClosedVsSum(gs_closed, _pair_sum(gs_terms), s),
        qr=ClosedVsSum(qr_closed, _pair_sum(qr_terms), s),
        final_rrqr=CostPair(3 * r * lg, m * r / sq * lg),
    )


@dataclass(frozen=True)
class Redistribution:
    per_restart: CostPair
    all_restarts: ClosedVsSum
    receiver: CostPair
    sender: CostPair


def cost_redistribution(m: int, delta_d: int, P: int, L: int, r: int | None = None) -> Redistribution:
    """Moving a child's new samples to the processes of a partial node.

    ``r`` (default ``delta_d``) is the final rank, so there are
    ``r / delta_d`` restarts.
    """
    if P < 2:
        raise ValueError("redistribution needs P >= 2")
    r = delta_d if r is None else r
    s = incrementing_steps(r, delta_d)
    per = CostPair(2 * P, L * m * delta_d / P)
    closed = CostPair(2 * P * r / delta_d, L * m * r / P)
    return Redistribution(
        per_restart=per,
        all_restarts=ClosedVsSum(closed, per * s, s),
        receiver=CostPair(P / 2, (m / 2) * delta_d / P),
        sender=CostPair(P, (m / 2) * delta_d / (P / 2)),
    )


def cost_redistribution_legacy(m: int, r: int, d0: int, P: int, L: int) -> ClosedVsSum:
    """Doubling restarts: restart i moves d0 2^(i-1) new columns."""
    if P < 2:
        raise ValueError("redistribution needs P >= 2")
    s = doubling_steps(r, d0)
    closed = CostPair(2 * P * math.log2(r / d0) if r > d0 else 0.0, 2 * r * m / P * L)
    terms = (CostPair(2 * P, m * d0 * 2**i / P * L) for i in range(1, s + 1))
    return ClosedVsSum(closed, _pair_sum(terms), s)


# --------------------------------------------------------------------------
# flops


@dataclass(frozen=True)
class FlopModel:
    total: float  # exact step sum
    leading: float  # leading-order closed form
    steps: int
    bracket: tuple[float, float] | None = None
    worst_case: float | None = None


def flops_doubling(m: int, r: int, d0: int, p: int = 0) -> FlopModel:
    """RRQR of ``m x 2^k d0`` samples for k = 1..N, then a final ``2 m r^2``.

    ``p`` only shifts lower-order terms and is ignored by the model.
    ``worst_case`` adds the round spent when the rank is just missed.
    """
    if r < d0:
        raise ValueError("model assumes r >= d0")
    N = doubling_steps(r, d0)
    step = lambda k: 2 * m * (2**k * d0) ** 2  # noqa: E731
    total = math.fsum(step(k) for k in range(1, N + 1)) + 2 * m * r * r
    worst = total + step(N + 1)
    leading = (8.0 / 3.0 + 2.0) * m * r * r
    return FlopModel(total, leading, N, (4.0 * m * r * r, 16.0 * m * r * r), worst)


def flops_incrementing(m: int, r: int, d0: int, delta_d: int) -> FlopModel:
    """Per step k: ``8 m (k-1) dd^2`` Gram-Schmidt plus ``2 m dd^2`` QR;
    then a final ``2 m r^2`` RRQR."""
    if r < d0:
        raise ValueError("model assumes r >= d0")
    N = incrementing_steps(r, delta_d)
    dd2 = delta_d * delta_d
    total = math.fsum(8 * m * (k - 1) * dd2 + 2 * m * dd2 for k in range(1, N + 1))
    total += 2 * m * r * r
    return FlopModel(total, 6.0 * m * r * r, N)

"""Tail bounds for the Gaussian Frobenius-norm estimator.

For ``x`` with iid N(0, 1) entries, ``E |A x|^2 = |A|_F^2``; averaging ``d``
such draws gives the estimator ``Xbar_d`` behind ``fro_estimate``.  The
Chernoff bounds below (with the fixed parameter ``t = d / (2 |A|_F^2)``)
say how unlikely it is to land far from the mean.  Everything is done in
log space because ``|A|_F^(d r)`` overflows quickly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dense import RngStream, randn

# normals drawn per Monte Carlo chunk
_MC_CHUNK = 1 << 22


class RankOne(ValueError):
    """The bounds need at least two nonzero singular values."""


class BadTau(ValueError):
    pass


@dataclass(frozen=True)
class Spectrum:
    sigmas: tuple[float, ...]

    def __init__(self, sigmas):
        s = tuple(float(x) for x in sigmas)
        if not s:
            raise ValueError("empty spectrum")
        if any(not (x > 0.0) or math.isinf(x) for x in s):
            raise ValueError("singular values must be positive and finite")
        if any(a < b for a, b in zip(s, s[1:])):
            raise ValueError("singular values must be sorted in descending order")
        object.__setattr__(self, "sigmas", s)

    @property
    def rank(self) -> int:
        return len(self.sigmas)

    @property
    def fro2(self) -> float:
        return math.fsum(x * x for x in self.sigmas)

    def a_prime(self) -> np.ndarray:
        """``sqrt(|A|_F^2 - sigma_k^2)`` per k."""
        s = np.asarray(self.sigmas)
        return np.sqrt(self.fro2 - s**2)

    def a_double_prime(self) -> np.ndarray:
        """``sqrt(|A|_F^2 + sigma_k^2)`` per k."""
        s = np.asarray(self.sigmas)
        return np.sqrt(self.fro2 + s**2)

    def _need_rank_two(self) -> None:
        if self.rank < 2:
            raise RankOne("tail bounds do not apply to rank-one spectra")


def fro_estimate(S: np.ndarray) -> float:
    """``|S|_F / sqrt(d)`` for ``S = A R`` with ``d`` Gaussian columns."""
    S = np.asarray(S, dtype=float)
    d = S.shape[1]
    if d < 1:
        raise ValueError("need at least one sample column")
    return float(np.linalg.norm(S)) / math.sqrt(d)


def log_upper_tail_bound(spec: Spectrum, d: int, tau: float) -> float:
    spec._need_rank_two()
    if not tau > 1.0:
        raise BadTau("upper tail needs tau > 1")
    log_fro = 0.5 * math.log(spec.fro2)
    terms = log_fro - np.log(spec.a_prime())
    return -d * tau / 2.0 + d * math.fsum(terms)


def upper_tail_bound(spec: Spectrum, d: int, tau: float) -> float:
    """Bound on ``P[Xbar_d >= tau |A|_F^2]`` for ``tau > 1``.  May exceed 1."""
    return math.exp(log_upper_tail_bound(spec, d, tau))


def log_lower_tail_bound(spec: Spectrum, d: int, tau: float) -> float:
    spec._need_rank_two()
    if not 0.0 <= tau < 1.0:
        raise BadTau("lower tail needs 0 <= tau < 1")
    log_fro = 0.5 * math.log(spec.fro2)
    terms = log_fro - np.log(spec.a_double_prime())
    return d * tau / 2.0 + d * math.fsum(terms)


def lower_tail_bound(spec: Spectrum, d: int, tau: float) -> float:
    """Bound on ``P[Xbar_d <= tau |A|_F^2]`` for ``0 <= tau < 1``."""
    return math.exp(log_lower_tail_bound(spec, d, tau))


def decay_conditions(spec: Spectrum) -> dict[str, float]:
    """Thresholds past which the bounds decay exponentially in ``d``.

    Upper side: ``tau > 1 + sigma_1^2 / (|A|_F^2 - sigma_1^2)``.
    Lower side: ``tau < ln 2``.
    """
    spec._need_rank_two()
    s1 = spec.sigmas[0] ** 2
    return {
        "upper_threshold": 1.0 + s1 / (spec.fro2 - s1),
        "lower_threshold": math.log(2.0),
    }


def sample_xbar(spec: Spectrum, d: int, trials: int, rng: RngStream) -> np.ndarray:
    """``trials`` draws of ``Xbar_d = mean_i sum_k sigma_k^2 xi_ik^2``."""
    if trials < 1 or d < 1:
        raise ValueError("trials and d must be positive")
    w = np.asarray(spec.sigmas) ** 2
    per_trial = d * spec.rank
    chunk = max(1, _MC_CHUNK // per_trial)
    out = np.empty(trials)
    for lo in range(0, trials, chunk):
        k = min(chunk, trials - lo)
        xi = randn(rng, per_trial, k)  # one column per trial
        x = (xi.reshape(d, spec.rank, k) ** 2 * w[None, :, None]).sum(axis=1)
        out[lo : lo + k] = x.mean(axis=0)
    return out


def mc_tail_probability(
    spec: Spectrum,
    d: int,
    tau: float,
    side: str,
    trials: int,
    rng: RngStream,
) -> float:
    """Empirical ``P[Xbar_d >= tau |A|_F^2]`` (upper) or ``<=`` (lower)."""
    if side not in ("upper", "lower"):
        raise ValueError("side must be 'upper' or 'lower'")
    x = sample_xbar(spec, d, trials, rng)
    level = tau * spec.fro2
    hits = x >= level if side == "upper" else x <= level
    return float(np.count_nonzero(hits)) / trials


def tail_bound(spec: Spectrum, d: int, tau: float, side: str) -> float:
    if side == "upper":
        return upper_tail_bound(spec, d, tau)
    if side == "lower":
        return lower_tail_bound(spec, d, tau)
    raise ValueError("side must be 'upper' or 'lower'")

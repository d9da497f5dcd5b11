"""Phase-tagged flop accounting.

Kernels call :func:`add` with an exact operation count; the count lands in
every active :class:`FlopCounter` (see :func:`counting`; counters nest)
under the current phase (see :func:`phase`).  Nothing is recorded when no
counter is active, so the kernels stay usable on their own.
"""
from __future__ import annotations

import contextvars
import threading
import time
from collections import Counter
from contextlib import contextmanager
from typing import Iterator

PHASES = (
    "sampling",
    "id",
    "qr",
    "orthogonalize",
    "compute_samples",
    "reduce_samples",
    "matvec",
    "other",
)

_counters: contextvars.ContextVar[tuple["FlopCounter", ...]] = contextvars.ContextVar(
    "hssrand_flop_counters", default=()
)
_phase: contextvars.ContextVar[str] = contextvars.ContextVar(
    "hssrand_flop_phase", default="other"
)
# time spent in phases nested inside the current one (exclusive timing)
_inner: contextvars.ContextVar[list[float] | None] = contextvars.ContextVar(
    "hssrand_phase_inner", default=None
)


class FlopCounter:
    """Integer flop totals keyed by phase.  Safe to share between threads.

    ``seconds`` holds exclusive wall time per phase; informational only.
    """

    def __init__(self) -> None:
        self.by_phase: Counter[str] = Counter()
        self.seconds: Counter[str] = Counter()
        self._lock = threading.Lock()

    def add(self, phase_name: str, n: int) -> None:
        with self._lock:
            self.by_phase[phase_name] += int(n)

    def add_time(self, phase_name: str, sec: float) -> None:
        with self._lock:
            self.seconds[phase_name] += sec

    @property
    def total(self) -> int:
        return sum(self.by_phase.values())

    def as_dict(self) -> dict[str, int]:
        return {p: int(self.by_phase.get(p, 0)) for p in PHASES}


def add(n: int) -> None:
    counters = _counters.get()
    if counters:
        name = _phase.get()
        for c in counters:
            c.add(name, n)


@contextmanager
def counting(counter: FlopCounter | None = None) -> Iterator[FlopCounter]:
    c = counter if counter is not None else FlopCounter()
    token = _counters.set(_counters.get() + (c,))
    try:
        yield c
    finally:
        _counters.reset(token)


@contextmanager
def phase(name: str) -> Iterator[None]:
    if name not in PHASES:
        raise ValueError(f"unknown flop phase {name!r}")
    token = _phase.set(name)
    outer = _inner.get()
    inner = [0.0]
    itoken = _inner.set(inner)
    t0 = time.perf_counter()
    try:
        yield
    finally:
        elapsed = time.perf_counter() - t0
        _inner.reset(itoken)
        _phase.reset(token)
        if outer is not None:
            outer[0] += elapsed
        for c in _counters.get():
            c.add_time(name, elapsed - inner[0])


def gemm(m: int, n: int, k: int) -> int:
    """Flops of an (m x k) @ (k x n) product."""
    return 2 * m * n * k

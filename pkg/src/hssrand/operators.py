"""Partially matrix-free inputs: random sampling plus element extraction.

A :class:`MatrixSource` only has to provide ``A @ R``, ``A.T @ R`` and
sub-blocks ``A[I, J]``.  The built-in kernels exploit their structure where
cheap; :meth:`MatrixSource.dense` materializes the whole matrix for
verification.
"""
from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import flops
from .dense import RngStream, randn


class IndexOutOfRange(IndexError):
    pass


class MatrixSource(ABC):
    n: int

    @abstractmethod
    def _multiply(self, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    @abstractmethod
    def _extract(self, I: np.ndarray, J: np.ndarray) -> np.ndarray: ...

    def multiply(self, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(A @ R, A.T @ R)``."""
        R = np.asarray(R, dtype=float)
        if R.ndim != 2 or R.shape[0] != self.n:
            raise ValueError(f"R must have {self.n} rows, got shape {R.shape}")
        return self._multiply(R)

    def extract(self, I: Sequence[int], J: Sequence[int]) -> np.ndarray:
        I = np.asarray(I, dtype=np.intp).reshape(-1)
        J = np.asarray(J, dtype=np.intp).reshape(-1)
        for idx in (I, J):
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise IndexOutOfRange(f"indices must lie in [0, {self.n})")
        return self._extract(I, J)

    def dense(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self.extract(idx, idx)


class ExplicitDense(MatrixSource):
    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError("ExplicitDense needs a square matrix")
        if not np.all(np.isfinite(data)):
            raise ValueError("matrix entries must be finite")
        self.data = data
        self.n = data.shape[0]

    def _multiply(self, R):
        flops.add(2 * flops.gemm(self.n, R.shape[1], self.n))
        return self.data @ R, self.data.T @ R

    def _extract(self, I, J):
        return self.data[np.ix_(I, J)]

    def dense(self) -> np.ndarray:
        return self.data.copy()


def param_diag(k: int, r: int) -> float:
    """Decaying diagonal entry ``2^(-53 (k-1) / r)`` for 1-based ``k``."""
    if k < 1:
        raise ValueError("k is 1-based")
    return 2.0 ** (-53.0 * (k - 1) / r)


class ParamKernel(MatrixSource):
    """``alpha I + beta U D V^T`` kept in factored form.

    U and V are n x r with orthonormal columns (Q factors of seeded Gaussian
    matrices).  D is the identity, or ``diag(param_diag(k, r))`` when
    ``decay`` is set.
    """

    def __init__(
        self,
        n: int,
        r: int,
        alpha: float = 1.0,
        beta: float = 1.0,
        decay: bool = False,
        seed: int = 0,
    ):
        if r < 0 or r > n:
            raise ValueError("need 0 <= r <= n")
        self.n, self.r = n, r
        self.alpha, self.beta = float(alpha), float(beta)
        self.decay = decay
        rng = RngStream(seed)
        self.U = np.linalg.qr(randn(rng, n, r))[0] if r else np.zeros((n, 0))
        self.V = np.linalg.qr(randn(rng, n, r))[0] if r else np.zeros((n, 0))
        if decay:
            self.D = np.array([param_diag(k, r) for k in range(1, r + 1)])
        else:
            self.D = np.ones(r)

    def _multiply(self, R):
        d = R.shape[1]
        n, r = self.n, self.r
        Sr = self.alpha * R + self.beta * (self.U @ (self.D[:, None] * (self.V.T @ R)))
        Sc = self.alpha * R + self.beta * (self.V @ (self.D[:, None] * (self.U.T @ R)))
        flops.add(2 * (4 * n * r * d + r * d + 3 * n * d))
        return Sr, Sc

    def _extract(self, I, J):
        out = self.beta * ((self.U[I] * self.D) @ self.V[J].T)
        if self.alpha != 0.0:
            out += self.alpha * (I[:, None] == J[None, :])
        return out


def default_toeplitz_symbol(k: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + k)


class ToeplitzKernel(MatrixSource):
    """Symmetric Toeplitz matrix ``A[i, j] = t(|i - j|)``.

    Sampling uses the materialized matrix; no FFT acceleration.
    """

    def __init__(self, n: int, symbol: Callable[[np.ndarray], np.ndarray] | None = None):
        self.n = n
        self.symbol = symbol or default_toeplitz_symbol
        self.t = np.asarray(self.symbol(np.arange(n, dtype=float)), dtype=float)
        self._A: np.ndarray | None = None

    def _full(self) -> np.ndarray:
        if self._A is None:
            idx = np.arange(self.n)
            self._A = self.t[np.abs(idx[:, None] - idx[None, :])]
        return self._A

    def _multiply(self, R):
        A = self._full()
        flops.add(2 * flops.gemm(self.n, R.shape[1], self.n))
        return A @ R, A.T @ R

    def _extract(self, I, J):
        return self.t[np.abs(I[:, None] - J[None, :])]


# --------------------------------------------------------------------------
# dense matrix files

_HEADER = struct.Struct("<QQ")


def save_binary(path: str | Path, A: np.ndarray) -> None:
    """Little-endian u64 rows, u64 cols, then column-major float64 data."""
    A = np.asarray(A, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*A.shape))
        fh.write(np.asfortranarray(A).tobytes(order="F"))


def load_binary(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size :]
    if len(body) != 8 * rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} doubles, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape((rows, cols), order="F").astype(float)


def load_csv(path: str | Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def load_dense(path: str | Path) -> np.ndarray:
    """Dispatch on extension: ``.csv`` is text, anything else binary."""
    return load_csv(path) if str(path).lower().endswith(".csv") else load_binary(path)

"""HSS container: generators per tree node, matvec and dense expansion."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import flops
from .dense import IdResult
from .tree import ClusterTree

MAX_DENSE_N = 20000


class TooLarge(ValueError):
    pass


class State(enum.Enum):
    UNTOUCHED = "UNTOUCHED"
    PARTIALLY_COMPRESSED = "PARTIALLY_COMPRESSED"
    COMPRESSED = "COMPRESSED"


@dataclass
class HssNode:
    id: int
    state: State = State.UNTOUCHED
    D: np.ndarray | None = None
    B12: np.ndarray | None = None
    B21: np.ndarray | None = None
    U: IdResult | None = None
    V: IdResult | None = None
    # global row/column indices picked by the row/column IDs
    Ir: np.ndarray | None = None
    Ic: np.ndarray | None = None
    # construction scratch; cleared once the whole matrix is compressed
    Sr: np.ndarray | None = None
    Sc: np.ndarray | None = None
    Rr: np.ndarray | None = None
    Rc: np.ndarray | None = None
    scratch: dict[str, Any] = field(default_factory=dict)

    @property
    def rank_r(self) -> int:
        return 0 if self.U is None else self.U.rank

    @property
    def rank_c(self) -> int:
        return 0 if self.V is None else self.V.rank

    def drop_scratch(self) -> None:
        self.Sr = self.Sc = self.Rr = self.Rc = None
        self.scratch.clear()


@dataclass
class HssMatrix:
    tree: ClusterTree
    nodes: list[HssNode]
    # construction record filled in by the compressor (optional)
    info: Any = None

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def hss_rank(self) -> int:
        return max(
            (max(nd.rank_r, nd.rank_c) for nd in self.nodes if nd.id != 0), default=0
        )

    @property
    def mem_bytes(self) -> int:
        return 8 * sum(_stored_entries(nd) for nd in self.nodes)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return hss_matvec(self, x)

    def to_dense(self) -> np.ndarray:
        return reconstruct_dense(self)

    def stats(self) -> dict:
        return stats(self)

    def to_dict(self) -> dict:
        out = []
        for tn, nd in zip(self.tree.nodes, self.nodes):
            out.append(
                {
                    "id": nd.id,
                    "level": tn.level,
                    "range": [tn.lo, tn.hi],
                    "state": nd.state.value,
                    "rank_r": nd.rank_r,
                    "rank_c": nd.rank_c,
                    "D": list(nd.D.shape) if nd.D is not None else None,
                    "B12": list(nd.B12.shape) if nd.B12 is not None else None,
                    "B21": list(nd.B21.shape) if nd.B21 is not None else None,
                    "U": [nd.U.n, nd.U.rank] if nd.U is not None else None,
                    "V": [nd.V.n, nd.V.rank] if nd.V is not None else None,
                }
            )
        return {"n": self.n, "hss_rank": self.hss_rank, "nodes": out}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _stored_entries(nd: HssNode) -> int:
    total = 0
    for M in (nd.D, nd.B12, nd.B21):
        if M is not None:
            total += M.size
    for ID in (nd.U, nd.V):
        if ID is not None:
            total += ID.n_stored
    return total


def hss_matvec(H: HssMatrix, x: np.ndarray) -> np.ndarray:
    """``y = H @ x`` from the generators only (x may hold several columns)."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != H.n:
        raise ValueError(f"x must have {H.n} rows")
    tree, nodes = H.tree, H.nodes
    with flops.phase("matvec"):
        # upward pass: x reduced onto each node's column skeleton
        up: dict[int, np.ndarray] = {}
        for tn in tree.postorder():
            if tn.is_root:
                continue
            nd = nodes[tn.id]
            if tn.is_leaf:
                up[tn.id] = nd.V.apply_t(x[tn.lo : tn.hi])
            else:
                a, b = tn.children
                up[tn.id] = nd.V.apply_t(np.concatenate([up[a], up[b]]))
        # downward pass, parents before children (ids are level ordered)
        down: dict[int, np.ndarray] = {}
        y = np.zeros_like(x)
        for tn in tree.nodes:
            nd = nodes[tn.id]
            if tn.is_leaf:
                yi = nd.D @ x[tn.lo : tn.hi]
                flops.add(2 * nd.D.size * (x.shape[1] if x.ndim == 2 else 1))
                if tn.id in down:
                    yi = yi + nd.U.apply(down[tn.id])
                y[tn.lo : tn.hi] = yi
                continue
            a, b = tn.children
            g1 = nd.B12 @ up[b]
            g2 = nd.B21 @ up[a]
            cols = x.shape[1] if x.ndim == 2 else 1
            flops.add(2 * (nd.B12.size + nd.B21.size) * cols)
            if tn.id in down:
                t = nd.U.apply(down[tn.id])
                r1 = nodes[a].rank_r
                g1 = g1 + t[:r1]
                g2 = g2 + t[r1:]
            down[a] = g1
            down[b] = g2
    return y


def _expand(H: HssMatrix) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray]]:
    """Full row/column bases of every non-root node (nested expansion)."""
    Ubig: dict[int, np.ndarray] = {}
    Vbig: dict[int, np.ndarray] = {}
    for tn in H.tree.postorder():
        if tn.is_root:
            continue
        nd = H.nodes[tn.id]
        if tn.is_leaf:
            Ubig[tn.id] = nd.U.dense()
            Vbig[tn.id] = nd.V.dense()
        else:
            a, b = tn.children
            Ubig[tn.id] = _blockdiag(Ubig[a], Ubig[b]) @ nd.U.dense()
            Vbig[tn.id] = _blockdiag(Vbig[a], Vbig[b]) @ nd.V.dense()
    return Ubig, Vbig


def _blockdiag(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    out = np.zeros((X.shape[0] + Y.shape[0], X.shape[1] + Y.shape[1]))
    out[: X.shape[0], : X.shape[1]] = X
    out[X.shape[0] :, X.shape[1] :] = Y
    return out


def reconstruct_dense(H: HssMatrix) -> np.ndarray:
    """Dense N x N matrix represented by H (nested bases expanded)."""
    if H.n > MAX_DENSE_N:
        raise TooLarge(f"refusing to materialize N={H.n} > {MAX_DENSE_N}")
    Ubig, Vbig = _expand(H)
    A = np.zeros((H.n, H.n))
    for tn in H.tree.nodes:
        nd = H.nodes[tn.id]
        if tn.is_leaf:
            A[tn.lo : tn.hi, tn.lo : tn.hi] = nd.D
            continue
        c1, c2 = H.tree.children(tn)
        A[c1.lo : c1.hi, c2.lo : c2.hi] = Ubig[c1.id] @ nd.B12 @ Vbig[c2.id].T
        A[c2.lo : c2.hi, c1.lo : c1.hi] = Ubig[c2.id] @ nd.B21 @ Vbig[c1.id].T
    return A


def stats(H: HssMatrix) -> dict:
    per_level: dict[int, int] = {}
    for tn, nd in zip(H.tree.nodes, H.nodes):
        if tn.is_root:
            continue
        per_level[tn.level] = max(per_level.get(tn.level, 0), nd.rank_r, nd.rank_c)
    return {
        "hss_rank": H.hss_rank,
        "mem_bytes": H.mem_bytes,
        "per_level_ranks": [per_level[k] for k in sorted(per_level)],
    }

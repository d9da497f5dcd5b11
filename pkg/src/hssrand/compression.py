"""Randomized HSS construction from samples and extracted entries.

:func:`compress` is the adaptive driver: it traverses the tree bottom-up,
compresses every node whose samples suffice, and when the root is not
reached it appends columns to the random sample and traverses again.
Nodes that were already compressed keep their bases and only process the
new columns.  :func:`compress_known_rank` is the single-pass version with a
fixed sample size and :func:`compress_hard_restart` the naive alternative
that throws everything away and starts over with twice the samples.
"""
from __future__ import annotations

import contextvars
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import flops
from .adaptive import HMT_ALPHA, HmtRange, IncrementalRange, StopCriteria
from .dense import HmtParams, IdFailed, IdResult, RngStream, interp_decomp, randn
from .hss import HssMatrix, HssNode, State
from .operators import MatrixSource
from .tree import ClusterNode, ClusterTree

log = logging.getLogger(__name__)

STRATEGIES = ("doubling", "incrementing", "known-rank", "hard-restart", "hmt")
DEFAULT_D_MAX = 5000

_LEGAL = {
    (State.UNTOUCHED, State.PARTIALLY_COMPRESSED),
    (State.UNTOUCHED, State.COMPRESSED),
    (State.PARTIALLY_COMPRESSED, State.COMPRESSED),
}


class MaxRankReached(RuntimeError):
    def __init__(self, d: int, partial: list[int]):
        super().__init__(
            f"root not compressed with {d} sample columns; "
            f"partially compressed nodes: {partial}"
        )
        self.d = d
        self.partial = partial


class StateError(AssertionError):
    """The traversal broke one of the node state rules."""


@dataclass(frozen=True)
class CompressionConfig:
    eps_rel: float = 1e-6
    eps_abs: float = 1e-6
    d0: int = 128
    delta_d: int = 64
    d_max: int | None = None  # None: min(N, 5000)
    strategy: str = "incrementing"
    p: int = 10
    seed: int = 0
    rho_policy: str = "first"
    hmt_alpha: float = HMT_ALPHA
    threads: int = 1

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.d0 < 1 or self.delta_d < 1:
            raise ValueError("d0 and delta_d must be positive")
        if self.p < 0:
            raise ValueError("p must be non-negative")
        if self.d_max is not None and self.d_max < self.d0:
            raise ValueError("d_max must be at least d0")
        if self.eps_rel < 0 or self.eps_abs < 0 or (self.eps_rel == 0 and self.eps_abs == 0):
            raise ValueError("tolerances must be non-negative and not both zero")

    def max_columns(self, n: int) -> int:
        return self.d_max if self.d_max is not None else min(n, DEFAULT_D_MAX)


@dataclass
class CompressionInfo:
    strategy: str
    columns: int = 0  # sample columns in the final pass
    columns_total: int = 0  # sample columns drawn over all passes
    adapt_steps: int = 0
    restarts: int = 0
    flops: flops.FlopCounter = field(default_factory=flops.FlopCounter)
    # per node id: [row-side, column-side] pivoted factorizations
    rrqr_calls: dict[int, list[int]] = field(default_factory=dict)
    # per node id: traversals that left it PARTIALLY_COMPRESSED
    pc_rounds: dict[int, int] = field(default_factory=dict)
    transitions: list[tuple[int, int, str, str]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "columns": self.columns,
            "columns_total": self.columns_total,
            "adapt_steps": self.adapt_steps,
            "restarts": self.restarts,
            "flops": self.flops.as_dict(),
            "flops_total": self.flops.total,
        }


class SampleState:
    """R together with A R and A^T R, grown column block by column block."""

    def __init__(self, src: MatrixSource, seed: int):
        self.src = src
        self.rng = RngStream(seed)
        n = src.n
        self.R = np.zeros((n, 0))
        self.Sr = np.zeros((n, 0))
        self.Sc = np.zeros((n, 0))
        self.delta_d = 0

    @property
    def d(self) -> int:
        return self.R.shape[1]

    def extend(self, k: int) -> None:
        Rn = randn(self.rng, self.src.n, k)
        with flops.phase("sampling"):
            Sr, Sc = self.src.multiply(Rn)
        self.R = np.hstack([self.R, Rn])
        self.Sr = np.hstack([self.Sr, Sr])
        self.Sc = np.hstack([self.Sc, Sc])
        self.delta_d = k


class _Compressor:
    """One pass-structured run of the node state machine."""

    def __init__(self, src: MatrixSource, tree: ClusterTree, cfg: CompressionConfig, info: CompressionInfo):
        if src.n != tree.n:
            raise ValueError(f"source has n={src.n} but the tree covers {tree.n}")
        self.src = src
        self.tree = tree
        self.cfg = cfg
        self.info = info
        self.nodes = [HssNode(id=tn.id) for tn in tree.nodes]
        self.samples = SampleState(src, cfg.seed)
        self.done_cols = 0  # columns processed by earlier traversals
        self.round = 0

    # -- traversal ---------------------------------------------------------

    def traverse(self) -> None:
        done: set[int] = set()
        if self.cfg.threads > 1 and not self.tree.root.is_leaf:
            depth = max(1, math.ceil(math.log2(self.cfg.threads)))
            frontier = [
                tn for tn in self.tree.nodes
                if tn.level == depth or (tn.is_leaf and tn.level < depth)
            ]
            with ThreadPoolExecutor(self.cfg.threads) as pool:
                futures = [
                    pool.submit(contextvars.copy_context().run, self.visit, tn, done)
                    for tn in frontier
                ]
                for f in futures:
                    f.result()
            done.update(tn.id for tn in frontier)
        self.visit(self.tree.root, done)
        self.done_cols = self.samples.d
        self.check_states()
        self.round += 1

    def visit(self, tn: ClusterNode, done: set[int]) -> None:
        """Compress ``tn`` if its samples allow, after its children."""
        if tn.id in done:
            return
        nd = self.nodes[tn.id]
        if tn.is_leaf:
            if nd.state is State.UNTOUCHED and nd.D is None:
                nd.D = self.src.extract(tn.indices, tn.indices)
        else:
            c1, c2 = self.tree.children(tn)
            self.visit(c1, done)
            self.visit(c2, done)
            n1, n2 = self.nodes[c1.id], self.nodes[c2.id]
            if n1.state is not State.COMPRESSED or n2.state is not State.COMPRESSED:
                return
            if nd.state is State.UNTOUCHED and nd.B12 is None:
                nd.B12 = self.src.extract(n1.Ir, n2.Ic)
                nd.B21 = self.src.extract(n2.Ir, n1.Ic)
        if tn.is_root:
            self._move(nd, State.COMPRESSED)
            return
        d = self.samples.d
        first = 0 if nd.state is State.UNTOUCHED else self.done_cols
        if first < d:
            self.compute_local_samples(tn, first, d)
        if nd.state is State.COMPRESSED:
            self.reduce_local_samples(tn, first, d)
            return
        try:
            self.compress_bases(tn, first)
        except IdFailed as exc:
            log.debug("node %d: %s", tn.id, exc)
            self.info.pc_rounds[tn.id] = self.info.pc_rounds.get(tn.id, 0) + 1
            self._move(nd, State.PARTIALLY_COMPRESSED)
            return
        self._move(nd, State.COMPRESSED)
        # keep only the skeleton rows of the samples from now on
        nd.Sr = nd.Sr[nd.U.selected]
        nd.Sc = nd.Sc[nd.V.selected]
        nd.scratch.clear()
        self.reduce_local_samples(tn, 0, d)

    def _move(self, nd: HssNode, new: State) -> None:
        old = nd.state
        if old is new:
            return
        if (old, new) not in _LEGAL:
            raise StateError(f"node {nd.id}: illegal transition {old.value} -> {new.value}")
        nd.state = new
        self.info.transitions.append((self.round, nd.id, old.value, new.value))
        log.debug("round %d: node %d %s -> %s", self.round, nd.id, old.value, new.value)

    def check_states(self) -> None:
        """Children compress before parents; around a partially compressed
        node all ancestors are untouched and all descendants compressed."""
        tree, nodes = self.tree, self.nodes
        for tn in tree.nodes:
            st = nodes[tn.id].state
            if tn.is_leaf or st is State.UNTOUCHED:
                continue
            for c in tn.children:
                if nodes[c].state is not State.COMPRESSED:
                    raise StateError(f"node {tn.id} is {st.value} before child {c}")
            if st is State.PARTIALLY_COMPRESSED:
                p = tn.parent
                while p is not None:
                    if nodes[p].state is not State.UNTOUCHED:
                        raise StateError(f"ancestor {p} of partial node {tn.id} was touched")
                    p = tree.nodes[p].parent

    # -- local samples -----------------------------------------------------

    def compute_local_samples(self, tn: ClusterNode, lo: int, hi: int) -> None:
        """Fill columns lo:hi of the node's off-diagonal samples."""
        nd = self.nodes[tn.id]
        S = self.samples
        with flops.phase("compute_samples"):
            if tn.is_leaf:
                R = S.R[tn.lo : tn.hi, lo:hi]
                Sr = S.Sr[tn.lo : tn.hi, lo:hi] - nd.D @ R
                Sc = S.Sc[tn.lo : tn.hi, lo:hi] - nd.D.T @ R
                flops.add(2 * flops.gemm(tn.size, hi - lo, tn.size))
            else:
                a, b = (self.nodes[c] for c in tn.children)
                Sr = np.vstack([
                    a.Sr[:, lo:hi] - nd.B12 @ b.Rr[:, lo:hi],
                    b.Sr[:, lo:hi] - nd.B21 @ a.Rr[:, lo:hi],
                ])
                Sc = np.vstack([
                    a.Sc[:, lo:hi] - nd.B21.T @ b.Rc[:, lo:hi],
                    b.Sc[:, lo:hi] - nd.B12.T @ a.Rc[:, lo:hi],
                ])
                flops.add(4 * (nd.B12.size + nd.B21.size) * (hi - lo))
        if nd.state is State.COMPRESSED:
            Sr, Sc = Sr[nd.U.selected], Sc[nd.V.selected]
        nd.Sr = Sr if lo == 0 or nd.Sr is None else np.hstack([nd.Sr, Sr])
        nd.Sc = Sc if lo == 0 or nd.Sc is None else np.hstack([nd.Sc, Sc])

    def reduce_local_samples(self, tn: ClusterNode, lo: int, hi: int) -> None:
        """Columns lo:hi of the reduced random blocks, plus skeleton indices."""
        nd = self.nodes[tn.id]
        with flops.phase("reduce_samples"):
            if tn.is_leaf:
                Rr = Rc = self.samples.R[tn.lo : tn.hi, lo:hi]
                base_r = base_c = np.arange(tn.lo, tn.hi)
            else:
                a, b = (self.nodes[c] for c in tn.children)
                Rr = np.vstack([a.Rr[:, lo:hi], b.Rr[:, lo:hi]])
                Rc = np.vstack([a.Rc[:, lo:hi], b.Rc[:, lo:hi]])
                base_r = np.concatenate([a.Ir, b.Ir])
                base_c = np.concatenate([a.Ic, b.Ic])
            new_r = nd.V.apply_t(Rr)
            new_c = nd.U.apply_t(Rc)
        nd.Rr = new_r if lo == 0 or nd.Rr is None else np.hstack([nd.Rr, new_r])
        nd.Rc = new_c if lo == 0 or nd.Rc is None else np.hstack([nd.Rc, new_c])
        nd.Ir = base_r[nd.U.selected]
        nd.Ic = base_c[nd.V.selected]

    # -- bases -------------------------------------------------------------

    def _count_rrqr(self, node_id: int, side: int) -> None:
        calls = self.info.rrqr_calls.setdefault(node_id, [0, 0])
        calls[side] += 1

    def compress_bases(self, tn: ClusterNode, first: int) -> None:
        """Row and column IDs of the node, or :class:`IdFailed`."""
        nd = self.nodes[tn.id]
        cfg = self.cfg
        scale = max(tn.level, 1)
        er, ea = cfg.eps_rel / scale, cfg.eps_abs / scale
        d = self.samples.d
        with flops.phase("id"):
            if cfg.strategy in ("incrementing", "hmt"):
                U, V = self._incremental_ids(tn, first, er, ea)
            else:
                # both sides are attempted every time, so per-side counts agree
                results = []
                for side, S in enumerate((nd.Sr, nd.Sc)):
                    self._count_rrqr(tn.id, side)
                    try:
                        results.append(self._sample_id(S, tn, er, ea, d))
                    except IdFailed as exc:
                        results.append(exc)
                for r in results:
                    if isinstance(r, IdFailed):
                        raise r
                U, V = results
        nd.U, nd.V = U, V

    def _sample_id(self, S: np.ndarray, tn: ClusterNode, er: float, ea: float, d: int) -> IdResult:
        cfg = self.cfg
        rows = S.shape[0]
        if cfg.strategy == "doubling":
            hmt = HmtParams(d - cfg.p, cfg.p, tn.size, self.tree.n - tn.size)
            res = interp_decomp(S.T, er, ea, hmt=hmt)
            if res.rank >= d - cfg.p and res.rank != rows:
                raise IdFailed(f"rank {res.rank} leaves fewer than {cfg.p} spare samples")
            return res
        res = interp_decomp(S.T, er, ea)
        if res.rank > d - cfg.p and res.rank != rows:
            raise IdFailed(f"rank {res.rank} exceeds {d} samples minus {cfg.p}")
        return res

    def _incremental_ids(self, tn: ClusterNode, first: int, er: float, ea: float) -> tuple[IdResult, IdResult]:
        nd = self.nodes[tn.id]
        cfg = self.cfg
        if "ranges" not in nd.scratch:
            if cfg.strategy == "hmt":
                nd.scratch["ranges"] = [HmtRange(S.shape[0], ea, cfg.hmt_alpha) for S in (nd.Sr, nd.Sc)]
            else:
                crit = StopCriteria(er, ea, cfg.rho_policy)
                nd.scratch["ranges"] = [IncrementalRange(S.shape[0], crit) for S in (nd.Sr, nd.Sc)]
        ranges = nd.scratch["ranges"]
        for rng_state, S in zip(ranges, (nd.Sr, nd.Sc)):
            if not rng_state.done:
                rng_state.absorb(S[:, first:])
        if not all(r.done for r in ranges):
            raise IdFailed("stopping tests have not fired yet")
        if cfg.strategy == "hmt":
            # the probes bound the 2-norm only up to alpha sqrt(2/pi)
            er, ea = 0.0, ea / (cfg.hmt_alpha * math.sqrt(2.0 / math.pi))
        out = []
        for side, S in enumerate((nd.Sr, nd.Sc)):
            self._count_rrqr(tn.id, side)
            out.append(interp_decomp(S.T, er, ea))
        return out[0], out[1]

    # -- result ------------------------------------------------------------

    def root_compressed(self) -> bool:
        return self.nodes[0].state is State.COMPRESSED

    def partial_nodes(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.state is State.PARTIALLY_COMPRESSED]

    def result(self) -> HssMatrix:
        for nd in self.nodes:
            nd.drop_scratch()
        self.info.columns = self.samples.d
        return HssMatrix(tree=self.tree, nodes=self.nodes, info=self.info)


def _adaptive(src, tree, cfg, info) -> HssMatrix:
    d_max = cfg.max_columns(src.n)
    comp = _Compressor(src, tree, cfg, info)
    doubling = cfg.strategy == "doubling"
    d = min(cfg.d0 + cfg.p if doubling else cfg.d0, d_max)
    comp.samples.extend(d)
    info.columns_total += d
    while True:
        comp.traverse()
        if comp.root_compressed():
            return comp.result()
        d = comp.samples.d
        if d >= d_max:
            raise MaxRankReached(d, comp.partial_nodes())
        # doubling grows the non-oversampled part: 2^k d0 + p columns
        step = (d - cfg.p) if doubling else cfg.delta_d
        step = min(max(step, 1), d_max - d)
        comp.samples.extend(step)
        info.columns_total += step
        info.adapt_steps += 1


def _single_pass(src, tree, cfg, info, d: int) -> _Compressor:
    comp = _Compressor(src, tree, cfg, info)
    comp.samples.extend(d)
    info.columns_total += d
    comp.traverse()
    return comp


def compress(src: MatrixSource, tree: ClusterTree, cfg: CompressionConfig) -> HssMatrix:
    """HSS approximation of ``src`` on ``tree`` using ``cfg.strategy``.

    The returned matrix carries a :class:`CompressionInfo` in ``.info``.
    Raises :class:`MaxRankReached` when ``cfg.d_max`` sample columns do
    not suffice.
    """
    if cfg.strategy == "known-rank":
        return compress_known_rank(src, tree, cfg.d0 + cfg.p, cfg)
    if cfg.strategy == "hard-restart":
        return compress_hard_restart(src, tree, cfg)
    info = CompressionInfo(cfg.strategy)
    with flops.counting(info.flops):
        return _adaptive(src, tree, cfg, info)


def compress_known_rank(
    src: MatrixSource, tree: ClusterTree, d: int, cfg: CompressionConfig
) -> HssMatrix:
    """One pass with ``d`` sample columns; ``d`` should cover rank + p."""
    cfg = replace(cfg, strategy="known-rank")
    info = CompressionInfo("known-rank")
    with flops.counting(info.flops):
        comp = _single_pass(src, tree, cfg, info, d)
    if not comp.root_compressed():
        raise MaxRankReached(d, comp.partial_nodes())
    return comp.result()


def compress_hard_restart(
    src: MatrixSource, tree: ClusterTree, cfg: CompressionConfig
) -> HssMatrix:
    """Non-adaptive passes with ``2^k d0 + p`` columns, k = 0, 1, ...

    Each failed pass is discarded entirely; the next one regenerates its
    random matrix from the same seed.
    """
    cfg = replace(cfg, strategy="hard-restart")
    d_max = cfg.max_columns(src.n)
    info = CompressionInfo("hard-restart")
    base = cfg.d0
    with flops.counting(info.flops):
        while True:
            d = min(base + cfg.p, d_max)
            comp = _single_pass(src, tree, cfg, info, d)
            if comp.root_compressed():
                return comp.result()
            if d >= d_max:
                raise MaxRankReached(d, comp.partial_nodes())
            base *= 2
            info.restarts += 1
            info.adapt_steps += 1

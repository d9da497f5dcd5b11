import numpy as np
import pytest

from hssrand.compression import (
    CompressionConfig,
    MaxRankReached,
    compress,
    compress_hard_restart,
    compress_known_rank,
)
from hssrand.hss import State
from hssrand.operators import ParamKernel, ToeplitzKernel
from hssrand.tree import build_balanced

TREE = build_balanced(512, 64)


def rel(src, H):
    A = src.dense()
    return np.linalg.norm(A - H.to_dense()) / np.linalg.norm(A)


@pytest.mark.parametrize("strategy", ["incrementing", "doubling", "hard-restart", "hmt"])
def test_strategies_accurate(strategy):
    src = ParamKernel(512, 30, decay=True, seed=4)
    cfg = CompressionConfig(1e-8, 1e-8, d0=8, delta_d=8, p=4, strategy=strategy)
    H = compress(src, TREE, cfg)
    assert rel(src, H) <= 1e-6
    assert all(nd.state is State.COMPRESSED for nd in H.nodes)
    assert H.info.strategy == strategy


def test_known_rank_single_pass():
    src = ParamKernel(512, 20, seed=1)
    H = compress_known_rank(src, TREE, 30, CompressionConfig(1e-10, 1e-10, p=4))
    assert H.hss_rank == 20 and H.info.adapt_steps == 0 and H.info.columns_total == 30
    assert rel(src, H) < 1e-12


def test_known_rank_too_few_columns():
    src = ParamKernel(512, 40, seed=1)
    with pytest.raises(MaxRankReached) as ei:
        compress_known_rank(src, TREE, 20, CompressionConfig(1e-10, 1e-10, p=4))
    assert ei.value.d == 20 and ei.value.partial


def test_pure_identity_rank_zero():
    H = compress(ParamKernel(256, 10, beta=0.0), build_balanced(256, 32), CompressionConfig())
    assert H.hss_rank == 0
    np.testing.assert_array_equal(H.to_dense(), np.eye(256))


def test_incrementing_schedule():
    src = ParamKernel(512, 40, seed=2)
    H = compress(src, TREE, CompressionConfig(1e-10, 1e-10, d0=16, delta_d=16, p=4))
    # 16 -> 32 -> 48 columns
    assert H.info.adapt_steps == 2 and H.info.columns == 48


def test_hard_restart_discards_samples():
    src = ParamKernel(512, 40, seed=2)
    H = compress_hard_restart(src, TREE, CompressionConfig(1e-10, 1e-10, d0=8, p=4))
    info = H.info
    assert info.restarts == info.adapt_steps == 3
    # passes of 12, 20, 36, 68 columns
    assert info.columns == 68 and info.columns_total == 12 + 20 + 36 + 68


def test_dmax_limit():
    src = ParamKernel(512, 100, seed=2)
    with pytest.raises(MaxRankReached):
        compress(src, TREE, CompressionConfig(1e-10, 1e-10, d0=8, delta_d=8, d_max=40))


def test_deterministic_and_threads_agree():
    src = ToeplitzKernel(512)
    cfg = CompressionConfig(1e-8, 1e-8, d0=16, delta_d=16, seed=3)
    a = compress(src, TREE, cfg)
    b = compress(src, TREE, cfg)
    c = compress(src, TREE, CompressionConfig(1e-8, 1e-8, d0=16, delta_d=16, seed=3, threads=4))
    np.testing.assert_array_equal(a.to_dense(), b.to_dense())
    np.testing.assert_array_equal(a.to_dense(), c.to_dense())
    assert a.info.flops.as_dict() == c.info.flops.as_dict()


def test_flop_phases_sum():
    src = ParamKernel(512, 20, seed=5)
    info = compress(src, TREE, CompressionConfig(d0=8, delta_d=8)).info
    d = info.flops.as_dict()
    assert sum(d.values()) == info.flops.total
    for ph in ("sampling", "id", "compute_samples", "reduce_samples"):
        assert d[ph] > 0


def test_transitions_legal():
    src = ParamKernel(512, 40, seed=6)
    info = compress(src, TREE, CompressionConfig(1e-10, 1e-10, d0=8, delta_d=8)).info
    assert info.transitions
    assert info.pc_rounds


@pytest.mark.parametrize("kw", [dict(strategy="bogus"), dict(d0=0), dict(p=-1), dict(d0=10, d_max=5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CompressionConfig(**kw)


def test_default_dmax():
    assert CompressionConfig().max_columns(10_000) == 5000
    assert CompressionConfig().max_columns(300) == 300


def test_relative_accuracy_scales_with_levels():
    src = ParamKernel(256, 40, decay=True, seed=8)
    tree = build_balanced(256, 32)
    H = compress(src, tree, CompressionConfig(1e-10, 0.0, d0=16, delta_d=16))
    assert rel(src, H) <= tree.levels * 1e-10 * 10

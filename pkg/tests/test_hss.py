import json

import numpy as np
import pytest

from hssrand.compression import CompressionConfig, compress
from hssrand.hss import State, TooLarge, reconstruct_dense
from hssrand.operators import ParamKernel, ToeplitzKernel
from hssrand.tree import build_balanced, from_splits


@pytest.fixture(scope="module")
def H():
    src = ToeplitzKernel(300)
    return compress(src, build_balanced(300, 40), CompressionConfig(1e-10, 1e-10, d0=16, delta_d=16))


def test_all_compressed(H):
    assert all(nd.state is State.COMPRESSED for nd in H.nodes)


def test_matvec_matches_dense(H):
    X = np.random.default_rng(0).standard_normal((300, 3))
    np.testing.assert_allclose(H.matvec(X), reconstruct_dense(H) @ X, atol=1e-12)
    np.testing.assert_allclose(H.matvec(X[:, 0]), reconstruct_dense(H) @ X[:, 0], atol=1e-12)


def test_stats(H):
    s = H.stats()
    assert s["hss_rank"] == H.hss_rank == max(s["per_level_ranks"])
    assert s["mem_bytes"] == H.mem_bytes > 0
    # cheaper than dense storage
    assert H.mem_bytes < 8 * 300 * 300


def test_json(H):
    d = json.loads(H.to_json())
    assert d["n"] == 300 and len(d["nodes"]) == len(H.tree.nodes)
    assert d["nodes"][0]["U"] is None


def test_matvec_shape_checked(H):
    with pytest.raises(ValueError):
        H.matvec(np.ones(5))


def test_single_leaf_tree():
    src = ParamKernel(20, 3, seed=1)
    H = compress(src, from_splits(20), CompressionConfig())
    assert H.hss_rank == 0
    np.testing.assert_allclose(H.to_dense(), src.dense())


def test_too_large_guard(monkeypatch):
    import hssrand.hss as hss

    src = ParamKernel(64, 2)
    Hm = compress(src, build_balanced(64, 16), CompressionConfig())
    monkeypatch.setattr(hss, "MAX_DENSE_N", 10)
    with pytest.raises(TooLarge):
        hss.reconstruct_dense(Hm)

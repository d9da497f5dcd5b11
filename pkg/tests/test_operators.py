import numpy as np
import pytest

from hssrand import flops
from hssrand.dense import RngStream, randn
from hssrand.operators import (
    ExplicitDense,
    IndexOutOfRange,
    ParamKernel,
    ToeplitzKernel,
    load_binary,
    load_dense,
    param_diag,
    save_binary,
)


def test_param_diag_values():
    assert param_diag(1, 10) == 1.0
    assert param_diag(11, 10) == 2.0**-53
    with pytest.raises(ValueError):
        param_diag(0, 10)


@pytest.mark.parametrize("src", [
    ParamKernel(60, 7, alpha=2.0, beta=0.5, seed=1),
    ParamKernel(60, 7, decay=True, seed=2),
    ToeplitzKernel(60),
    ExplicitDense(np.random.default_rng(0).standard_normal((60, 60))),
])
def test_multiply_matches_dense(src):
    A = src.dense()
    R = randn(RngStream(0), 60, 5)
    Sr, Sc = src.multiply(R)
    np.testing.assert_allclose(Sr, A @ R, atol=1e-12)
    np.testing.assert_allclose(Sc, A.T @ R, atol=1e-12)
    I, J = [3, 1, 59], [0, 7]
    np.testing.assert_allclose(src.extract(I, J), A[np.ix_(I, J)], atol=1e-14)


def test_param_kernel_rank():
    A = ParamKernel(80, 9, alpha=0.0, seed=3).dense()
    assert np.linalg.matrix_rank(A) == 9


def test_pure_identity():
    np.testing.assert_array_equal(ParamKernel(16, 4, beta=0.0).dense(), np.eye(16))


def test_toeplitz_entries():
    A = ToeplitzKernel(4).dense()
    assert A[0, 3] == 0.25 and A[2, 1] == 0.5 and A[1, 1] == 1.0


def test_extract_out_of_range():
    with pytest.raises(IndexOutOfRange):
        ToeplitzKernel(5).extract([5], [0])


def test_multiply_shape_checked():
    with pytest.raises(ValueError):
        ToeplitzKernel(5).multiply(np.ones((4, 1)))


def test_explicit_rejects_bad_input():
    with pytest.raises(ValueError):
        ExplicitDense(np.ones((2, 3)))
    with pytest.raises(ValueError):
        ExplicitDense(np.array([[np.nan]]))


def test_sampling_flops_counted():
    src = ExplicitDense(np.eye(10))
    with flops.counting() as c, flops.phase("sampling"):
        src.multiply(np.ones((10, 2)))
    assert c.by_phase["sampling"] == 2 * 2 * 10 * 2 * 10


def test_binary_layout(tmp_path):
    A = np.arange(6, dtype=float).reshape(2, 3)
    p = tmp_path / "a.bin"
    save_binary(p, A)
    raw = p.read_bytes()
    assert raw[:16] == (2).to_bytes(8, "little") + (3).to_bytes(8, "little")
    # column-major body
    assert np.frombuffer(raw[16:], "<f8").tolist() == [0.0, 3.0, 1.0, 4.0, 2.0, 5.0]
    np.testing.assert_array_equal(load_binary(p), A)


def test_binary_truncated(tmp_path):
    p = tmp_path / "b.bin"
    p.write_bytes((2).to_bytes(8, "little") + (2).to_bytes(8, "little") + b"\0" * 8)
    with pytest.raises(ValueError):
        load_binary(p)


def test_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,4\n")
    np.testing.assert_array_equal(load_dense(p), [[1, 2], [3, 4]])

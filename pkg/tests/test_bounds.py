import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hssrand import bounds
from hssrand.dense import RngStream, randn

FLAT4 = bounds.Spectrum([1.0] * 4)


def test_flat_upper_value():
    # 4 equal values: (4/3)^(d*4/2) e^(-d tau/2)
    assert bounds.upper_tail_bound(FLAT4, 10, 2.0) == pytest.approx(0.014316271077658142, rel=1e-12)
    assert bounds.upper_tail_bound(FLAT4, 10, 2.0) == pytest.approx((4 / 3) ** 20 * math.exp(-10))


def test_two_equal_lower_value():
    assert bounds.lower_tail_bound(bounds.Spectrum([1, 1]), 10, 0.0) == pytest.approx((2 / 3) ** 10, rel=1e-12)


def test_rank_one_rejected():
    with pytest.raises(bounds.RankOne):
        bounds.upper_tail_bound(bounds.Spectrum([3.0]), 5, 2.0)


@pytest.mark.parametrize("tau,fn", [(1.0, bounds.upper_tail_bound), (1.0, bounds.lower_tail_bound), (-0.1, bounds.lower_tail_bound)])
def test_bad_tau(tau, fn):
    with pytest.raises(bounds.BadTau):
        fn(FLAT4, 5, tau)


@pytest.mark.parametrize("bad", [[], [1, 2], [1, 0], [1, float("inf")]])
def test_spectrum_validation(bad):
    with pytest.raises(ValueError):
        bounds.Spectrum(bad)


def test_decay_conditions():
    c = bounds.decay_conditions(bounds.Spectrum([2, 1, 1]))
    assert c["upper_threshold"] == 3.0 and c["lower_threshold"] == math.log(2)


def test_log_space_no_overflow():
    spec = bounds.Spectrum([1e150, 1e150, 1e149])
    lb = bounds.log_upper_tail_bound(spec, 10_000, 5.0)
    assert math.isfinite(lb) and lb < 0


def test_fro_estimate_unbiased():
    A = np.diag([3.0, 2.0, 1.0])
    S = A @ randn(RngStream(0), 3, 200_000)
    assert bounds.fro_estimate(S) ** 2 == pytest.approx(14.0, rel=0.01)


def test_mc_below_bound():
    f = bounds.mc_tail_probability(FLAT4, 10, 2.0, "upper", 50_000, RngStream(1))
    assert f <= bounds.upper_tail_bound(FLAT4, 10, 2.0)


@given(
    st.lists(st.floats(0.1, 10), min_size=2, max_size=6),
    st.integers(1, 60),
    st.floats(1.01, 5),
)
@settings(max_examples=50)
def test_log_linear_in_d(sig, d, tau):
    spec = bounds.Spectrum(sorted(sig, reverse=True))
    one = bounds.log_upper_tail_bound(spec, 1, tau)
    assert bounds.log_upper_tail_bound(spec, d, tau) == pytest.approx(d * one, rel=1e-9, abs=1e-9)

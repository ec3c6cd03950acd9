import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iptwsize.design import (
    BinaryRCT,
    ContinuousRCT,
    CountRCT,
    DesignInputs,
    normal_quantile,
    rct_sample_size,
    rct_variance,
    required_n,
    se_target,
)
from iptwsize.errors import DataError

mpmath.mp.dps = 40


def _mp_quantile(p):
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


@pytest.mark.parametrize("p", [1e-12, 1e-6, 0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999999])
def test_normal_quantile_against_high_precision(p):
    assert abs(normal_quantile(p) - _mp_quantile(p)) <= 1e-9 * max(1.0, abs(_mp_quantile(p)))


def test_normal_quantile_examples():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    with pytest.raises(ValueError):
        normal_quantile(0.0)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(0.5, 1 - 1e-10))
def test_normal_quantile_symmetry(p):
    # 1 - p is exact on [0.5, 1), so the check isolates the quantile itself
    assert abs(normal_quantile(p) + normal_quantile(1.0 - p)) <= 1e-12 * max(1.0, abs(normal_quantile(p)))


def test_se_target_examples():
    assert se_target(DesignInputs(2.8016)) == pytest.approx(1.0, abs=1e-4)
    assert se_target(DesignInputs(math.log(2))) == pytest.approx(0.24742, abs=1e-4)
    assert se_target(DesignInputs(2 * math.log(2))) == 2 * se_target(DesignInputs(math.log(2)))


def test_required_n_boundary():
    inp = DesignInputs(0.7)
    assert required_n(inp.delta**2 / inp.z_sum**2, inp) == 1
    with pytest.raises(DataError):
        required_n(0.0, inp)


@pytest.mark.parametrize(
    "params, expected",
    [
        (BinaryRCT(p0=0.03, rho=0.25, delta=math.log(2)), 1940),
        (BinaryRCT(p0=0.10, rho=0.25, delta=math.log(2)), 682),
        (CountRCT(lambda0=0.008, rho=0.67, delta=math.log(0.5)), 12284),
        (ContinuousRCT(sigma2=1.0, rho=0.5, delta=1.0), 32),
    ],
)
def test_benchmark_sample_sizes(params, expected):
    assert rct_sample_size(params)[1] == expected


def test_table_variances():
    assert rct_variance(ContinuousRCT(1.0, 0.5)) == 4.0
    assert rct_variance(CountRCT(lambda0=0.008, rho=0.5, lambda1=0.008)) == pytest.approx(500.0, rel=1e-14)


def test_agreement_check():
    p1 = 2 * 0.1 / (2 * 0.1 + 0.9)  # odds doubled
    assert BinaryRCT(p0=0.1, rho=0.3, p1=p1, delta=math.log(2)).p1 == p1
    with pytest.raises(DataError, match="disagree"):
        BinaryRCT(p0=0.1, rho=0.3, p1=0.3, delta=math.log(2))
    with pytest.raises(DataError):
        CountRCT(lambda0=0.01, rho=0.5)
    with pytest.raises(DataError):
        ContinuousRCT(1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(V=st.floats(1e-3, 1e5), delta=st.floats(0.05, 3.0), power=st.floats(0.5, 0.99))
def test_ceiling_bracketing(V, delta, power):
    inp = DesignInputs(delta, 0.05, power)
    n = required_n(V, inp)
    n4 = required_n(4 * V, inp)
    if n > 1:
        assert 4 * n - 3 <= n4 <= 4 * n
    exact = inp.z_sum**2 * V / delta**2
    assert n >= 1 and n >= exact * (1 - 1e-12) and n - 1 < max(exact, 1)


@settings(max_examples=100, deadline=None)
@given(V=st.floats(0.1, 1e4), d1=st.floats(0.1, 2.0), d2=st.floats(0.1, 2.0), p1=st.floats(0.5, 0.95), p2=st.floats(0.5, 0.95))
def test_required_n_monotone(V, d1, d2, p1, p2):
    lo, hi = sorted((d1, d2))
    assert required_n(V, DesignInputs(hi)) <= required_n(V, DesignInputs(lo))
    lo, hi = sorted((p1, p2))
    assert required_n(V, DesignInputs(1.0, power=lo)) <= required_n(V, DesignInputs(1.0, power=hi))
    assert required_n(V, DesignInputs(1.0)) <= required_n(2 * V, DesignInputs(1.0))


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0.01, 0.9), b=st.floats(0.01, 0.9), rho=st.floats(0.05, 0.95))
def test_arm_swap_symmetry(a, b, rho):
    assert rct_variance(BinaryRCT(p0=a, rho=rho, p1=b)) == pytest.approx(
        rct_variance(BinaryRCT(p0=b, rho=1 - rho, p1=a)), rel=1e-12
    )
    assert rct_variance(CountRCT(lambda0=a, rho=rho, lambda1=b)) == pytest.approx(
        rct_variance(CountRCT(lambda0=b, rho=1 - rho, lambda1=a)), rel=1e-12
    )


def test_inputs_validation():
    for bad in (dict(delta=0.0), dict(delta=1.0, alpha=1.0), dict(delta=1.0, power=0.0)):
        with pytest.raises(DataError):
            DesignInputs(**bad)

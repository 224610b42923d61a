import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaussdiff.errors import ParameterError
from gaussdiff.schedule import linear_schedule, schedule_from_betas
from oracles import alpha_bar_mp


def test_alpha_bar_T_matches_mpmath():
    s = linear_schedule(1000, 1e-4, 0.02)
    ref = alpha_bar_mp(1000, "1e-4", "0.02", 1000)
    assert abs(s.alpha_bars[1000] - float(ref)) <= 1e-12 * float(ref)


def test_alpha_bar_frozen_values():
    s = linear_schedule()
    # frozen from the 50-digit mpmath product
    assert s.alpha_bars[1000] == pytest.approx(4.035829765e-5, rel=1e-9)
    assert s.alpha_bars[500] == pytest.approx(0.07858724288177823734, rel=1e-12)


def test_alpha_bar_T_truncates_to_reference():
    # the reference value 4.03e-5 is this number truncated to three digits
    ab = linear_schedule().alpha_bars[1000]
    assert np.floor(ab * 1e7) / 100 == pytest.approx(4.03)


def test_endpoints_and_padding():
    s = linear_schedule(1000, 1e-4, 0.02)
    assert s.T == 1000
    assert s.betas[0] == 0.0 and s.alphas[0] == 1.0 and s.alpha_bars[0] == 1.0
    assert s.betas[1] == 1e-4 and s.betas[1000] == 0.02
    assert np.array_equal(s.step_noise_var, s.betas)


def test_arrays_are_read_only():
    s = linear_schedule(10)
    with pytest.raises(ValueError):
        s.betas[3] = 0.5


@pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0), (2.5,)])
def test_invalid_parameters(args):
    with pytest.raises(ParameterError):
        linear_schedule(*args)


def test_check_t_bounds():
    s = linear_schedule(10)
    assert s.check_t(10) == 10
    with pytest.raises(ParameterError):
        s.check_t(11)
    with pytest.raises(ParameterError):
        s.check_t(0, lower=1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 0.5), min_size=1, max_size=60))
def test_cumulative_product_invariants(betas):
    s = schedule_from_betas(betas)
    ab = s.alpha_bars
    assert np.all(np.diff(ab) < 0)
    assert np.all(ab > 0) and ab[0] == 1.0
    np.testing.assert_allclose(ab[1:], np.cumprod(1 - np.asarray(betas)), rtol=1e-13)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from shrinkreg.normal import norm_cdf, norm_ppf, norm_sf, two_sided_p


@pytest.mark.parametrize("p", [1e-300, 1e-12, 1e-4, 0.01, 0.02425, 0.025, 0.3, 0.5, 0.7, 0.975, 0.99, 1 - 1e-10])
def test_ppf_against_reference(p):
    assert norm_ppf(p) == pytest.approx(stats.norm.ppf(p), rel=1e-12, abs=1e-12)


@settings(max_examples=300)
@given(st.floats(1e-15, 1 - 1e-15))
def test_ppf_inverts_cdf(p):
    assert abs(norm_ppf(p) - stats.norm.ppf(p)) < 1e-9


@settings(max_examples=300)
@given(st.floats(-30, 30))
def test_cdf_and_sf(x):
    assert norm_cdf(x) == pytest.approx(stats.norm.cdf(x), rel=1e-12, abs=1e-300)
    assert norm_sf(x) == pytest.approx(stats.norm.sf(x), rel=1e-12, abs=1e-300)


def test_critical_value():
    assert norm_ppf(0.975) == pytest.approx(1.959963984540054, abs=1e-14)
    assert two_sided_p(1.959963984540054) == pytest.approx(0.05, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_ppf_domain(p):
    with pytest.raises(ValueError):
        norm_ppf(p)


def test_two_sided_p_symmetric():
    for t in np.linspace(-5, 5, 21):
        assert two_sided_p(t) == pytest.approx(2 * stats.norm.sf(abs(t)), rel=1e-12)

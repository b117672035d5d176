import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.stats import levy_stable

from cuspbilliard import stable as S
from cuspbilliard.errors import InvalidParams

P = S.StableParams(1.5, 1.0)


def test_invalid_params():
    for a in (1.0, 2.0, 0.5):
        with pytest.raises(InvalidParams):
            S.StableParams(a)
    with pytest.raises(InvalidParams):
        S.StableParams(1.5, 0.0)


def test_characteristic_function():
    u = np.array([-2.0, 0.0, 0.7])
    phi = S.characteristic_fn(S.StableParams(1.5, 2.0), u)
    expect = np.exp(-np.abs(2 * u) ** 1.5 * (1 - 1j * np.sign(u) * math.tan(0.75 * math.pi)))
    assert np.allclose(phi, expect)
    assert S.characteristic_fn(P, 0.0) == 1.0


@pytest.mark.parametrize("x", [-1.5, -0.5, 0.0, 0.8, 2.0, 6.0])
def test_cdf_against_scipy(x):
    ref = levy_stable.cdf(x, 1.5, 1.0, loc=0.0, scale=1.0)
    assert S.cdf_exact(P, x) == pytest.approx(ref, abs=2e-6)


def test_interpolant_matches_direct_inversion():
    for x in np.linspace(-2.5, 40, 23):
        assert S.cdf(P, x) == pytest.approx(S.cdf_exact(P, x), abs=1e-7)


def test_cdf_monotone_and_bounded():
    x = np.linspace(-10, 200, 4001)
    F = S.cdf(P, x)
    assert np.all(np.diff(F) >= -1e-12)
    assert F[0] == pytest.approx(0.0, abs=1e-9) and F[-1] <= 1.0


def test_pdf_integrates_to_one():
    f = lambda x: S.pdf(P, x)
    body, _ = integrate.quad(f, -10, 50, limit=400)
    assert body + (1 - S.cdf(P, 50.0)) == pytest.approx(1.0, abs=1e-6)


def test_pdf_is_cdf_derivative():
    h = 1e-4
    for x in (-1.0, 0.3, 3.0, 80.0):
        d = (S.cdf(P, x + h) - S.cdf(P, x - h)) / (2 * h)
        assert S.pdf(P, x) == pytest.approx(d, rel=1e-4, abs=1e-9)


def test_right_tail_constant():
    c, cl = S.tail_constant(P)
    assert cl == 0.0
    x = 1e4
    assert x**1.5 * (1 - S.cdf(P, x)) == pytest.approx(c, rel=1e-3)


@given(st.floats(1.05, 1.95), st.floats(0.1, 10.0))
def test_scale_from_tail_inverts(alpha, sigma):
    p = S.StableParams(alpha, sigma)
    c, _ = S.tail_constant(p)
    assert S.scale_from_tail(alpha, c) == pytest.approx(sigma, rel=1e-10)


def test_scale_from_tail_rejects_nonpositive():
    with pytest.raises(InvalidParams):
        S.scale_from_tail(1.5, 0.0)


def test_sampler_matches_cdf():
    rng = np.random.default_rng(7)
    p = S.StableParams(1.5, 2.0)
    x = S.sample(p, rng, 10**5)
    assert S.ks_distance(x, p) < 1.63 / math.sqrt(x.size)


def test_ks_distance_detects_wrong_scale():
    rng = np.random.default_rng(8)
    x = S.sample(S.StableParams(1.5, 1.0), rng, 10**4)
    assert S.ks_distance(x, S.StableParams(1.5, 2.5)) > 0.1


def test_ks_distance_rejects_bad_input():
    with pytest.raises(InvalidParams):
        S.ks_distance([], P)
    with pytest.raises(InvalidParams):
        S.ks_distance([1.0, np.nan], P)

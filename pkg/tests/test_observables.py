import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cuspbilliard import _kernels as K
from cuspbilliard import dynamics as D
from cuspbilliard import observables as O
from cuspbilliard import streams
from cuspbilliard.batch import InducedSpec, induced_batch
from cuspbilliard.errors import ConfigError, NotApplicable
from cuspbilliard.geometry import build_table

TABLE = build_table()


@pytest.fixture(scope="module")
def mu_sample():
    u = streams.uniforms(1, streams.START, np.arange(10**6), 2)
    s = D.sample_mu_array(TABLE, u)
    return s, K.states_to_r(TABLE.packed, s)


def mc_mean(f, sample):
    s, r = sample
    v = f.values(s[:, 0], r, s[:, 2])
    return v.mean(), v.std() / math.sqrt(v.size)


def test_i_one_closed_form():
    ref = float(mpmath.sqrt(mpmath.pi) / 2 * mpmath.gamma(mpmath.mpf(5) / 6) / mpmath.gamma(mpmath.mpf(4) / 3))
    assert O.i_one(1.5) == pytest.approx(ref, abs=1e-13)
    assert O.i_one(1.5) == pytest.approx(1.12025130033328, abs=1e-13)


def test_i_one_monte_carlo():
    rng = np.random.default_rng(3)
    ph = rng.uniform(0, math.pi / 2, 10**6)
    v = math.pi / 2 * np.sin(ph) ** (2 / 3)
    assert abs(v.mean() - O.i_one(1.5)) <= 3 * v.std() / 1e3


def test_f0_is_centred_with_cusp_integral_i_one():
    f = O.f0(TABLE)
    assert O.invariant_mean(TABLE, f) == pytest.approx(0.0, abs=1e-10)
    c = O.cusp_constants(TABLE, f)
    assert c.I_f == pytest.approx(c.I_1, abs=1e-14)
    assert O.center(TABLE, f).shift == 0.0


def test_simple_means():
    assert O.invariant_mean(TABLE, O.constant(2.0)) == pytest.approx(2.0, abs=1e-10)
    assert O.invariant_mean(TABLE, O.cos_phi()) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("name", ["f_smooth", "f_rough"])
def test_centring_matches_monte_carlo(name, mu_sample):
    f = O.builtin(name, TABLE)
    mean, se = mc_mean(f, mu_sample)
    assert abs(O.invariant_mean(TABLE, f) - mean) <= 4 * se
    cf = O.center(TABLE, f)
    m2, se2 = mc_mean(cf, mu_sample)
    assert abs(m2) <= 4 * se2


def test_frozen_return_time_constants():
    # mu(M) = |Gamma_3| / |dQ|, c = 2 I_1^alpha / (beta mu(M) |dQ|)
    assert TABLE.mu_M == pytest.approx(0.24266040996168475, rel=1e-12)
    assert 1 / TABLE.mu_M == pytest.approx(4.120985, abs=1e-6)
    assert O.tail_constant_returns(TABLE) == pytest.approx(1.1322558, abs=1e-7)
    assert O.return_time_scale(TABLE) == pytest.approx(2.00458, abs=1e-5)


def test_tail_constant_independent_route():
    with mpmath.workdps(30):
        P = 2 * mpmath.quad(lambda t: mpmath.sqrt(1 + t**4), [0, 1]) + 2 * mpmath.pi / 9
        I1 = mpmath.quad(lambda p: mpmath.sin(p) ** (mpmath.mpf(2) / 3), [0, mpmath.pi / 2])
        c = 2 * I1**1.5 / (3 * (2 * mpmath.pi / 9))
    assert O.tail_constant_returns(TABLE) == pytest.approx(float(c), rel=1e-10)
    assert TABLE.perimeter == pytest.approx(float(P), rel=1e-12)


@given(st.floats(0.1, 10.0))
def test_cusp_constants_scale_with_observable(c):
    f = O.f0(TABLE)
    base = O.cusp_constants(TABLE, f)
    sc = O.cusp_constants(TABLE, f.scaled(c))
    assert sc.I_f == pytest.approx(c * base.I_f, rel=1e-12)
    assert sc.sigma_f == pytest.approx(c * base.sigma_f, rel=1e-10)
    assert sc.tail_tilde_f == pytest.approx(c**1.5 * base.tail_tilde_f, rel=1e-10)


def test_negative_cusp_integral_not_applicable():
    with pytest.raises(NotApplicable):
        O.cusp_constants(TABLE, O.constant(-1.0))
    c = O.cusp_constants(TABLE, O.constant(-1.0), require_positive=False)
    assert not c.skewed_positive and math.isnan(c.sigma_f)


def test_f_rough_has_positive_cusp_integral():
    c = O.cusp_constants(TABLE, O.center(TABLE, O.f_rough(TABLE)))
    assert c.I_f > 0


def test_piecewise_polynomial(tmp_path):
    spec = {"gamma": 1.0, "pieces": [
        {"component": 3, "r_range": [0, 10], "coeffs": [[1.0, 2.0]]},
        {"component": "any", "r_range": [0, 10], "coeffs": [[0.0], [3.0]]},
    ]}
    f = O.load_observable(spec, TABLE)
    assert f(3, 1.5, 0.5) == pytest.approx(1.0 + 2.0 * 0.5)
    assert f(1, 0.2, 0.5) == pytest.approx(3.0 * 0.2)
    p = tmp_path / "obs.json"
    p.write_text(json.dumps(spec))
    g = O.load_observable(str(p), TABLE)
    assert g(1, 0.2, 0.5) == f(1, 0.2, 0.5)


def test_piecewise_polynomial_errors():
    with pytest.raises(ConfigError) as e:
        O.piecewise_polynomial({"pieces": [{"component": 5, "r_range": [0, 1], "coeffs": [[1]]}]})
    assert e.value.pointer == "/pieces/0/component"
    with pytest.raises(ConfigError):
        O.load_observable("no_such_observable", TABLE)


def test_induced_f0_is_return_time_minus_kac():
    f = O.f0(TABLE)
    out = induced_batch(TABLE, 4096, seed=2, f=f, spec=InducedSpec())
    ok = out["status"] == K.DONE
    assert np.allclose(out["ftilde"][ok], out["R"][ok] - 1 / TABLE.mu_M, atol=1e-9)


def test_induced_value_from_trace():
    from cuspbilliard.induced import first_return

    f = O.center(TABLE, O.f_smooth(TABLE))
    x = D.state_from_uniforms(TABLE, 0.2, 0.4, arc_only=True)
    s = first_return(TABLE, x, want_trace=True)[0]
    u = D.sample_mu_array(TABLE, np.array([[0.2, 0.4]]), arc_only=True)
    from cuspbilliard.batch import run_induced

    out = run_induced(TABLE, u, f)
    assert O.induced_value(TABLE, f, s) == pytest.approx(out["ftilde"][0], abs=1e-10)


def test_induced_mean_vanishes():
    f = O.center(TABLE, O.f_smooth(TABLE))
    out = induced_batch(TABLE, 1 << 18, seed=5, f=f)
    ft = out["ftilde"][out["status"] == K.DONE]
    # infinite variance: allow several naive standard errors
    assert abs(ft.mean()) <= 5 * ft.std() / math.sqrt(ft.size)

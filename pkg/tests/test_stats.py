import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cuspbilliard import observables as O
from cuspbilliard import stats as ST
from cuspbilliard.errors import InsufficientData, InvalidParams
from cuspbilliard.geometry import build_table

TABLE = build_table()


def test_hill_on_pareto():
    rng = np.random.default_rng(0)
    x = rng.pareto(1.5, 10**6) + 1
    a, se = ST.hill(x, k_frac=0.001)
    assert se > 0
    assert abs(a - 1.5) <= 4 * se


def test_hill_input_checks():
    with pytest.raises(InsufficientData):
        ST.hill(np.ones(100) * 2)
    with pytest.raises(InvalidParams):
        ST.hill(np.ones(10**4), k_frac=0.5)
    with pytest.raises(InvalidParams):
        ST.hill(-np.ones(10**4))


def test_tail_plateau_on_exact_tail():
    # P(R > t) = t^-1.5 makes n P(R > n^(2/3)) = 1 for every n
    rng = np.random.default_rng(1)
    R = rng.pareto(1.5, 10**6) + 1
    pts = ST.tail_plateau(R, [10, 100, 1000], 1.5)
    for p in pts:
        assert abs(p.value - 1.0) <= 4 * p.stderr


def test_truncation_levels():
    lo, hi = ST.truncation_levels(1.5, 1000, 0.1)
    assert lo == pytest.approx(10.0) and hi == pytest.approx(1000.0)
    with pytest.raises(InvalidParams):
        ST.truncation_levels(1.5, 10, 1.0)


def test_poisson_intensity_formula():
    c = O.tail_constant_returns(TABLE)
    assert ST.poisson_intensity(TABLE, 1, 2) == pytest.approx(c * (1 - 2**-1.5))
    assert ST.poisson_intensity(TABLE, 1, math.inf) == pytest.approx(c)


def test_chi2_report_accepts_poisson_counts():
    rng = np.random.default_rng(2)
    counts = rng.poisson(0.8, 10**4)
    rep = ST._chi2_report(counts, 0.8, (1, 2))
    assert sum(rep.hist) == counts.size
    assert rep.ok
    bad = ST._chi2_report(rng.poisson(1.3, 10**4), 0.8, (1, 2))
    assert not bad.ok


def test_poisson_counts_small_run():
    res = ST.poisson_counts(TABLE, 100, [[1, 2], [2, 4]], reps=500, seed=3)
    assert res.counts.shape == (res.reps, 2)
    assert res.cov.shape == (2, 2)
    assert np.all(res.counts >= 0)
    with pytest.raises(InvalidParams):
        ST.poisson_counts(TABLE, 100, [[2, 1]], reps=10, seed=0)


def test_autocovariance_ar1():
    rng = np.random.default_rng(4)
    rho, L = 0.7, 2 * 10**5
    e = rng.standard_normal(L)
    x = np.empty(L)
    x[0] = e[0]
    for i in range(1, L):
        x[i] = rho * x[i - 1] + e[i]
    c = ST.autocovariance(x, 5)
    var = 1 / (1 - rho**2)
    for k in range(6):
        assert c[k] == pytest.approx(var * rho**k, abs=0.05)


def test_autocovariance_too_short():
    with pytest.raises(InsufficientData):
        ST.autocovariance(np.ones(5), 10)


def test_induce_series():
    vals = np.array([1.0, 2, 3, 4, 5, 6])
    arc = np.array([True, False, True, False, False, True])
    ft, R = ST.induce_series(vals, arc)
    assert ft.tolist() == [3.0, 12.0] and R.tolist() == [2, 3]
    with pytest.raises(InsufficientData):
        ST.induce_series(vals, np.zeros(6, bool))


@given(st.floats(0.1, 1.5))
def test_error_term_slope_synthetic(gamma):
    rng = np.random.default_rng(5)
    N = rng.integers(64, 2048, 10**5)
    E = N.astype(float) ** gamma * rng.uniform(0.5, 1.0, N.size)
    res = ST.error_term_slope(N, E, [(64, 128), (128, 256), (256, 512), (512, 1024), (1024, 2048)], 200)
    assert res.slope == pytest.approx(gamma, abs=0.05)
    assert all(b.count >= 200 for b in res.bands)


def test_error_term_slope_needs_samples():
    with pytest.raises(InsufficientData):
        ST.error_term_slope(np.array([70, 80]), np.ones(2), [(64, 128)], 200)


def test_error_terms_vanish_for_f0():
    f = O.f0(TABLE)
    N, E, fail = ST.error_terms(TABLE, f, 2048, seed=1)
    assert np.max(np.abs(E)) <= 1e-9


def test_birkhoff_grid_checks():
    with pytest.raises(InvalidParams):
        ST._grid([100, 10])
    assert ST._grid(5) == (5,)


def test_birkhoff_samples_induced_shapes():
    f = O.center(TABLE, O.f_smooth(TABLE))
    b = ST.birkhoff_samples(TABLE, f, "induced", [10, 100], m=256, seed=0)
    assert b.values.shape[0] == 2 and b.values.shape[1] == b.ids.size
    assert b.return_values is not None
    recs = list(b.records())
    assert len(recs) == 2 * b.ids.size


def test_birkhoff_samples_full_map_matches_direct_sum():
    from cuspbilliard import dynamics as D
    from cuspbilliard import streams

    f = O.center(TABLE, O.f_smooth(TABLE))
    b = ST.birkhoff_samples(TABLE, f, "full_map", [20], m=4, seed=6)
    u = streams.uniforms(6, streams.START, np.array([b.ids[0]]), 2)
    x = D.from_internal(TABLE, *D.sample_mu_array(TABLE, u)[0])
    total = 0.0
    for _ in range(20):
        total += f(x.component, x.r, x.phi)
        x = D.next_collision(TABLE, x).next
    assert b.at(20)[0] == pytest.approx(total / 20 ** (1 / 1.5), abs=1e-9)

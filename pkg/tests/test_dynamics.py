import csv
import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from cuspbilliard import _kernels as K
from cuspbilliard import dynamics as D
from cuspbilliard import streams
from cuspbilliard.errors import InvalidParams, SingularHit
from cuspbilliard.geometry import build_table
from cuspbilliard.oracle import oracle_orbit, oracle_step
from cuspbilliard.precise import precise_step

TABLE = build_table()
unit = st.floats(1e-6, 1 - 1e-6)


def state(u1, u2):
    return D.state_from_uniforms(TABLE, u1, u2)


def test_axis_shot_hits_the_cusp():
    x = D.make_state(TABLE, TABLE.len_gamma1 + TABLE.len_gamma3 / 2, math.pi / 2)
    with pytest.raises(SingularHit):
        D.next_collision(TABLE, x)


def test_phi_bounds():
    with pytest.raises(InvalidParams):
        D.make_state(TABLE, 2.0, 0.0)
    with pytest.raises(InvalidParams):
        D.make_state(TABLE, 2.0, math.pi)


def test_velocity_is_rotated_tangent():
    x = D.make_state(TABLE, 0.5, 0.7)
    _, _, tx, tz, _ = K.frame(TABLE.packed, x.component, x.q)
    # rotation of the tangent by phi towards the inward normal (t_z, -t_x)
    c, s = math.cos(0.7), math.sin(0.7)
    assert x.velocity[0] == pytest.approx(c * tx + s * tz, abs=1e-14)
    assert x.velocity[1] == pytest.approx(c * tz - s * tx, abs=1e-14)
    assert math.hypot(*x.velocity) == pytest.approx(1.0, abs=1e-14)


@given(unit, unit)
def test_segment_ends_on_boundary(u1, u2):
    x = state(u1, u2)
    try:
        res = D.next_collision(TABLE, x)
    except SingularHit:
        return
    assert res.tau > 0 and 0 < res.next.phi < math.pi
    end = (x.position[0] + res.tau * x.velocity[0], x.position[1] + res.tau * x.velocity[1])
    assert end[0] == pytest.approx(res.next.position[0], abs=1e-10)
    assert end[1] == pytest.approx(res.next.position[1], abs=1e-10)


@given(unit, unit)
def test_mirror_equivariance(u1, u2):
    x = state(u1, u2)
    try:
        a = D.next_collision(TABLE, x)
        b = D.next_collision(TABLE, D.mirror(TABLE, x))
    except SingularHit:
        return
    m = D.mirror(TABLE, a.next)
    assert b.next.component == m.component
    assert b.next.r == pytest.approx(m.r, abs=1e-10)
    assert b.next.phi == pytest.approx(m.phi, abs=1e-10)
    assert b.tau == pytest.approx(a.tau, abs=1e-12)


@given(unit, unit)
def test_reversibility(u1, u2):
    x = state(u1, u2)
    try:
        y = D.next_collision(TABLE, x).next
        back = D.prev_collision(TABLE, y).next
    except SingularHit:
        return
    assert back.component == x.component
    assert abs(back.r - x.r) + abs(back.phi - x.phi) <= 1e-10


def test_perpendicular_bounce_retraces():
    # phi = pi/2 on the arc off the axis: the reversed flight retraces the segment
    x = D.make_state(TABLE, TABLE.len_gamma1 + 0.3 * TABLE.len_gamma3, math.pi / 2)
    nxt = D.next_collision(TABLE, x)
    prv = D.prev_collision(TABLE, x)
    assert prv.next.component == nxt.next.component
    assert prv.next.r == pytest.approx(nxt.next.r, abs=1e-12)
    assert prv.next.phi == pytest.approx(math.pi - nxt.next.phi, abs=1e-12)


def _forward_ok(x, n):
    for _ in range(n):
        try:
            x = D.next_collision(TABLE, x).next
        except SingularHit:
            return None
        if math.sin(x.phi) < 1e-3:
            return None
    return x


def test_round_trip_double():
    # the map is chaotic, so double-precision round trips stay short
    rng = np.random.default_rng(5)
    done = 0
    while done < 5:
        x0 = state(*rng.random(2))
        x = _forward_ok(x0, 20)
        if x is None:
            continue
        for _ in range(20):
            x = D.prev_collision(TABLE, x).next
        assert abs(x.r - x0.r) + abs(x.phi - x0.phi) <= 1e-6
        done += 1


def test_round_trip_oracle_100_steps():
    rng = np.random.default_rng(6)
    x0 = None
    while x0 is None:
        x0 = state(*rng.random(2))
        if _forward_ok(x0, 100) is None:
            x0 = None
    fw = oracle_orbit(TABLE, x0.component, x0.q, x0.phi, 100, 60)[-1]
    with mpmath.workdps(60):
        back = oracle_orbit(TABLE, fw.component, fw.q, mpmath.pi - fw.phi, 100, 60)[-1]
        assert back.component == x0.component
        assert abs(back.q - x0.q) <= 1e-10
        assert abs((mpmath.pi - back.phi) - x0.phi) <= 1e-10


def test_sample_mu_median_and_moments():
    assert D.state_from_uniforms(TABLE, 0.3, 0.5).phi == pytest.approx(math.pi / 2, abs=1e-15)
    u = streams.uniforms(11, streams.START, np.arange(10**6), 2)
    s = D.sample_mu_array(TABLE, u)
    assert abs(np.cos(s[:, 2]).mean()) <= 3e-3
    from scipy import stats

    assert stats.kstest(s[:, 2], lambda v: 0.5 * (1 - np.cos(v))).statistic <= 2e-3


def test_arc_only_samples_on_arc():
    u = streams.uniforms(3, streams.START, np.arange(1000), 2)
    assert np.all(D.sample_mu_array(TABLE, u, arc_only=True)[:, 0] == 3)


def test_deep_cusp_state_matches_oracle(rng):
    for _ in range(20):
        phi = rng.uniform(0.05, math.pi - 0.05)
        res = D.next_collision(TABLE, D.from_internal(TABLE, 1, 0.05, phi))
        o = oracle_step(TABLE, 1, 0.05, phi)
        assert res.next.component == o.component
        assert abs(res.next.r - float(o.r)) <= 1e-12
        assert abs(res.next.phi - float(o.phi)) <= 1e-12


def test_escalation_flag_deep_in_cusp():
    res = D.next_collision(TABLE, D.from_internal(TABLE, 1, 5e-5, 1.0))
    assert res.flags.precision_escalated


def test_oracle_precision_self_consistency(rng):
    for _ in range(100):
        u = rng.random(2)
        c, q, phi = D.sample_mu_array(TABLE, u[None, :])[0]
        try:
            a = oracle_step(TABLE, int(c), q, phi, 30)
            b = oracle_step(TABLE, int(c), q, phi, 60)
        except SingularHit:
            continue
        assert a.component == b.component
        with mpmath.workdps(60):
            assert abs(a.r - b.r) <= 1e-25 and abs(a.phi - b.phi) <= 1e-25


def test_oracle_wall_to_arc_closed_form():
    # a straight shot from a wall point to a chosen arc point
    th2 = 0.1
    rad, cx, th0 = TABLE.arc_radius, TABLE.arc_center_x, TABLE.params.theta0
    s1 = 0.9
    p1 = np.array([s1, s1**3 / 3])
    p2 = np.array([cx - rad * math.cos(th2), rad * math.sin(th2)])
    d = p2 - p1
    d /= np.linalg.norm(d)
    _, _, tx, tz, _ = K.frame(TABLE.packed, 1, s1)
    phi = math.atan2(d[0] * tz - d[1] * tx, d[0] * tx + d[1] * tz)
    o = oracle_step(TABLE, 1, s1, phi)
    assert o.component == 3
    assert float(o.q) == pytest.approx((th0 - th2) * rad, abs=1e-14)
    assert float(o.tau) == pytest.approx(np.linalg.norm(p2 - p1), abs=1e-14)
    # angle of reflection against the radial normal
    nrm = np.array([math.cos(th2), -math.sin(th2)])
    assert math.sin(float(o.phi)) == pytest.approx(abs(d @ nrm), abs=1e-13)


def test_corner_series_oracle_precision_sweep():
    # an excursion of about a thousand bounces, followed through the oracle
    # at 60 and at 90 digits; the exit state must agree to 1e-20
    found = None
    u = streams.uniforms(2, streams.START, np.arange(1 << 16), 2)
    starts = D.sample_mu_array(TABLE, u, arc_only=True)
    from cuspbilliard.batch import run_induced

    out = run_induced(TABLE, starts)
    idx = np.nonzero((out["R"] > 200) & (out["R"] < 2000))[0]
    assert idx.size
    found = starts[idx[0]]
    n = int(out["R"][idx[0]])
    c, q, phi = int(found[0]), found[1], found[2]
    a = oracle_orbit(TABLE, c, q, phi, n, 60)[-1]
    b = oracle_orbit(TABLE, c, q, phi, n, 90)[-1]
    assert a.component == b.component == 3
    with mpmath.workdps(90):
        assert abs(a.r - b.r) <= 1e-20 and abs(a.phi - b.phi) <= 1e-20


def test_precise_step_matches_oracle(rng):
    worst = 0.0
    for _ in range(300):
        comp = int(rng.integers(1, 3))
        s = 10 ** rng.uniform(-5, -0.5)
        phi = rng.uniform(0.01, math.pi - 0.01)
        try:
            a = oracle_step(TABLE, comp, s, phi)
        except SingularHit:
            with pytest.raises(SingularHit):
                precise_step(TABLE, comp, s, phi)
            continue
        b = precise_step(TABLE, comp, s, phi)
        assert a.component == b.component
        with mpmath.workdps(60):
            bq, bp = mpmath.mpf(str(b.q)), mpmath.mpf(str(b.phi))
            worst = max(worst, float(abs(a.q - bq) / abs(a.q)), float(abs(a.phi - bp)))
    assert worst <= 1e-55


def test_map_array_matches_single_steps():
    u = streams.uniforms(9, streams.START, np.arange(500), 2)
    s = D.sample_mu_array(TABLE, u)
    s[0] = [1, 3e-5, 1.2]  # forces an escalated step
    out = D.map_array(TABLE, s)
    for i in range(0, 500, 25):
        c, q, phi, tau, _ = D._advance(TABLE, int(s[i, 0]), s[i, 1], s[i, 2], D.DEFAULT_POLICY)
        assert (out[i, 0], out[i, 1], out[i, 2], out[i, 4]) == (c, q, phi, tau)


def test_cusp_bounces_alternate():
    x = D.from_internal(TABLE, 3, 0.3 * TABLE.len_gamma3, 1.4)
    tr = D.run_trace(TABLE, x, 10**6, stop_on_arc=True)
    walls = tr.comp[1:-1]
    assert np.all(np.isin(walls, (1, 2)))
    assert np.all(walls[1:] != walls[:-1])


def test_trace_csv(tmp_path):
    x = D.make_state(TABLE, 1.5, 1.0)
    tr = D.run_trace(TABLE, x, 50)
    p = tmp_path / "trace.csv"
    D.write_trace_csv(p, tr)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["step", "component", "r", "phi", "tau", "flags"]
    assert len(rows) == 52
    assert float(rows[1][2]) == tr.r[0]


def test_policy_from_dict():
    p = D.PrecisionPolicy.from_dict({"digits": 40, "enabled": False})
    assert p.digits == 40 and not p.enabled

import math

import pytest
from hypothesis import given, strategies as st

from cuspbilliard import dynamics as D
from cuspbilliard.errors import InvalidParams, SingularHit
from cuspbilliard.geometry import build_table
from cuspbilliard.precise import precise_step

TABLE = build_table()


def test_rejects_low_precision():
    with pytest.raises(InvalidParams):
        precise_step(TABLE, 1, 0.5, 1.0, digits=20)


@given(st.integers(1, 2), st.floats(-5, -0.3), st.floats(0.01, math.pi - 0.01))
def test_precision_converges(comp, logs, phi):
    s = 10**logs
    try:
        a = precise_step(TABLE, comp, s, phi, 60)
    except SingularHit:
        return
    b = precise_step(TABLE, comp, s, phi, 90)
    assert a.component == b.component
    assert abs(float(a.q - b.q)) <= 1e-50 and abs(float(a.phi - b.phi)) <= 1e-50


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_agrees_with_double_solver(u1, u2):
    x = D.state_from_uniforms(TABLE, u1, u2)
    try:
        fast = D.next_collision(TABLE, x)
        p = precise_step(TABLE, x.component, x.q, x.phi)
    except SingularHit:
        return
    if math.sin(fast.next.phi) < 1e-4:
        return
    assert p.component == fast.next.component
    assert float(p.r) == pytest.approx(fast.next.r, abs=1e-9)
    assert float(p.phi) == pytest.approx(fast.next.phi, abs=1e-9)


def test_axis_shot_is_singular():
    q = TABLE.len_gamma3 / 2
    with pytest.raises(SingularHit):
        precise_step(TABLE, 3, q, math.pi / 2)

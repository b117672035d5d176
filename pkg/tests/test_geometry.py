import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cuspbilliard import geometry as G
from cuspbilliard.errors import GeometryInvalid, InvalidParams, OutOfRange
from conftest import wall_length_reference


def test_default_table_closed_forms(table):
    assert table.arc_radius == pytest.approx(2 / 3, rel=1e-15)
    assert table.arc_center_x == pytest.approx(1 + math.sqrt(3) / 3, rel=1e-15)
    assert table.len_gamma3 == pytest.approx(2 * math.pi / 9, rel=1e-15)
    assert table.r_prime == 0.0 and table.r_doubleprime == table.perimeter


def test_default_lengths_against_quadrature(table):
    ref = wall_length_reference(3, 1.0)
    assert table.len_gamma1 == pytest.approx(ref, rel=1e-12)
    assert table.len_gamma1 == pytest.approx(1.0894294132248221, rel=1e-13)
    assert table.perimeter == pytest.approx(2 * ref + 2 * math.pi / 9, rel=1e-12)
    assert G.component_lengths(table) == (table.len_gamma1, table.len_gamma2, table.len_gamma3, table.perimeter)


def test_mu_M_value(table):
    assert table.mu_M == pytest.approx(0.24266040996168475, rel=1e-12)


def test_junction_constraint_rejected():
    with pytest.raises(InvalidParams, match="cot"):
        G.build_table(G.TableParams(3.0, 1.0, math.pi / 3))


@pytest.mark.parametrize("kw", [{"beta": 2.0}, {"s1": -1.0}, {"theta0": 0.0}, {"theta0": 2.0}, {"beta": math.nan}])
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        G.build_table(G.TableParams(**{**G.TableParams().to_dict(), **kw}))


def test_default_table_validates(table):
    rep = G.validate_table(table)
    assert rep.ok
    assert set(rep.checks) >= {"endpoints", "simple_boundary", "channel", "arc_curvature", "opposing_point"}


def test_near_limit_theta_validates():
    th = 0.9 * math.atan(1.0)
    G.validate_table(G.build_table(G.TableParams(3.0, 1.0, th)))


def test_perturbed_radius_fails(table):
    from dataclasses import replace

    bad = replace(table, arc_radius=table.arc_radius * 1.01)
    with pytest.raises(GeometryInvalid, match="endpoints"):
        G.validate_table(bad)
    assert not G.validation_report(bad).ok


def test_point_at_cusp_and_axis(table):
    p = G.point_at(table, 0.0)
    assert p.position == (0.0, 0.0) and p.tangent_angle == 0.0 and p.curvature == 0.0
    q = G.point_at(table, table.len_gamma1 + table.len_gamma3 / 2)
    assert q.position[0] == pytest.approx(table.arc_center_x - table.arc_radius, abs=1e-14)
    assert q.position[1] == pytest.approx(0.0, abs=1e-14)
    assert abs(math.cos(q.tangent_angle)) < 1e-12
    assert q.curvature == pytest.approx(1 / table.arc_radius)


def test_out_of_range(table):
    with pytest.raises(OutOfRange):
        G.point_at(table, -1e-3)
    with pytest.raises(OutOfRange):
        G.point_at(table, table.perimeter + 1e-3)


def test_small_r_abscissa(table):
    r = 1e-3
    s = G.wall_abscissa(table, r)
    assert abs(s - r) <= 1e-9
    assert G.wall_arclength(table, s) == pytest.approx(wall_length_reference(3, s), rel=1e-13)


def test_large_beta_length_decreases_to_one():
    lens = [G.build_table(G.TableParams(b, 1.0, 0.1)).len_gamma1 for b in (3, 5, 10, 40)]
    assert all(x > y for x, y in zip(lens, lens[1:])) and lens[-1] > 1.0


@given(st.floats(0.0, 1.0))
def test_mirror_symmetry(r_frac):
    table = G.build_table()
    r = r_frac * table.perimeter
    a = G.point_at(table, r)
    b = G.point_at(table, table.perimeter - r)
    assert b.position[0] == pytest.approx(a.position[0], abs=1e-12)
    assert b.position[1] == pytest.approx(-a.position[1], abs=1e-12)


@given(st.floats(0.0, 1.0))
def test_arclength_round_trip(frac):
    table = G.build_table()
    r = frac * table.len_gamma1
    s = G.wall_abscissa(table, r)
    assert G.wall_arclength(table, s) == pytest.approx(r, abs=1e-10)


@given(st.floats(1e-3, 1.0 - 1e-4))
def test_wall_curvature_finite_difference(s):
    b = 3.0
    h = 1e-5 * max(s, 1e-2)
    ang = lambda x: math.atan(x ** (b - 1))
    ds = G._wall_length(b, s + h) - G._wall_length(b, s - h)
    fd = (ang(s + h) - ang(s - h)) / ds
    assert G.wall_curvature(b, s) == pytest.approx(fd, rel=1e-6)


@given(st.floats(2.1, 6.0), st.floats(0.2, 1.5))
def test_tables_in_family_validate(beta, s1):
    th = 0.5 * math.atan(1 / s1 ** (beta - 1))
    t = G.build_table(G.TableParams(beta, s1, th))
    assert G.validation_report(t, n=2000).ok
    assert t.len_gamma1 == t.len_gamma2
    assert t.perimeter == pytest.approx(t.len_gamma1 + t.len_gamma2 + t.len_gamma3, rel=1e-14)


def test_load_table_json(tmp_path):
    p = tmp_path / "t.json"
    p.write_text('{"beta": 4, "s1": 0.5, "theta0": 0.4}')
    t = G.load_table(p)
    assert t.beta == 4.0 and t.params.s1 == 0.5

"""Billiard table with a flat-point cusp closed by a dispersing circular arc.

The walls are z = +/- s**beta / beta for 0 <= s <= s1. They meet tangentially
at the vertex P = (0, 0) and are joined at x = s1 by an arc of a circle
centred on the symmetry axis. Arclength runs from P along the upper wall,
across the arc, and back to P along the lower wall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import integrate

from . import _kernels as K
from .errors import GeometryInvalid, InvalidParams, OutOfRange

COMPONENTS = {1: "gamma1", 2: "gamma2", 3: "gamma3"}

_N_PANELS = 256
_SERIES_Y = 0.01


@dataclass(frozen=True)
class TableParams:
    beta: float = 3.0
    s1: float = 1.0
    theta0: float = math.pi / 6

    def check(self) -> None:
        b, s1, th = self.beta, self.s1, self.theta0
        if not all(math.isfinite(v) for v in (b, s1, th)):
            raise InvalidParams("parameters must be finite")
        if not b > 2:
            raise InvalidParams(f"beta must exceed 2, got {b}")
        if not s1 > 0:
            raise InvalidParams(f"s1 must be positive, got {s1}")
        if not 0 < th < math.pi / 2:
            raise InvalidParams(f"theta0 must lie in (0, pi/2), got {th}")
        if not 1 / math.tan(th) > s1 ** (b - 1):
            raise InvalidParams(
                f"junction constraint cot(theta0) > s1**(beta-1) fails: "
                f"{1 / math.tan(th):.6g} <= {s1 ** (b - 1):.6g}"
            )

    @property
    def alpha(self) -> float:
        return self.beta / (self.beta - 1)

    @classmethod
    def from_dict(cls, d: dict) -> "TableParams":
        unknown = set(d) - {"beta", "s1", "theta0"}
        if unknown:
            raise InvalidParams(f"unknown table fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"beta": self.beta, "s1": self.s1, "theta0": self.theta0}


@dataclass(frozen=True)
class CuspTable:
    params: TableParams
    arc_center_x: float
    arc_radius: float
    len_gamma1: float
    len_gamma2: float
    len_gamma3: float
    perimeter: float
    r_prime: float = 0.0
    r_doubleprime: float = field(default=0.0)

    @property
    def beta(self) -> float:
        return self.params.beta

    @property
    def alpha(self) -> float:
        return self.params.alpha

    @property
    def mu_M(self) -> float:
        """Invariant measure of the arc collisions."""
        return (self.perimeter - self.len_gamma1 - self.len_gamma2) / self.perimeter

    @cached_property
    def packed(self) -> np.ndarray:
        """Geometry vector consumed by the compiled kernels."""
        p = self.params
        expo = 2 * p.beta - 2
        s_ser = min(p.s1, _SERIES_Y ** (1 / expo))
        width = (p.s1 - s_ser) / _N_PANELS
        cum = np.empty(_N_PANELS + 1)
        cum[0] = K.arc_series(s_ser, expo)
        x, w = np.polynomial.legendre.leggauss(8)
        for k in range(_N_PANELS):
            a = s_ser + k * width
            nodes = a + 0.5 * width * (x + 1)
            cum[k + 1] = cum[k] + 0.5 * width * np.dot(w, np.sqrt(1 + nodes**expo))
        if width == 0.0:
            width = 1.0
        return K.pack_geometry(
            p.beta, p.s1, p.theta0, self.arc_center_x, self.arc_radius,
            self.len_gamma1, self.len_gamma3, self.perimeter, cum, s_ser, width,
        )


@dataclass(frozen=True)
class BoundaryPoint:
    component: int
    r: float
    s: float
    position: tuple[float, float]
    tangent_angle: float
    curvature: float


@dataclass
class ValidationReport:
    checks: dict[str, dict] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {"pass": self.ok, "checks": self.checks}


def _wall_length(beta: float, s: float) -> float:
    val, _ = integrate.quad(
        lambda x: math.sqrt(1 + x ** (2 * beta - 2)), 0, s, epsabs=0, epsrel=1e-13, limit=200
    )
    return val


def build_table(params: TableParams | None = None, **kw) -> CuspTable:
    """Construct the table; keyword arguments override ``params`` fields."""
    if params is None:
        params = TableParams(**kw)
    elif kw:
        params = TableParams(**{**params.to_dict(), **kw})
    params.check()
    b, s1, th = params.beta, params.s1, params.theta0
    radius = s1**b / (b * math.sin(th))
    center = s1 + radius * math.cos(th)
    l1 = _wall_length(b, s1)
    l3 = 2 * th * radius
    perim = 2 * l1 + l3
    return CuspTable(params, center, radius, l1, l1, l3, perim, 0.0, perim)


def load_table(source) -> CuspTable:
    """Build a table from a dict, a JSON string, or a path to a JSON file."""
    if isinstance(source, TableParams):
        return build_table(source)
    if isinstance(source, dict):
        return build_table(TableParams.from_dict(source))
    text = str(source)
    if not text.lstrip().startswith("{"):
        text = Path(text).read_text()
    try:
        return build_table(TableParams.from_dict(json.loads(text)))
    except json.JSONDecodeError as exc:
        raise InvalidParams(f"table JSON: {exc}") from exc


def component_lengths(table: CuspTable) -> tuple[float, float, float, float]:
    return table.len_gamma1, table.len_gamma2, table.len_gamma3, table.perimeter


def wall_arclength(table: CuspTable, s: float) -> float:
    """Arclength of a cusp wall from P to abscissa s."""
    return K.wall_arclength(table.packed, float(s))


def wall_abscissa(table: CuspTable, r: float) -> float:
    """Inverse of ``wall_arclength``."""
    return K.wall_abscissa(table.packed, float(r))


def locate(table: CuspTable, r: float) -> tuple[int, float]:
    """Map arclength to (component, internal coordinate)."""
    if not 0.0 <= r <= table.perimeter:
        raise OutOfRange(f"r={r} outside [0, {table.perimeter}]")
    return K.r_to_q(table.packed, float(r))


def point_at(table: CuspTable, r: float) -> BoundaryPoint:
    comp, q = locate(table, r)
    x, z, tx, tz, kappa = K.frame(table.packed, comp, q)
    return BoundaryPoint(comp, float(r), q, (x, z), math.atan2(tz, tx), kappa)


def wall_curvature(beta: float, s: float) -> float:
    return (beta - 1) * s ** (beta - 2) / (1 + s ** (2 * beta - 2)) ** 1.5


# ---------------------------------------------------------------------------
# validation


def _boundary_ring(table: CuspTable, n: int) -> np.ndarray:
    b, s1 = table.beta, table.params.s1
    s = np.linspace(0.0, s1, n)
    upper = np.column_stack([s, s**b / b])
    th = np.linspace(table.params.theta0, -table.params.theta0, n)[1:-1]
    arc = np.column_stack(
        [table.arc_center_x - table.arc_radius * np.cos(th), table.arc_radius * np.sin(th)]
    )
    lower = upper[::-1].copy()
    lower[:, 1] *= -1
    return np.vstack([upper, arc, lower[:-1]])


def _run_checks(table: CuspTable, n: int = 10_000) -> ValidationReport:
    rep = ValidationReport()
    p = table.params
    b, s1 = p.beta, p.s1
    c, rad = table.arc_center_x, table.arc_radius
    h1 = s1**b / b

    def add(name, ok, **info):
        rep.checks[name] = {"pass": bool(ok), **info}

    try:
        p.check()
        add("params", True)
    except InvalidParams as exc:
        add("params", False, detail=str(exc))

    # the arc must meet both wall endpoints
    mismatch = abs(math.hypot(s1 - c, h1) - rad) / rad
    add("endpoints", mismatch <= 1e-12, relative_mismatch=mismatch)

    lsum = table.len_gamma1 + table.len_gamma2 + table.len_gamma3
    add(
        "lengths",
        table.len_gamma1 == table.len_gamma2
        and abs(lsum - table.perimeter) <= 1e-12 * table.perimeter
        and abs(table.len_gamma3 - 2 * p.theta0 * rad) <= 1e-12 * table.len_gamma3,
    )

    try:
        from shapely.geometry import LinearRing

        ring = LinearRing(_boundary_ring(table, n))
        add("simple_boundary", ring.is_simple and ring.is_valid, points_per_component=n)
    except Exception as exc:  # shapely rejects degenerate rings by raising
        add("simple_boundary", False, detail=str(exc))

    # between the arc's axis point and s1 the arc must stay inside the channel
    x_axis = c - rad
    xs = np.linspace(x_axis, s1, n)[1:-1]
    z_arc = np.sqrt(np.maximum(rad**2 - (c - xs) ** 2, 0.0))
    gap = xs**b / b - z_arc
    add("channel", x_axis > 0 and bool(np.all(gap > 0)), min_gap=float(gap.min()) if gap.size else None)

    add("arc_curvature", math.isfinite(rad) and rad > 0, curvature=1 / rad if rad > 0 else None)

    # perpendicular opposing point: the axis ray from P meets the arc at its
    # midpoint, where the normal is horizontal
    g = table.packed
    x, z, tx, tz, _ = K.frame(g, 3, table.len_gamma3 / 2)
    ok = abs(z) <= 1e-12 and abs(tx) <= 1e-12 and abs(x - x_axis) <= 1e-12 * max(1, c)
    add("opposing_point", ok, axis_point=[x, z])
    return rep


def validate_table(table: CuspTable, n: int = 10_000) -> ValidationReport:
    """Run all geometric checks; raise GeometryInvalid on the first failure."""
    rep = _run_checks(table, n)
    for name, res in rep.checks.items():
        if not res["pass"]:
            raise GeometryInvalid(f"check '{name}' failed: {res}")
    return rep


def validation_report(table: CuspTable, n: int = 10_000) -> ValidationReport:
    """Like validate_table but never raises."""
    return _run_checks(table, n)

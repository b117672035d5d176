"""The billiard map on the collision space.

A collision state is (r, phi): boundary arclength and the angle from the unit
tangent (direction of increasing r) to the outgoing velocity. Arclength runs
clockwise around the table, so the interior lies to the right of the tangent
and the velocity is the tangent turned clockwise by phi.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .errors import InvalidParams, NoIntersection, SingularHit
from .geometry import CuspTable, locate
from .oracle import oracle_step
from .precise import precise_step


@dataclass(frozen=True)
class PrecisionPolicy:
    digits: int = 60
    sin_phi: float = 1e-6
    min_tau: float = 1e-9
    min_s: float = 1e-4
    enabled: bool = True

    def vector(self) -> np.ndarray:
        return K.default_policy(self.enabled, self.sin_phi, self.min_tau, self.min_s)

    @classmethod
    def from_dict(cls, d: dict | None) -> "PrecisionPolicy":
        return cls(**(d or {}))


DEFAULT_POLICY = PrecisionPolicy()


@dataclass(frozen=True)
class CollisionState:
    component: int
    r: float
    phi: float
    q: float
    position: tuple[float, float] = field(compare=False)
    velocity: tuple[float, float] = field(compare=False)

    @property
    def internal(self) -> tuple[int, float, float]:
        return self.component, self.q, self.phi


@dataclass(frozen=True)
class Flags:
    near_grazing: bool = False
    near_corner: bool = False
    precision_escalated: bool = False


@dataclass(frozen=True)
class FlightResult:
    next: CollisionState
    tau: float
    flags: Flags


def from_internal(table: CuspTable, comp: int, q: float, phi: float, r: float | None = None) -> CollisionState:
    g = table.packed
    comp, q, phi = int(comp), float(q), float(phi)
    if not 0.0 < phi < math.pi:
        raise InvalidParams(f"phi={phi} outside (0, pi)")
    if r is None:
        r = K.q_to_r(g, comp, q)
    x, z, tx, tz, _ = K.frame(g, comp, q)
    c, s = math.cos(phi), math.sin(phi)
    vel = (c * tx + s * tz, c * tz - s * tx)
    return CollisionState(comp, float(r), phi, q, (x, z), vel)


def make_state(table: CuspTable, r: float, phi: float) -> CollisionState:
    comp, q = locate(table, r)
    return from_internal(table, comp, q, phi, r)


def mirror(table: CuspTable, state: CollisionState) -> CollisionState:
    """Reflection in the symmetry axis: (r, phi) -> (|dQ| - r, pi - phi)."""
    comp = {1: 2, 2: 1, 3: 3}[state.component]
    q = table.len_gamma3 - state.q if comp == 3 else state.q
    return from_internal(table, comp, q, math.pi - state.phi)


def involution(table: CuspTable, state: CollisionState) -> CollisionState:
    """Time reversal I(r, phi) = (r, pi - phi)."""
    return from_internal(table, state.component, state.q, math.pi - state.phi, state.r)


def _flags(table: CuspTable, comp: int, q: float, phi: float, escalated: bool) -> Flags:
    lim = table.len_gamma3 if comp == 3 else table.params.s1
    return Flags(
        near_grazing=math.sin(phi) < K.NEAR_GRAZING,
        near_corner=min(q, lim - q) < K.NEAR_CORNER,
        precision_escalated=escalated,
    )


def _escalated(table, comp, q, phi, digits):
    """Extended-precision step; the root-polishing oracle settles any case the
    fast solver cannot."""
    try:
        return precise_step(table, comp, q, phi, digits)
    except NoIntersection:
        return oracle_step(table, comp, q, phi, digits)


def _advance(table, comp, q, phi, policy):
    """Internal-coordinate step with escalation; returns (comp, q, phi, tau, escalated)."""
    st, nc, nq, nphi, tau = K.step(table.packed, policy.vector(), comp, q, phi)
    if st == K.ESCALATE:
        res = _escalated(table, comp, q, phi, policy.digits)
        return res.component, float(res.q), float(res.phi), float(res.tau), True
    if st == K.SINGULAR:
        raise SingularHit(f"singular collision from component {comp} at q={q!r}, phi={phi!r}")
    if st == K.NOHIT:
        raise NoIntersection(f"no boundary hit from component {comp} at q={q!r}, phi={phi!r}")
    return nc, nq, nphi, tau, False


def next_collision(table: CuspTable, state: CollisionState, policy: PrecisionPolicy = DEFAULT_POLICY) -> FlightResult:
    comp, q, phi, tau, esc = _advance(table, *state.internal, policy)
    nxt = from_internal(table, comp, q, phi)
    return FlightResult(nxt, tau, _flags(table, comp, q, phi, esc))


def prev_collision(table: CuspTable, state: CollisionState, policy: PrecisionPolicy = DEFAULT_POLICY) -> FlightResult:
    """Previous collision via time reversal, I T I."""
    comp, q, phi, tau, esc = _advance(table, state.component, state.q, math.pi - state.phi, policy)
    prev = from_internal(table, comp, q, math.pi - phi)
    return FlightResult(prev, tau, _flags(table, comp, q, phi, esc))


def state_from_uniforms(table: CuspTable, u1: float, u2: float, arc_only: bool = False) -> CollisionState:
    row = K.states_from_uniforms(table.packed, np.array([[u1, u2]]), arc_only)[0]
    return from_internal(table, int(row[0]), row[1], row[2])


def sample_mu(table: CuspTable, rng: np.random.Generator) -> CollisionState:
    """One draw from the invariant measure proportional to sin(phi) dr dphi."""
    u1, u2 = rng.random(2)
    return state_from_uniforms(table, u1, u2)


def sample_mu_array(table: CuspTable, u: np.ndarray, arc_only: bool = False) -> np.ndarray:
    """Vectorised draws from (m, 2) uniforms; rows are (comp, q, phi)."""
    return K.states_from_uniforms(table.packed, np.ascontiguousarray(u, dtype=np.float64), arc_only)


def escalate_row(table: CuspTable, comp: int, q: float, phi: float, digits: int) -> np.ndarray:
    """Forced-step record for the batch engines: [flag, status, comp, q, phi, tau]."""
    try:
        res = _escalated(table, int(comp), q, phi, digits)
    except SingularHit:
        return np.array([1.0, K.SINGULAR, comp, q, phi, 0.0])
    except NoIntersection:
        return np.array([1.0, K.NOHIT, comp, q, phi, 0.0])
    return np.array([1.0, K.OK, res.component, float(res.q), float(res.phi), float(res.tau)])


def map_array(table: CuspTable, states: np.ndarray, policy: PrecisionPolicy = DEFAULT_POLICY,
              reverse: bool = False) -> np.ndarray:
    """One step of T (or of I T I when ``reverse``) for each row [comp, q, phi].

    Rows of the result are [comp, q, phi, status, tau]; steps the fast solver
    hands back for escalation are redone in extended precision.
    """
    states = np.ascontiguousarray(states, dtype=np.float64)
    out = K.map_states(table.packed, policy.vector(), states, reverse)
    for i in np.nonzero(out[:, 3] == K.ESCALATE)[0]:
        c, q, phi = states[i]
        if reverse:
            phi = math.pi - phi
        row = escalate_row(table, c, q, phi, policy.digits)
        out[i, :] = row[2], row[3], math.pi - row[4] if reverse else row[4], row[1], row[5]
    return out


# ---------------------------------------------------------------------------
# orbit traces


@dataclass
class Trace:
    """Per-collision records; row k is the state after k steps."""

    comp: np.ndarray
    q: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    flags: np.ndarray
    r: np.ndarray
    stop: str = "complete"

    def __len__(self) -> int:
        return self.comp.size


FLAG_GRAZING, FLAG_CORNER, FLAG_ESCALATED = 1, 2, 4


def run_trace(table: CuspTable, start: CollisionState, steps: int, policy: PrecisionPolicy = DEFAULT_POLICY,
              stop_on_arc: bool = False, cap: int | None = None) -> Trace:
    """Iterate from ``start`` for ``steps`` collisions (or until the arc when
    ``stop_on_arc``), escalating precision where the policy asks for it."""
    g, pol = table.packed, policy.vector()
    n_max = steps if cap is None else cap
    size = min(n_max, 1 << 12) + 1
    out = np.zeros((size, 5))
    out[0, :3] = start.internal
    status = np.zeros(1, dtype=np.int64)
    k = 0
    stop = "complete"
    while True:
        lim = min(n_max, out.shape[0] - 1)
        k = K.trace_engine(g, pol, int(out[k, 0]), out[k, 1], out[k, 2], k, lim, stop_on_arc, out, status)
        st = int(status[0])
        if st == K.PAUSED:
            row = escalate_row(table, out[k, 0], out[k, 1], out[k, 2], policy.digits)
            if row[1] != K.OK:
                stop = "singular" if row[1] == K.SINGULAR else "no-intersection"
                break
            k += 1
            if k >= out.shape[0]:
                out = np.vstack([out, np.zeros_like(out)])
            out[k, :4] = row[2:6]
            fl = FLAG_ESCALATED
            if math.sin(row[4]) < K.NEAR_GRAZING:
                fl |= FLAG_GRAZING
            out[k, 4] = fl
            if (stop_on_arc and row[2] == 3) or k >= n_max:
                break
            continue
        if st == K.RUNNING and k < n_max:
            out = np.vstack([out, np.zeros_like(out)])
            continue
        if st == K.FAIL_SINGULAR:
            stop = "singular"
        elif st == K.FAIL_NOHIT:
            stop = "no-intersection"
        elif st == K.RUNNING and stop_on_arc:
            stop = "cap"
        break
    out = out[: k + 1]
    comp = out[:, 0].astype(np.int64)
    r = K.states_to_r(g, out[:, :3])
    return Trace(comp, out[:, 1].copy(), out[:, 2].copy(), out[:, 3].copy(), out[:, 4].astype(np.int64), r, stop)


def write_trace_csv(path: str | Path, trace: Trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "component", "r", "phi", "tau", "flags"])
        for k in range(len(trace)):
            w.writerow([k, int(trace.comp[k]), repr(float(trace.r[k])), repr(float(trace.phi[k])),
                        repr(float(trace.tau[k])), int(trace.flags[k])])

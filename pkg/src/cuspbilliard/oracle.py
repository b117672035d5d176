"""Arbitrary-precision reference implementation of one billiard step.

The oracle shares only the table parameters with the compiled solver. Wall
hits are found as polynomial roots when beta is an integer (falling back to a
bracketed secant-type solver otherwise), circle hits from the textbook
quadratic formula, and arclength from a binomial series plus high-order
Gauss-Legendre panels, all at the requested decimal precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import mpmath
from mpmath import mp, mpf

from .errors import InvalidParams, NoIntersection, SingularHit

_PANELS = 64
_NODES = 30


@dataclass(frozen=True)
class OracleResult:
    component: int
    q: mpf
    r: mpf
    phi: mpf
    tau: mpf
    digits: int

    def as_floats(self) -> tuple[int, float, float, float, float]:
        return self.component, float(self.q), float(self.r), float(self.phi), float(self.tau)


class _MpTable:
    def __init__(self, beta: float, s1: float, theta0: float, digits: int):
        self.digits = digits
        with mp.workdps(digits + 10):
            self.beta = mpf(beta)
            self.ibeta = int(beta) if float(beta).is_integer() else None
            self.s1 = mpf(s1)
            self.theta0 = mpf(theta0)
            self.rad = self.s1**self.beta / (self.beta * mpmath.sin(self.theta0))
            self.cx = self.s1 + self.rad * mpmath.cos(self.theta0)
            self.p = 2 * self.beta - 2
            self.s0 = min(self.s1, mpf(1) / 4 ** (1 / self.p))
            x, w = mp.gauss_quadrature(_NODES, "legendre")
            self.gl = list(zip(x, w))
            self.width = (self.s1 - self.s0) / _PANELS
            cum = [self._series(self.s0)]
            for k in range(_PANELS):
                a = self.s0 + k * self.width
                cum.append(cum[-1] + self._panel(a, a + self.width))
            self.cum = cum
            self.len1 = cum[-1]
            self.len3 = 2 * self.theta0 * self.rad
            self.perim = 2 * self.len1 + self.len3

    def _series(self, s):
        y = s**self.p
        total, coef, yk, k = mpf(0), mpf(1), mpf(1), 0
        eps = mpf(10) ** (-mp.dps - 5)
        while True:
            term = coef * yk / (k * self.p + 1)
            total += term
            if abs(term) <= eps * abs(total):
                return s * total
            coef *= (mpf(1) / 2 - k) / (k + 1)
            yk *= y
            k += 1

    def _panel(self, a, b):
        half, mid = (b - a) / 2, (b + a) / 2
        return half * mpmath.fsum(w * mpmath.sqrt(1 + (mid + half * x) ** self.p) for x, w in self.gl)

    def wall_arclength(self, s):
        if s <= self.s0:
            return self._series(s)
        k = min(int((s - self.s0) / self.width), _PANELS - 1)
        a = self.s0 + k * self.width
        return self.cum[k] + self._panel(a, s)

    def r_of(self, comp, q):
        if comp == 1:
            return self.wall_arclength(q)
        if comp == 3:
            return self.len1 + q
        return self.perim - self.wall_arclength(q)

    def frame(self, comp, q):
        if comp == 3:
            th = self.theta0 - q / self.rad
            pos = (self.cx - self.rad * mpmath.cos(th), self.rad * mpmath.sin(th))
            return pos, (-mpmath.sin(th), -mpmath.cos(th))
        slope = q ** (self.beta - 1)
        n = mpmath.sqrt(1 + slope**2)
        h = q**self.beta / self.beta
        if comp == 1:
            return (q, h), (1 / n, slope / n)
        return (q, -h), (-1 / n, slope / n)

    # ray-boundary intersections ------------------------------------------

    def wall_roots(self, p, u, sgn):
        """Positive t where the ray meets the graph z = sgn*x**beta/beta, x in [0, s1]."""
        px, pz = p
        ux, uz = u
        tol = mpf(10) ** (-(mp.dps // 2))
        cands = []
        if self.ibeta is not None:
            b = self.ibeta
            # (px + t ux)^b / b - sgn (pz + t uz), coefficients highest degree first
            coeffs = [mpmath.binomial(b, j) * px ** (b - j) * ux**j / b for j in range(b, -1, -1)]
            coeffs[-1] -= sgn * pz
            coeffs[-2] -= sgn * uz
            while coeffs and coeffs[0] == 0:
                coeffs.pop(0)
            if len(coeffs) < 2:
                return []
            roots = mpmath.polyroots(coeffs, maxsteps=400, extraprec=2 * mp.dps)
            f = lambda t: mpmath.polyval(coeffs, t)
            dcoeffs = _deriv(coeffs)
            df = lambda t: mpmath.polyval(dcoeffs, t)
            for z in roots:
                if abs(mpmath.im(z)) > tol * (1 + abs(z)):
                    continue
                t = mpmath.re(z)
                for _ in range(8):
                    d = df(t)
                    if d == 0:
                        break
                    step = f(t) / d
                    t -= step
                    if abs(step) <= mpf(10) ** (-mp.dps) * (1 + abs(t)):
                        break
                cands.append(t)
        else:
            g = lambda t: abs(px + t * ux) ** self.beta / self.beta - sgn * (pz + t * uz)
            if ux == 0:
                if sgn * uz > 0:
                    cands.append((abs(px) ** self.beta / self.beta - sgn * pz) / (sgn * uz))
            else:
                m = sgn * uz / ux
                xs = mpmath.sign(m) * abs(m) ** (1 / (self.beta - 1))
                ts = (xs - px) / ux
                if ts > 0 and g(ts) < 0:
                    cands.append(mpmath.findroot(g, (mpf(0), ts), solver="anderson"))
        eps = mpf(10) ** (-12)
        return [t for t in cands if t > 0 and -eps <= px + t * ux <= self.s1 + eps]

    def circle_roots(self, p, u):
        ax, az = p[0] - self.cx, p[1]
        ux, uz = u
        b = ax * ux + az * uz
        c = ax * ax + az * az - self.rad**2
        disc = b * b - c
        if disc <= 0:
            return []
        t = -b - mpmath.sqrt(disc)
        if t <= 0:
            return []
        if p[0] + t * ux > self.s1 + mpf(10) ** (-12):
            return []
        return [t]


def _deriv(coeffs):
    n = len(coeffs) - 1
    return [c * (n - i) for i, c in enumerate(coeffs[:-1])]


@lru_cache(maxsize=16)
def _mp_table(beta: float, s1: float, theta0: float, digits: int) -> _MpTable:
    return _MpTable(beta, s1, theta0, digits)


def mp_table(table, digits: int) -> _MpTable:
    p = table.params
    return _mp_table(p.beta, p.s1, p.theta0, digits)


def oracle_step(table, comp: int, q, phi, digits: int = 60) -> OracleResult:
    """Advance the internal state (component, coordinate, angle) by one collision."""
    if digits < 30:
        raise InvalidParams("oracle needs at least 30 digits")
    mt = mp_table(table, digits)
    with mp.workdps(digits):
        q, phi = mpf(q), mpf(phi)
        (px, pz), (tx, tz) = mt.frame(comp, q)
        nx, nz = tz, -tx
        c, s = mpmath.cos(phi), mpmath.sin(phi)
        u = (c * tx + s * nx, c * tz + s * nz)
        hits = []
        for other in (1, 2, 3):
            if other == comp:
                continue
            if other == 3:
                ts = mt.circle_roots((px, pz), u)
            else:
                ts = mt.wall_roots((px, pz), u, 1 if other == 1 else -1)
            hits += [(t, other) for t in ts]
        if not hits:
            raise NoIntersection(f"no boundary hit from component {comp}")
        tau, nc = min(hits)
        if px * u[0] + pz * u[1] < 0 and abs(px * u[1] - pz * u[0]) < 1e-12:
            raise SingularHit("flight line through the vertex")
        xh, zh = px + tau * u[0], pz + tau * u[1]
        if nc == 3:
            th = mpmath.atan2(zh, mt.cx - xh)
            nq = (mt.theta0 - th) * mt.rad
            edge = min(abs(nq), abs(mt.len3 - nq))
        else:
            nq = xh
            edge = min(abs(nq), abs(mt.s1 - nq))
        if edge < 1e-12:
            raise SingularHit(f"hit within {float(edge):.3g} of a corner")
        _, (tx2, tz2) = mt.frame(nc, nq)
        nx2, nz2 = tz2, -tx2
        un = u[0] * nx2 + u[1] * nz2
        wx, wz = u[0] - 2 * un * nx2, u[1] - 2 * un * nz2
        sphi = wx * nx2 + wz * nz2
        if sphi < 1e-12:
            raise SingularHit("grazing reflection")
        nphi = mpmath.atan2(sphi, wx * tx2 + wz * tz2)
        return OracleResult(nc, +nq, mt.r_of(nc, nq), +nphi, +tau, digits)


def oracle_next_collision(table, state, digits: int = 60) -> OracleResult:
    """Oracle step from a CollisionState (or any object with component, q, phi)."""
    return oracle_step(table, state.component, state.q, state.phi, digits)


def oracle_orbit(table, comp: int, q, phi, steps: int, digits: int = 60) -> list[OracleResult]:
    """Iterate the oracle keeping the full-precision state between steps."""
    out = []
    for _ in range(steps):
        res = oracle_step(table, comp, q, phi, digits)
        out.append(res)
        comp, q, phi = res.component, res.q, res.phi
    return out


def oracle_wall_arclength(table, s, digits: int = 60):
    mt = mp_table(table, digits)
    with mp.workdps(digits):
        return +mt.wall_arclength(mpf(s))


def oracle_wall_abscissa(table, r, digits: int = 60):
    """Invert the wall arclength at high precision (Newton, start s = r)."""
    mt = mp_table(table, digits)
    with mp.workdps(digits):
        r = mpf(r)
        s = r
        for _ in range(100):
            step = (mt.wall_arclength(s) - r) / mpmath.sqrt(1 + s**mt.p)
            s -= step
            if abs(step) <= mpf(10) ** (-digits) * (1 + abs(s)):
                break
        return +s


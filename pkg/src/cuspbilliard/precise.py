"""Extended-precision step used when the double solver asks for escalation.

This is a second, fast arbitrary-precision solver built on MPFR (gmpy2). The
table constants are taken from the oracle's high-precision table, but the
wall intersection is solved differently: on the part of the ray with x >= 0
the function G(t) = (p_x + t u_x)^beta / beta - sgn (p_z + t u_z) is convex, so
its first zero lies between 0 and the minimiser of G and is found by
safeguarded Newton, seeded in double precision.
"""

from __future__ import annotations

import math
from functools import lru_cache

import gmpy2
from gmpy2 import mpfr
from mpmath import mp

from .errors import InvalidParams, NoIntersection, SingularHit
from .oracle import OracleResult, mp_table

_CORNER = 1e-12
_GRAZE = 1e-12


def _bits(digits: int) -> int:
    return int(math.ceil(digits * math.log2(10))) + 8


class _Table:
    """MPFR copies of the oracle table constants."""

    def __init__(self, mt, digits: int):
        self.digits = digits
        self.bits = _bits(digits)
        with gmpy2.context(gmpy2.get_context(), precision=self.bits):
            with mp.workdps(digits + 10):
                cv = lambda v: mpfr(mp.nstr(v, digits + 10))
                self.ibeta = mt.ibeta
                self.beta = mpfr(mt.ibeta) if mt.ibeta is not None else cv(mt.beta)
                self.s1 = cv(mt.s1)
                self.theta0 = cv(mt.theta0)
                self.rad = cv(mt.rad)
                self.cx = cv(mt.cx)
                self.p = cv(mt.p)
                self.s0 = cv(mt.s0)
                self.width = cv(mt.width)
                self.cum = [cv(c) for c in mt.cum]
                self.gl = [(cv(x), cv(w)) for x, w in mt.gl]
                self.len1 = cv(mt.len1)
                self.len3 = cv(mt.len3)
                self.perim = cv(mt.perim)
            self.eps = mpfr(10) ** (-digits - 5)

    def pw(self, x, e):
        """x**e for x >= 0 with an integer fast path."""
        if isinstance(e, int):
            return x**e
        return x**e if x > 0 else mpfr(0)

    def series(self, s):
        y = self.pw(s, self.p)
        total, coef, yk, k = mpfr(0), mpfr(1), mpfr(1), 0
        while True:
            term = coef * yk / (k * self.p + 1)
            total += term
            if abs(term) <= self.eps * abs(total):
                return s * total
            coef *= (mpfr(0.5) - k) / (k + 1)
            yk *= y
            k += 1

    def panel(self, a, b):
        half, mid = (b - a) / 2, (b + a) / 2
        return half * gmpy2.fsum([w * gmpy2.sqrt(1 + self.pw(mid + half * x, self.p)) for x, w in self.gl])

    def wall_arclength(self, s):
        if s <= self.s0:
            return self.series(s)
        k = min(int((s - self.s0) / self.width), len(self.cum) - 2)
        a = self.s0 + k * self.width
        return self.cum[k] + self.panel(a, s)

    def r_of(self, comp, q):
        if comp == 1:
            return self.wall_arclength(q)
        if comp == 3:
            return self.len1 + q
        return self.perim - self.wall_arclength(q)

    def frame(self, comp, q):
        if comp == 3:
            th = self.theta0 - q / self.rad
            c, s = gmpy2.cos(th), gmpy2.sin(th)
            return (self.cx - self.rad * c, self.rad * s), (-s, -c)
        b = self.ibeta if self.ibeta is not None else self.beta
        slope = self.pw(q, b - 1)
        n = gmpy2.sqrt(1 + slope * slope)
        h = self.pw(q, b) / self.beta
        if comp == 1:
            return (q, h), (1 / n, slope / n)
        return (q, -h), (-1 / n, slope / n)

    def circle_root(self, p, u):
        ax, az = p[0] - self.cx, p[1]
        ux, uz = u
        b = ax * ux + az * uz
        c = ax * ax + az * az - self.rad * self.rad
        disc = b * b - c
        if disc <= 0:
            return None
        t = -b - gmpy2.sqrt(disc)
        if t <= 0 or p[0] + t * ux > self.s1 + _CORNER:
            return None
        return t

    def wall_root(self, p, u, sgn):
        """First t > 0 where the ray meets z = sgn x^beta / beta with 0 <= x <= s1."""
        px, pz = p
        ux, uz = u
        beta = self.ibeta if self.ibeta is not None else self.beta
        zero = mpfr(0)
        if ux > 0:
            t_end = (self.s1 - px) / ux
        elif ux < 0:
            t_end = -px / ux
        else:
            t_end = mpfr(10) ** 6
        if t_end <= 0:
            return None

        def G(t):
            return self.pw(px + t * ux, beta) / self.beta - sgn * (pz + t * uz)

        t_min = t_end
        if ux != 0:
            ratio = sgn * uz / ux
            if ratio <= 0:
                t_min = -px / ux if ux < 0 else zero
            else:
                t_min = (ratio ** (1 / (self.beta - 1)) - px) / ux
            t_min = min(max(t_min, zero), t_end)
        if G(t_min) >= 0:
            return None
        lo, hi = zero, t_min
        if G(lo) <= 0:
            return None
        seed = _float_root(float(px), float(pz), float(ux), float(uz), sgn, float(beta), float(hi))
        t = mpfr(seed)
        if not lo < t < hi:
            t = (lo + hi) / 2
        # G is resolved only to a few ulps of its largest term
        tol = mpfr(10) ** (3 - self.digits)
        for _ in range(200):
            x = px + t * ux
            xb = self.pw(x, beta) / self.beta
            gv = xb - sgn * (pz + t * uz)
            if gv > 0:
                lo = t
            elif gv < 0:
                hi = t
            else:
                return t
            dg = self.pw(x, beta - 1) * ux - sgn * uz
            tn = t - gv / dg if dg != 0 else (lo + hi) / 2
            if not lo <= tn <= hi:
                tn = (lo + hi) / 2
            if abs(gv) <= tol * (abs(xb) + abs(pz) + abs(t * uz)) or hi - lo <= tol * hi:
                return tn
            t = tn
        raise NoIntersection("extended-precision wall solve did not converge")


def _float_root(px, pz, ux, uz, sgn, beta, hi):
    """Double-precision bracketed Newton for the convex G on [0, hi]."""
    lo = t = 0.0
    for _ in range(200):
        x = max(px + t * ux, 0.0)
        gv = x**beta / beta - sgn * (pz + t * uz)
        dg = x ** (beta - 1) * ux - sgn * uz
        if gv > 0:
            lo = t
        else:
            hi = t
        tn = t - gv / dg if dg != 0 else 0.5 * (lo + hi)
        if not lo < tn < hi:
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 1e-16 * abs(tn) or hi - lo <= 1e-16 * hi:
            return tn
        t = tn
    return t


@lru_cache(maxsize=16)
def _table(beta: float, s1: float, theta0: float, digits: int) -> _Table:
    from .geometry import TableParams, build_table

    mt = mp_table(build_table(TableParams(beta, s1, theta0)), digits)
    return _Table(mt, digits)


def precise_table(table, digits: int) -> _Table:
    p = table.params
    return _table(p.beta, p.s1, p.theta0, digits)


def precise_step(table, comp: int, q, phi, digits: int = 60) -> OracleResult:
    """One collision in extended precision; same contract as the oracle step,
    returning MPFR numbers."""
    if digits < 30:
        raise InvalidParams("extended precision needs at least 30 digits")
    T = precise_table(table, digits)
    with gmpy2.context(gmpy2.get_context(), precision=T.bits):
        q, phi = mpfr(q), mpfr(phi)
        (px, pz), (tx, tz) = T.frame(comp, q)
        nx, nz = tz, -tx
        c, s = gmpy2.cos(phi), gmpy2.sin(phi)
        u = (c * tx + s * nx, c * tz + s * nz)
        hits = []
        for other in (1, 2, 3):
            if other == comp:
                continue
            t = T.circle_root((px, pz), u) if other == 3 else T.wall_root((px, pz), u, 1 if other == 1 else -1)
            if t is not None:
                hits.append((t, other))
        if not hits:
            raise NoIntersection(f"no boundary hit from component {comp}")
        tau, nc = min(hits)
        if px * u[0] + pz * u[1] < 0 and abs(px * u[1] - pz * u[0]) < _CORNER:
            raise SingularHit("flight line through the vertex")
        xh, zh = px + tau * u[0], pz + tau * u[1]
        if nc == 3:
            th = gmpy2.atan2(zh, T.cx - xh)
            nq = (T.theta0 - th) * T.rad
            edge = min(abs(nq), abs(T.len3 - nq))
        else:
            nq = xh
            edge = min(abs(nq), abs(T.s1 - nq))
        if edge < _CORNER:
            raise SingularHit(f"hit within {float(edge):.3g} of a corner")
        _, (tx2, tz2) = T.frame(nc, nq)
        nx2, nz2 = tz2, -tx2
        un = u[0] * nx2 + u[1] * nz2
        wx, wz = u[0] - 2 * un * nx2, u[1] - 2 * un * nz2
        sphi = wx * nx2 + wz * nz2
        if sphi < _GRAZE:
            raise SingularHit("grazing reflection")
        nphi = gmpy2.atan2(sphi, wx * tx2 + wz * tz2)
        return OracleResult(nc, nq, T.r_of(nc, nq), nphi, tau, digits)

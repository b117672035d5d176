"""Compiled kernels: boundary atlas, the collision map, and batch orbit engines.

Everything here works on a packed float64 geometry vector ``g`` (see
``pack_geometry``) and the internal state triple ``(comp, q, phi)``:

* ``comp`` 1 / 2 are the upper / lower cusp walls, ``q`` is the abscissa s;
* ``comp`` 3 is the closing arc, ``q`` is arclength from the upper junction.

Arclength ``r`` is only materialised when an observable or a caller needs it.
"""

import math

import numpy as np
from numba import njit

# geometry header layout
BETA, S1, THETA0, CX, RAD, LEN1, LEN3, PERIM, HWALL, SSER, NPAN, PANW = range(12)
HDR = 16

# step status codes
OK, ESCALATE, SINGULAR, NOHIT = 0, 1, 2, 3

# orbit status codes used by the batch engines
FRESH, RUNNING, DONE, FAIL_START, FAIL_SINGULAR, FAIL_NOHIT, FAIL_RUNAWAY = range(7)
# trace_engine only: stopped so the caller can rerun the next step in extended precision
PAUSED = 7

# precision-policy vector layout
P_ENABLED, P_SINPHI, P_MINTAU, P_MINS, P_GRAZE = range(5)

SINGULAR_DIST = 1e-12
NEAR_CORNER = 1e-10
NEAR_GRAZING = 1e-8

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def pack_geometry(beta, s1, theta0, cx, rad, len1, len3, perim, cum, s_ser, width):
    g = np.zeros(HDR + len(cum))
    g[BETA], g[S1], g[THETA0], g[CX], g[RAD] = beta, s1, theta0, cx, rad
    g[LEN1], g[LEN3], g[PERIM] = len1, len3, perim
    g[HWALL] = s1**beta / beta
    g[SSER], g[NPAN], g[PANW] = s_ser, len(cum) - 1, width
    g[HDR:] = cum
    return g


def default_policy(enabled=True, sin_phi=1e-6, min_tau=1e-9, min_s=1e-4):
    return np.array([1.0 if enabled else 0.0, sin_phi, min_tau, min_s, 1e-12])


@njit(cache=True, inline="always")
def _pw(x, e):
    n = int(e)
    if n == e and 0 <= n <= 12:
        out = 1.0
        for _ in range(n):
            out *= x
        return out
    return x**e


@njit(cache=True)
def arc_series(s, p):
    """Arclength of a wall from the vertex, binomial series in y = s**p."""
    y = _pw(s, p)
    coef = 1.0
    yk = 1.0
    total = 0.0
    for k in range(14):
        term = coef * yk / (k * p + 1.0)
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
        coef *= (0.5 - k) / (k + 1.0)
        yk *= y
    return s * total


@njit(cache=True)
def wall_speed(g, s):
    return math.sqrt(1.0 + _pw(s, 2.0 * g[BETA] - 2.0))


@njit(cache=True)
def wall_arclength(g, s):
    p = 2.0 * g[BETA] - 2.0
    sser = g[SSER]
    if s <= sser:
        return arc_series(s, p)
    w = g[PANW]
    npan = int(g[NPAN])
    k = int((s - sser) / w)
    if k >= npan:
        k = npan - 1
    a = sser + k * w
    half = 0.5 * (s - a)
    mid = 0.5 * (s + a)
    acc = 0.0
    for j in range(_GL_X.size):
        x = mid + half * _GL_X[j]
        acc += _GL_W[j] * math.sqrt(1.0 + _pw(x, p))
    return g[HDR + k] + half * acc


@njit(cache=True)
def wall_abscissa(g, r):
    """Invert wall_arclength by safeguarded Newton; bracket is [0, r]."""
    if r <= 0.0:
        return 0.0
    lo, hi = 0.0, r
    s = r
    for _ in range(100):
        f = wall_arclength(g, s) - r
        if f > 0.0:
            hi = s
        else:
            lo = s
        sn = s - f / wall_speed(g, s)
        if not (lo <= sn <= hi):
            sn = 0.5 * (lo + hi)
        if abs(sn - s) <= 1e-16 * s:
            return sn
        s = sn
    return s


@njit(cache=True)
def q_to_r(g, comp, q):
    if comp == 1:
        return wall_arclength(g, q)
    if comp == 3:
        return g[LEN1] + q
    return g[PERIM] - wall_arclength(g, q)


@njit(cache=True)
def r_to_q(g, r):
    len1 = g[LEN1]
    if r < len1:
        return 1, wall_abscissa(g, r)
    if r <= len1 + g[LEN3]:
        return 3, r - len1
    return 2, wall_abscissa(g, g[PERIM] - r)


@njit(cache=True)
def frame(g, comp, q):
    """Position, unit tangent (direction of increasing r), curvature."""
    beta = g[BETA]
    if comp == 3:
        th = g[THETA0] - q / g[RAD]
        x = g[CX] - g[RAD] * math.cos(th)
        z = g[RAD] * math.sin(th)
        return x, z, -math.sin(th), -math.cos(th), 1.0 / g[RAD]
    slope = _pw(q, beta - 1.0)
    nrm = math.sqrt(1.0 + slope * slope)
    kappa = (beta - 1.0) * _pw(q, beta - 2.0) / (nrm * nrm * nrm)
    h = q * slope / beta
    if comp == 1:
        return q, h, 1.0 / nrm, slope / nrm, kappa
    return q, -h, -1.0 / nrm, slope / nrm, kappa


@njit(cache=True)
def _wall_hit(g, px, pz, ux, uz, sgn, tmax):
    """First t in (0, tmax) where h(x(t)) - sgn*z(t) = 0, h(x) = |x|^beta / beta.

    The function is convex in t, so the root (if any) lies left of its
    minimiser and Newton started at t = 0 approaches it monotonically.
    """
    beta = g[BETA]
    if ux == 0.0:
        if sgn * uz <= 0.0:
            return np.inf
        return (_pw(abs(px), beta) / beta - sgn * pz) / (sgn * uz)
    m = sgn * uz / ux
    xs = _pw(abs(m), 1.0 / (beta - 1.0))
    if m < 0.0:
        xs = -xs
    hi = (xs - px) / ux
    if hi <= 0.0:
        return np.inf
    if hi > tmax:
        hi = tmax
        xe = px + hi * ux
        if _pw(abs(xe), beta) / beta - sgn * (pz + hi * uz) >= 0.0:
            return np.inf
    elif _pw(abs(xs), beta) / beta - sgn * (pz + hi * uz) >= 0.0:
        return np.inf
    lo = 0.0
    t = 0.0
    for _ in range(100):
        x = px + t * ux
        ax = abs(x)
        xb1 = _pw(ax, beta - 1.0)
        gv = ax * xb1 / beta - sgn * (pz + t * uz)
        if gv == 0.0:
            return t
        dg = (xb1 if x >= 0.0 else -xb1) * ux - sgn * uz
        if gv > 0.0:
            lo = t
        else:
            hi = t
        if dg < 0.0:
            dt = -gv / dg
            tn = t + dt
            if lo <= tn <= hi:
                # Newton error after this step is about G''/(2|G'|) * dt^2
                d2 = (beta - 1.0) * _pw(ax, beta - 2.0) * ux * ux
                if d2 * dt * dt <= -dg * 1e-16 * tn:
                    return tn
            else:
                tn = 0.5 * (lo + hi)
        else:
            tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 1e-15 * tn or hi - lo <= 4e-16 * hi:
            return tn
        t = tn
    return t


@njit(cache=True)
def _circle_hit(g, px, pz, ux, uz):
    ax = px - g[CX]
    b = ax * ux + pz * uz
    if b >= 0.0:
        return np.inf
    cc = ax * ax + pz * pz - g[RAD] * g[RAD]
    disc = b * b - cc
    if disc <= 0.0:
        return np.inf
    return cc / (-b + math.sqrt(disc))


@njit(cache=True)
def step(g, pol, comp, q, phi):
    """One application of the billiard map.

    Returns (status, comp, q, phi, tau). ``status`` is OK, ESCALATE (the
    double-precision result is returned but the policy asks for an oracle
    rerun), SINGULAR or NOHIT.
    """
    px, pz, tx, tz, _ = frame(g, comp, q)
    nx, nz = tz, -tx
    c, s = math.cos(phi), math.sin(phi)
    ux = c * tx + s * nx
    uz = c * tz + s * nz

    best = np.inf
    bcomp = 0
    if comp != 3:
        t = _circle_hit(g, px, pz, ux, uz)
        if t > 0.0 and px + t * ux <= g[S1] + SINGULAR_DIST:
            best, bcomp = t, 3
    for wall in (1, 2):
        if wall == comp:
            continue
        t = _wall_hit(g, px, pz, ux, uz, 1.0 if wall == 1 else -1.0, best)
        if t > 0.0 and t < best:
            xh = px + t * ux
            if -SINGULAR_DIST <= xh <= g[S1] + SINGULAR_DIST:
                best, bcomp = t, wall
    if bcomp == 0:
        return NOHIT, comp, q, phi, 0.0
    # a flight line through the vertex P reaches it only along the axis; any
    # reflection computed for such a ray is set by rounding, so it is singular
    if px * ux + pz * uz < 0.0 and abs(px * uz - pz * ux) < SINGULAR_DIST:
        return SINGULAR, bcomp, q, phi, best

    xh = px + best * ux
    zh = pz + best * uz
    corner = np.inf
    if bcomp == 3:
        th = math.atan2(zh, g[CX] - xh)
        qn = (g[THETA0] - th) * g[RAD]
        if qn < 0.0:
            qn = 0.0
        elif qn > g[LEN3]:
            qn = g[LEN3]
        corner = min(qn, g[LEN3] - qn)
    else:
        qn = xh
        if qn < 0.0:
            qn = 0.0
        elif qn > g[S1]:
            qn = g[S1]
        corner = min(qn, g[S1] - qn)
    if corner < SINGULAR_DIST:
        return SINGULAR, bcomp, qn, phi, best

    _, _, tx2, tz2, _ = frame(g, bcomp, qn)
    nx2, nz2 = tz2, -tx2
    un = ux * nx2 + uz * nz2
    wx = ux - 2.0 * un * nx2
    wz = uz - 2.0 * un * nz2
    sphi = wx * nx2 + wz * nz2
    cphi = wx * tx2 + wz * tz2
    if sphi < pol[P_GRAZE]:
        return SINGULAR, bcomp, qn, phi, best
    phin = math.atan2(sphi, cphi)

    if pol[P_ENABLED] > 0.0:
        if sphi < pol[P_SINPHI] or best < pol[P_MINTAU]:
            return ESCALATE, bcomp, qn, phin, best
        if bcomp != 3 and qn < pol[P_MINS]:
            return ESCALATE, bcomp, qn, phin, best
    return OK, bcomp, qn, phin, best


@njit(cache=True)
def _sum2(s, c, x):
    """Neumaier compensated accumulation; returns new (sum, compensation)."""
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@njit(cache=True)
def _fval(g, f, fpar, fshift, needs_r, comp, q, phi):
    r = q_to_r(g, comp, q) if needs_r else 0.0
    return f(comp, r, phi, fpar) - fshift


# ---------------------------------------------------------------------------
# batch engines
#
# Every engine walks orbits i0..m-1 keeping all per-orbit progress in arrays.
# When a step asks for precision escalation the engine parks the orbit and
# returns its index; the Python driver computes the step in extended precision,
# stores it in the ``forced`` slots and calls the engine again.


@njit(cache=True, nogil=True)
def induced_engine(
    g, pol, f, fpar, fshift, needs_r, cap, n_ret, ckpt, trunc, intervals, i0,
    start, cur, istate, fstate, forced, ck_f, ck_r, trunc_out, counts, last,
):
    """Run ``n_ret`` returns of the induced map per orbit.

    start, cur : (m, 3) [comp, q, phi] start and current state
    istate     : (m, 5) int [status, returns done, steps in current return,
                 total steps, next checkpoint slot]
    fstate     : (m, 4) [ftilde partial, comp., sum f, comp.]
    forced     : (m, 6) [flag, status, comp, q, phi, tau]
    ck_f, ck_r : (m, K) induced sums / return-time sums at checkpoints
    trunc      : (2,) run-length thresholds (low < trunc[0] <= mid < trunc[1] <= high)
    trunc_out  : (m, 3) per-class sums of ftilde
    intervals  : (k, 2) return-time bounds; counts (m, k) hits a < R < b
    last       : (m, 2) [R, ftilde] of the most recent return
    """
    m = start.shape[0]
    nck = ckpt.size
    nint = intervals.shape[0]
    for i in range(i0, m):
        st = istate[i, 0]
        if st >= DONE:
            continue
        if st == FRESH:
            comp, q, phi = int(start[i, 0]), start[i, 1], start[i, 2]
            istate[i, 1] = 0
            istate[i, 2] = 0
            istate[i, 3] = 0
            istate[i, 4] = 0
            v = _fval(g, f, fpar, fshift, needs_r, comp, q, phi)
            fstate[i, 0] = v
            fstate[i, 1] = 0.0
            fstate[i, 2] = 0.0
            fstate[i, 3] = 0.0
            for j in range(3):
                trunc_out[i, j] = 0.0
            for j in range(nint):
                counts[i, j] = 0
            istate[i, 0] = RUNNING
        else:
            comp, q, phi = int(cur[i, 0]), cur[i, 1], cur[i, 2]
        ft, ftc = fstate[i, 0], fstate[i, 1]
        sf, sfc = fstate[i, 2], fstate[i, 3]
        nret, rsteps, total, slot = istate[i, 1], istate[i, 2], istate[i, 3], istate[i, 4]
        while True:
            if forced[i, 0] > 0.0:
                forced[i, 0] = 0.0
                stt = int(forced[i, 1])
                nc, nq, nphi = int(forced[i, 2]), forced[i, 3], forced[i, 4]
            else:
                stt, nc, nq, nphi, _ = step(g, pol, comp, q, phi)
                if stt == ESCALATE:
                    cur[i, 0], cur[i, 1], cur[i, 2] = comp, q, phi
                    fstate[i, 0], fstate[i, 1] = ft, ftc
                    fstate[i, 2], fstate[i, 3] = sf, sfc
                    istate[i, 1], istate[i, 2], istate[i, 3], istate[i, 4] = nret, rsteps, total, slot
                    return i
            if stt != OK:
                if total == 0:
                    istate[i, 0] = FAIL_START
                elif stt == SINGULAR:
                    istate[i, 0] = FAIL_SINGULAR
                else:
                    istate[i, 0] = FAIL_NOHIT
                break
            comp, q, phi = nc, nq, nphi
            rsteps += 1
            total += 1
            if comp == 3:
                ftv = ft + ftc
                sf, sfc = _sum2(sf, sfc, ftv)
                nret += 1
                last[i, 0] = rsteps
                last[i, 1] = ftv
                nrun = rsteps - 1
                if nrun < trunc[0]:
                    trunc_out[i, 0] += ftv
                elif nrun < trunc[1]:
                    trunc_out[i, 1] += ftv
                else:
                    trunc_out[i, 2] += ftv
                for j in range(nint):
                    if intervals[j, 0] < rsteps < intervals[j, 1]:
                        counts[i, j] += 1
                while slot < nck and ckpt[slot] == nret:
                    ck_f[i, slot] = sf + sfc
                    ck_r[i, slot] = total
                    slot += 1
                if nret >= n_ret:
                    istate[i, 0] = DONE
                    break
                rsteps = 0
                ft = _fval(g, f, fpar, fshift, needs_r, comp, q, phi)
                ftc = 0.0
            else:
                ft, ftc = _sum2(ft, ftc, _fval(g, f, fpar, fshift, needs_r, comp, q, phi))
                if rsteps > cap:
                    istate[i, 0] = FAIL_RUNAWAY
                    break
        cur[i, 0], cur[i, 1], cur[i, 2] = comp, q, phi
        fstate[i, 0], fstate[i, 1], fstate[i, 2], fstate[i, 3] = ft, ftc, sf, sfc
        istate[i, 1], istate[i, 2], istate[i, 3], istate[i, 4] = nret, rsteps, total, slot
    return -1


@njit(cache=True, nogil=True)
def full_engine(
    g, pol, f, fpar, fshift, needs_r, n_steps, ckpt, i0,
    start, cur, istate, fstate, forced, ck_f, record,
):
    """Birkhoff sums of f along n_steps iterations of the billiard map.

    S_n f = f(x) + ... + f(T^{n-1} x). ``record`` (m, n_steps) receives the
    individual terms when it has a nonzero second dimension.
    istate : (m, 3) [status, steps done, next checkpoint slot]
    fstate : (m, 2) [sum, compensation]
    """
    m = start.shape[0]
    nck = ckpt.size
    keep = record.shape[1] > 0
    for i in range(i0, m):
        st = istate[i, 0]
        if st >= DONE:
            continue
        if st == FRESH:
            comp, q, phi = int(start[i, 0]), start[i, 1], start[i, 2]
            istate[i, 1] = 0
            istate[i, 2] = 0
            fstate[i, 0] = 0.0
            fstate[i, 1] = 0.0
            istate[i, 0] = RUNNING
        else:
            comp, q, phi = int(cur[i, 0]), cur[i, 1], cur[i, 2]
        sf, sfc = fstate[i, 0], fstate[i, 1]
        k, slot = istate[i, 1], istate[i, 2]
        while True:
            # f at the current point is added before leaving it, so a resumed
            # (forced) step must not add it again
            if forced[i, 0] > 0.0:
                forced[i, 0] = 0.0
                stt = int(forced[i, 1])
                nc, nq, nphi = int(forced[i, 2]), forced[i, 3], forced[i, 4]
            else:
                v = _fval(g, f, fpar, fshift, needs_r, comp, q, phi)
                if keep:
                    record[i, k] = v
                sf, sfc = _sum2(sf, sfc, v)
                k += 1
                while slot < nck and ckpt[slot] == k:
                    ck_f[i, slot] = sf + sfc
                    slot += 1
                if k >= n_steps:
                    istate[i, 0] = DONE
                    break
                stt, nc, nq, nphi, _ = step(g, pol, comp, q, phi)
                if stt == ESCALATE:
                    cur[i, 0], cur[i, 1], cur[i, 2] = comp, q, phi
                    fstate[i, 0], fstate[i, 1] = sf, sfc
                    istate[i, 1], istate[i, 2] = k, slot
                    return i
            if stt != OK:
                istate[i, 0] = FAIL_START if k <= 1 else (FAIL_SINGULAR if stt == SINGULAR else FAIL_NOHIT)
                break
            comp, q, phi = nc, nq, nphi
        cur[i, 0], cur[i, 1], cur[i, 2] = comp, q, phi
        fstate[i, 0], fstate[i, 1] = sf, sfc
        istate[i, 1], istate[i, 2] = k, slot
    return -1


@njit(cache=True, nogil=True)
def trace_engine(g, pol, comp, q, phi, k0, n_max, stop_on_arc, out, status):
    """Record successive states into out[k] = [comp, q, phi, tau, flags].

    out[k0] must hold the state to continue from. Returns the index of the
    last filled row; status[0] receives the stop reason (DONE on success).
    flags bit 0: near grazing, bit 1: near corner.
    """
    k = k0
    while k < n_max:
        stt, nc, nq, nphi, tau = step(g, pol, comp, q, phi)
        if stt == ESCALATE:
            status[0] = PAUSED
            return k
        if stt != OK:
            status[0] = FAIL_SINGULAR if stt == SINGULAR else FAIL_NOHIT
            return k
        k += 1
        comp, q, phi = nc, nq, nphi
        out[k, 0] = comp
        out[k, 1] = q
        out[k, 2] = phi
        out[k, 3] = tau
        flags = 0
        if math.sin(phi) < NEAR_GRAZING:
            flags |= 1
        lim = g[LEN3] if comp == 3 else g[S1]
        if min(q, lim - q) < NEAR_CORNER or (comp != 3 and q < NEAR_CORNER):
            flags |= 2
        out[k, 4] = flags
        if stop_on_arc and comp == 3:
            status[0] = DONE
            return k
    status[0] = RUNNING
    return k


@njit(cache=True, nogil=True)
def states_from_uniforms(g, u, arc_only):
    """Invariant-measure draws: r uniform, phi = arccos(1 - 2U)."""
    m = u.shape[0]
    out = np.empty((m, 3))
    for i in range(m):
        if arc_only:
            r = g[LEN1] + u[i, 0] * g[LEN3]
        else:
            r = u[i, 0] * g[PERIM]
        c, q = r_to_q(g, r)
        out[i, 0] = c
        out[i, 1] = q
        out[i, 2] = math.acos(1.0 - 2.0 * u[i, 1])
    return out


@njit(cache=True, nogil=True)
def map_states(g, pol, states, reverse):
    """Apply T (or I T I when reverse) to each row; status in column 3."""
    m = states.shape[0]
    out = np.empty((m, 5))
    for i in range(m):
        comp, q, phi = int(states[i, 0]), states[i, 1], states[i, 2]
        if reverse:
            phi = math.pi - phi
        stt, nc, nq, nphi, tau = step(g, pol, comp, q, phi)
        if reverse:
            nphi = math.pi - nphi
        out[i, 0] = nc
        out[i, 1] = nq
        out[i, 2] = nphi
        out[i, 3] = stt
        out[i, 4] = tau
    return out


@njit(cache=True, nogil=True)
def states_to_r(g, states):
    m = states.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = q_to_r(g, int(states[i, 0]), states[i, 1])
    return out

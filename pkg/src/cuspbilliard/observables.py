"""Observables on the collision space and their cusp constants.

An observable wraps a compiled function ``kernel(comp, r, phi, params)``; the
batch engines call it directly, and subtract ``shift`` (the invariant mean once
centred) on every evaluation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit
from scipy import integrate

from . import _kernels as K
from .errors import ConfigError, NotApplicable, QuadratureFailure
from .geometry import CuspTable
from .stable import scale_from_tail


@dataclass(frozen=True)
class Observable:
    id: str
    gamma: float
    kernel: object
    params: np.ndarray = field(repr=False)
    needs_r: bool = True
    shift: float = 0.0
    centered: bool = False
    mu_mean: float | None = None
    bound: float = math.inf
    breakpoints: tuple[float, ...] = ()

    def __call__(self, comp: int, r: float, phi: float) -> float:
        return self.kernel(int(comp), float(r), float(phi), self.params) - self.shift

    def values(self, comp: np.ndarray, r: np.ndarray, phi: np.ndarray) -> np.ndarray:
        return _eval_many(self.kernel, self.params, self.shift, comp.astype(np.int64), r, phi)

    def scaled(self, c: float) -> "Observable":
        """c * f, sharing the kernel through a scale slot in params."""
        p = self.params.copy()
        p[0] *= c
        return replace(self, id=f"{c}*{self.id}", params=p, shift=self.shift * c,
                       mu_mean=None if self.mu_mean is None else self.mu_mean * c, bound=abs(c) * self.bound)


@dataclass(frozen=True)
class CuspConstants:
    """Cusp integrals and the limit-law constants they determine.

    ``tail_f`` / ``tail_tilde_f`` are the right-tail constants C of the limit
    laws on T and on F (2 I_f^alpha / (beta |dQ|), with an extra 1/mu(M) on F);
    ``sigma_f`` / ``sigma_tilde_f`` are the matching characteristic-function
    scales, sigma^alpha = C Gamma(2 - alpha) cos(pi alpha / 2) / (1 - alpha).
    """

    I_f: float
    I_1: float
    sigma_f: float
    sigma_tilde_f: float
    alpha: float
    skewed_positive: bool
    tail_f: float = math.nan
    tail_tilde_f: float = math.nan

    def to_dict(self) -> dict:
        keys = ("I_f", "I_1", "sigma_f", "sigma_tilde_f", "tail_f", "tail_tilde_f", "alpha", "skewed_positive")
        return {k: getattr(self, k) for k in keys}


@njit(cache=True)
def _eval_many(kernel, params, shift, comp, r, phi):
    out = np.empty(comp.size)
    for i in range(comp.size):
        out[i] = kernel(comp[i], r[i], phi[i], params) - shift
    return out


# ---------------------------------------------------------------------------
# built-in kernels; params[0] is always a multiplicative scale


@njit(cache=True)
def _k_const(comp, r, phi, p):
    return p[0]


@njit(cache=True)
def _k_f0(comp, r, phi, p):
    # p = [scale, mu(M)]
    if comp == 3:
        return p[0] * (1.0 - 1.0 / p[1])
    return p[0]


@njit(cache=True)
def _k_cos(comp, r, phi, p):
    return p[0] * math.cos(phi)


@njit(cache=True)
def _psi(x):
    # smooth step: 0 for x <= 0, 1 for x >= 1, C-infinity in between
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    a = math.exp(-1.0 / x)
    b = math.exp(-1.0 / (1.0 - x))
    return a / (a + b)


@njit(cache=True)
def _bump(r, perim, a, b):
    d = min(r, perim - r)
    return 1.0 - _psi((d - a) / (b - a))


@njit(cache=True)
def _k_smooth(comp, r, phi, p):
    # p = [scale, perimeter, a, b]
    return p[0] * math.sin(phi) * _bump(r, p[1], p[2], p[3])


@njit(cache=True)
def _k_rough(comp, r, phi, p):
    w = _bump(r, p[1], p[2], p[3])
    if w == 0.0:
        return 0.0
    # square-root cusp at r' and r'' makes this only 1/2-Hoelder there
    return p[0] * math.sin(phi) * w * (2.0 - math.sqrt(abs(math.sin(2.0 * math.pi * r / p[1]))))


@njit(cache=True)
def _k_poly(comp, r, phi, p):
    # p = [scale, n_pieces, then per piece: comp, r_lo, r_hi, deg_r, deg_phi, coeffs...]
    npieces = int(p[1])
    j = 2
    for _ in range(npieces):
        c, lo, hi = int(p[j]), p[j + 1], p[j + 2]
        dr, dp = int(p[j + 3]), int(p[j + 4])
        j += 5
        if (c == 0 or c == comp) and lo <= r <= hi:
            acc = 0.0
            rp = 1.0
            for a in range(dr + 1):
                pp = 1.0
                for b in range(dp + 1):
                    acc += p[j + a * (dp + 1) + b] * rp * pp
                    pp *= phi
                rp *= r
            return p[0] * acc
        j += (dr + 1) * (dp + 1)
    return 0.0


def constant(c: float = 1.0) -> Observable:
    return Observable("const", 1.0, _k_const, np.array([float(c)]), needs_r=False, bound=abs(c))


def cos_phi() -> Observable:
    return Observable("cos_phi", 1.0, _k_cos, np.array([1.0]), needs_r=False, bound=1.0)


def f0(table: CuspTable) -> Observable:
    """1 - 1_M / mu(M); its invariant mean vanishes identically."""
    mu = table.mu_M
    return Observable("f0", 1.0, _k_f0, np.array([1.0, mu]), needs_r=False, centered=True,
                      mu_mean=0.0, bound=1 / mu - 1)


def _bump_params(table: CuspTable) -> tuple[float, float]:
    return 0.5 * table.len_gamma1, 0.9 * table.len_gamma1


def f_smooth(table: CuspTable) -> Observable:
    a, b = _bump_params(table)
    P = table.perimeter
    return Observable("f_smooth", 1.0, _k_smooth, np.array([1.0, P, a, b]), bound=1.0,
                      breakpoints=(a, b, P - b, P - a))


def f_rough(table: CuspTable) -> Observable:
    a, b = _bump_params(table)
    P = table.perimeter
    return Observable("f_rough", 0.5, _k_rough, np.array([1.0, P, a, b]), bound=2.0,
                      breakpoints=(a, b, P - b, P - a))


def piecewise_polynomial(spec: dict, name: str = "custom") -> Observable:
    """Observable from {"pieces": [{"component", "r_range", "coeffs"}], "gamma"}.

    ``coeffs[i][j]`` multiplies r**i * phi**j; component may be 1, 2, 3 or
    "any"; pieces are tried in order and the first match wins.
    """
    try:
        pieces = spec["pieces"]
        gamma = float(spec.get("gamma", 1.0))
        if not pieces:
            raise ConfigError("at least one piece required", "/pieces")
        flat = [1.0, float(len(pieces))]
        bps = []
        for i, pc in enumerate(pieces):
            comp = pc.get("component", "any")
            comp = 0 if comp in ("any", 0, None) else int(comp)
            if comp not in (0, 1, 2, 3):
                raise ConfigError(f"component must be 1, 2, 3 or 'any', got {comp}", f"/pieces/{i}/component")
            lo, hi = (float(v) for v in pc["r_range"])
            if not lo <= hi:
                raise ConfigError("r_range must be increasing", f"/pieces/{i}/r_range")
            c = np.atleast_2d(np.asarray(pc["coeffs"], dtype=float))
            flat += [comp, lo, hi, c.shape[0] - 1, c.shape[1] - 1]
            flat += list(c.ravel())
            bps += [lo, hi]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad piecewise observable: {exc}", "/observable") from exc
    if not 0 < gamma <= 1:
        raise ConfigError("gamma must lie in (0, 1]", "/observable/gamma")
    return Observable(name, gamma, _k_poly, np.array(flat), breakpoints=tuple(sorted(set(bps))))


def builtin(name: str, table: CuspTable) -> Observable:
    makers = {"f0": f0, "f_smooth": f_smooth, "f_rough": f_rough}
    if name in makers:
        return makers[name](table)
    if name == "one":
        return constant(1.0)
    if name == "cos_phi":
        return cos_phi()
    raise ConfigError(f"unknown observable '{name}'", "/observable")


def load_observable(source, table: CuspTable) -> Observable:
    """Name of a built-in, an inline dict, or a path to a JSON spec."""
    if isinstance(source, Observable):
        return source
    if isinstance(source, dict):
        return piecewise_polynomial(source)
    text = str(source)
    path = Path(text)
    if text.endswith(".json") and path.exists():
        return piecewise_polynomial(json.loads(path.read_text()), path.stem)
    return builtin(text, table)


# ---------------------------------------------------------------------------
# invariant mean, centring, cusp constants


def _r_breaks(table: CuspTable, f: Observable) -> list[float]:
    P = table.perimeter
    pts = {0.0, table.len_gamma1, table.len_gamma1 + table.len_gamma3, P}
    pts |= {b for b in f.breakpoints if 0 < b < P}
    if f.kernel is _k_rough:
        pts.add(P / 2)
    return sorted(pts)


def invariant_mean(table: CuspTable, f: Observable, tol: float = 1e-11) -> float:
    """(1 / 2|dQ|) * integral of f sin(phi) dr dphi, by nested adaptive quadrature."""
    P = table.perimeter
    g = table.packed

    def inner(r, comp):
        val, _ = integrate.quad(lambda ph: f.kernel(comp, r, ph, f.params) * math.sin(ph), 0.0, math.pi,
                                epsabs=tol * 1e-2, epsrel=1e-13, limit=200)
        return val

    brk = _r_breaks(table, f)
    total = 0.0
    err_total = 0.0
    for a, b in zip(brk[:-1], brk[1:]):
        if b <= a:
            continue
        mid = 0.5 * (a + b)
        comp = K.r_to_q(g, mid)[0]
        val, err = integrate.quad(inner, a, b, args=(comp,), epsabs=tol * P, epsrel=1e-13, limit=400)
        total += val
        err_total += err
    if err_total > 2 * P * tol * len(brk):
        raise QuadratureFailure(f"invariant mean error estimate {err_total:.3g} above tolerance")
    return total / (2 * P)


def center(table: CuspTable, f: Observable, tol: float = 1e-11) -> Observable:
    """Return f - mu(f); mu(f) is computed from the uncentred kernel."""
    if f.centered:
        return f
    mean = invariant_mean(table, replace(f, shift=0.0), tol)
    return replace(f, shift=mean, centered=True, mu_mean=mean)


def _sin_power_integral(alpha: float, weight=None) -> float:
    e = 1.0 / alpha
    if weight is None:
        fn = lambda ph: math.sin(ph) ** e
    else:
        fn = lambda ph: weight(ph) * math.sin(ph) ** e
    val, err = integrate.quad(fn, 0.0, math.pi / 2, epsabs=1e-13, epsrel=1e-13, limit=200)
    if err > 1e-11:
        raise QuadratureFailure(f"cusp integral error estimate {err:.3g}")
    return val


def i_one(alpha: float) -> float:
    """Integral of sin(phi)**(1/alpha) over [0, pi/2]."""
    return _sin_power_integral(alpha, lambda ph: 1.0)


def cusp_integral(table: CuspTable, f: Observable) -> float:
    """I_f = (1/4) * integral over [0, pi] of (f(r', phi) + f(r'', phi)) sin(phi)**(1/alpha)."""
    P = table.perimeter

    def g(ph):
        return f(1, 0.0, ph) + f(2, P, ph)

    # fold [0, pi] onto [0, pi/2] so f0 reproduces I_1 exactly
    return _sin_power_integral(table.alpha, lambda ph: 0.25 * (g(ph) + g(math.pi - ph)))


def cusp_constants(table: CuspTable, f: Observable, require_positive: bool = True) -> CuspConstants:
    a = table.alpha
    I1 = i_one(a)
    If = cusp_integral(table, f)
    pos = If > 0
    if not pos:
        if require_positive:
            raise NotApplicable(f"I_f = {If:.6g} <= 0; only the positively skewed case is supported")
        return CuspConstants(If, I1, math.nan, math.nan, a, False)
    c_t = 2 * If**a / (table.beta * table.mu_M * table.perimeter)
    c = table.mu_M * c_t
    return CuspConstants(If, I1, scale_from_tail(a, c), scale_from_tail(a, c_t), a, True, c, c_t)


def return_time_scale(table: CuspTable) -> float:
    """Scale of the limit law of R - 1/mu(M) under the induced map (f0 on F)."""
    return cusp_constants(table, f0(table)).sigma_tilde_f


def tail_constant_returns(table: CuspTable) -> float:
    """Limit of n * mu~(R > n**(1/alpha)): 2 I_1**alpha / (beta mu(M) |dQ|)."""
    a = table.alpha
    return 2 * i_one(a) ** a / (table.beta * table.mu_M * table.perimeter)


def induced_value(table: CuspTable, f: Observable, sample) -> float:
    """Sum of f over the collisions x, Tx, ..., T^{R-1}x of a recorded return."""
    tr = sample.trajectory
    if tr is None:
        raise ValueError("sample carries no trajectory; request it with want_trace=True")
    R = sample.return_time
    vals = f.values(tr.comp[:R], tr.r[:R], tr.phi[:R])
    return math.fsum(vals)

"""Totally skewed alpha-stable laws, 1 < alpha < 2.

The characteristic function is exp(-|u sigma|^alpha (1 - i sign(u) tan(pi alpha / 2))),
i.e. skewness +1 and zero shift: a heavy right tail C x^-alpha and a thin
left tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate, special

from .errors import InvalidParams, QuadratureFailure

_TAIL_START = 50.0  # in units of sigma


@dataclass(frozen=True)
class StableParams:
    alpha: float
    sigma: float = 1.0

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise InvalidParams(f"alpha must lie in (1, 2), got {self.alpha}")
        if not self.sigma > 0:
            raise InvalidParams(f"sigma must be positive, got {self.sigma}")


def characteristic_fn(p: StableParams, u):
    u = np.asarray(u, dtype=float)
    a = np.abs(u * p.sigma) ** p.alpha
    out = np.exp(-a * (1 - 1j * np.sign(u) * math.tan(math.pi * p.alpha / 2)))
    return out if out.ndim else complex(out)


def tail_constant(p: StableParams) -> tuple[float, float]:
    """(C, C-) with P(S > x) ~ C x^-alpha; the left constant is zero."""
    a = p.alpha
    c = p.sigma**a * (1 - a) / (special.gamma(2 - a) * math.cos(math.pi * a / 2))
    return c, 0.0


def scale_from_tail(alpha: float, c: float) -> float:
    """Inverse of tail_constant: the sigma whose law has right-tail constant c."""
    if not c > 0:
        raise InvalidParams(f"tail constant must be positive, got {c}")
    return float((c * special.gamma(2 - alpha) * math.cos(math.pi * alpha / 2) / (1 - alpha)) ** (1 / alpha))


def _u_max(alpha: float) -> float:
    # |cf| < 1e-12 beyond this point (sigma = 1)
    return (12 * math.log(10)) ** (1 / alpha)


def _pieces(alpha: float, x: float) -> np.ndarray:
    umax = _u_max(alpha)
    if x == 0:
        k = 8
    else:
        k = max(8, int(math.ceil(umax * abs(x) / math.pi)))
    edges = np.linspace(0.0, umax, k + 1)
    # grade the first piece towards 0, where the integrand behaves like u^(alpha-1)
    first = edges[1] * np.geomspace(1e-12, 1.0, 12)
    return np.concatenate([[0.0], first, edges[2:]])


def _cdf_standard(alpha: float, x: float) -> float:
    """Gil-Pelaez inversion for sigma = 1 by piecewise adaptive quadrature."""
    tau = math.tan(math.pi * alpha / 2)

    def h(u):
        if u == 0.0:
            return -x
        ua = u**alpha
        return math.exp(-ua) * math.sin(ua * tau - u * x) / u

    edges = _pieces(alpha, x)
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(h, a, b, epsabs=1e-12, epsrel=1e-12, limit=100)
        total += v
        err += e
    if err > 1e-8:
        raise QuadratureFailure(f"cdf inversion error estimate {err:.3g} at x={x}")
    return min(1.0, max(0.0, 0.5 - total / math.pi))


def _pdf_standard(alpha: float, x: float) -> float:
    tau = math.tan(math.pi * alpha / 2)

    def h(u):
        ua = u**alpha
        return math.exp(-ua) * math.cos(ua * tau - u * x)

    total = 0.0
    edges = _pieces(alpha, x)
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(h, a, b, epsabs=1e-13, epsrel=1e-12, limit=100)[0]
    return max(0.0, total / math.pi)


@lru_cache(maxsize=32)
def _table(alpha: float):
    """Hermite interpolant of the standard cdf (values and slopes from inversion)."""
    lo = -3.0
    while _cdf_standard(alpha, lo) > 1e-14 and lo > -60:
        lo -= 1.0
    xs = np.concatenate([np.arange(lo, 10.0, 0.02), np.geomspace(10.0, _TAIL_START, 600)])
    xs = np.unique(xs)
    F = np.array([_cdf_standard(alpha, x) for x in xs])
    f = np.array([_pdf_standard(alpha, x) for x in xs])
    F = np.maximum.accumulate(F)
    return lo, interpolate.CubicHermiteSpline(xs, F, f)


def tail_coefficients(alpha: float, terms: int = 3) -> np.ndarray:
    """C_k with 1 - F(x) ~ sum_k C_k x^(-k alpha) as x -> inf (sigma = 1).

    Term-by-term Fourier inversion of the expanded characteristic function;
    C_1 is the classical tail constant.
    """
    A = 1 - 1j * math.tan(math.pi * alpha / 2)
    out = []
    for k in range(1, terms + 1):
        z = (-A) ** k * special.gamma(k * alpha + 1) / math.factorial(k) * np.exp(-0.5j * math.pi * (k * alpha + 1))
        out.append(z.real / (math.pi * k * alpha))
    return np.array(out)


def _tail_sf(alpha: float, z: np.ndarray) -> np.ndarray:
    c = tail_coefficients(alpha)
    return sum(ck * z ** (-(k + 1) * alpha) for k, ck in enumerate(c))


def _tail_pdf(alpha: float, z: np.ndarray) -> np.ndarray:
    c = tail_coefficients(alpha)
    return sum(ck * (k + 1) * alpha * z ** (-(k + 1) * alpha - 1) for k, ck in enumerate(c))


def cdf(p: StableParams, x):
    """Distribution function; arrays go through a cached interpolant."""
    z = np.asarray(x, dtype=float) / p.sigma
    lo, spline = _table(p.alpha)
    out = np.empty_like(z)
    left = z < lo
    tail = z > _TAIL_START
    mid = ~(left | tail)
    out[left] = 0.0
    out[mid] = spline(z[mid])
    out[tail] = 1.0 - _tail_sf(p.alpha, z[tail])
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def cdf_exact(p: StableParams, x: float) -> float:
    """Direct inversion at one point, no interpolation and no tail series."""
    return _cdf_standard(p.alpha, float(x) / p.sigma)


def pdf(p: StableParams, x):
    z = np.asarray(x, dtype=float) / p.sigma
    lo, spline = _table(p.alpha)
    out = np.empty_like(z)
    left = z < lo
    tail = z > _TAIL_START
    mid = ~(left | tail)
    out[left] = 0.0
    out[mid] = spline.derivative()(z[mid])
    out[tail] = _tail_pdf(p.alpha, z[tail])
    out = np.maximum(out, 0.0) / p.sigma
    return out if out.ndim else float(out)


def sample(p: StableParams, rng: np.random.Generator, size=None):
    """Chambers-Mallows-Stuck draws with skewness +1."""
    a = p.alpha
    t = math.tan(math.pi * a / 2)
    B = math.atan(t) / a
    S = (1 + t * t) ** (1 / (2 * a))
    V = rng.uniform(-math.pi / 2, math.pi / 2, size)
    W = rng.exponential(1.0, size)
    X = S * np.sin(a * (V + B)) / np.cos(V) ** (1 / a) * (np.cos(V - a * (V + B)) / W) ** ((1 - a) / a)
    return p.sigma * X


def ks_distance(samples, p: StableParams) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0 or not np.all(np.isfinite(x)):
        raise InvalidParams("ks_distance needs finite, non-empty samples")
    F = cdf(p, x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))

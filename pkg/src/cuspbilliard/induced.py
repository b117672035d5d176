"""First returns to the arc, cusp excursions and their corner-series structure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels as K
from . import streams
from .batch import DEFAULT_CAP, InducedSpec, induced_batch
from .dynamics import (
    DEFAULT_POLICY, CollisionState, PrecisionPolicy, Trace, from_internal, run_trace, state_from_uniforms,
)
from .errors import DegenerateSeries, InsufficientData, InvalidParams, RunawayOrbit, SingularHit
from .geometry import CuspTable


@dataclass
class ReturnSample:
    start: CollisionState
    runlength: int
    return_time: int
    end: CollisionState
    trajectory: Trace | None = None


@dataclass
class CornerSeriesTrace:
    """Per-bounce quantities for n = 1..N (index 0 is the first wall hit)."""

    beta: float
    s: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    H: np.ndarray
    v: np.ndarray

    @property
    def N(self) -> int:
        return self.s.size


@dataclass
class SeriesSummary:
    N: int
    N1: int | None
    N_bar: int
    N3: int | None
    C_N: float
    H_drift: float
    H_drift_ref: float
    H_drift_interior: float
    eta_exponent: float | None
    v_residual: float
    snphin_range: tuple[float, float] | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sample_mu_tilde(table: CuspTable, rng: np.random.Generator) -> CollisionState:
    """One draw from the invariant measure conditioned on the arc."""
    u1, u2 = rng.random(2)
    return state_from_uniforms(table, u1, u2, arc_only=True)


def first_return(table: CuspTable, x: CollisionState, want_trace: bool = False,
                 policy: PrecisionPolicy = DEFAULT_POLICY, cap: int = DEFAULT_CAP):
    """Iterate until the orbit lands back on the arc.

    Returns a ReturnSample, or (ReturnSample, CornerSeriesTrace) when
    ``want_trace`` is set.
    """
    if x.component != 3:
        raise InvalidParams("first_return needs a start on the arc")
    tr = run_trace(table, x, steps=cap + 1, policy=policy, stop_on_arc=True)
    if tr.stop == "singular":
        raise SingularHit(f"singular collision after {len(tr) - 1} steps")
    if tr.stop == "cap":
        raise RunawayOrbit(f"no return within {cap} collisions")
    if tr.stop != "complete" or tr.comp[-1] != 3:
        raise SingularHit(f"orbit stopped: {tr.stop}")
    R = len(tr) - 1
    end = from_internal(table, 3, tr.q[-1], tr.phi[-1], tr.r[-1])
    sample = ReturnSample(x, R - 1, R, end, tr if want_trace else None)
    if want_trace:
        return sample, corner_series(table, tr)
    return sample


def corner_series(table: CuspTable, tr: Trace) -> CornerSeriesTrace:
    """Extract s_n, eta_n, rho_n, H_n, v_n from the wall hits of one excursion."""
    beta = table.beta
    wall = tr.comp[1:-1] if tr.comp[-1] == 3 else tr.comp[1:]
    n = wall.size
    s = tr.q[1 : 1 + n].copy()
    phi = tr.phi[1 : 1 + n]
    eta = np.minimum(phi, np.pi - phi)
    rho = np.arctan(s ** (beta - 1))
    H = s**beta * np.sin(eta)
    return CornerSeriesTrace(beta, s, eta, rho, H, v_integral(eta, beta))


def v_integral(eta: np.ndarray, beta: float) -> np.ndarray:
    """Integral of sin(u)**(1 - 1/beta) over [0, eta], eta in [0, pi/2]."""
    a = 1.0 - 1.0 / beta
    p = 0.5 * (a + 1.0)
    return 0.5 * special.beta(p, 0.5) * special.betainc(p, 0.5, np.sin(eta) ** 2)


def corner_series_stats(trace: CornerSeriesTrace, eta_bar: float = 0.1) -> SeriesSummary:
    N = trace.N
    if N < 10:
        raise InsufficientData(f"corner series of length {N} is too short to segment")
    beta = trace.beta
    alpha = beta / (beta - 1)
    n = np.arange(1, N + 1)
    nbar = int(np.argmin(trace.rho)) + 1
    small = trace.eta < eta_bar
    before = np.nonzero(small[:nbar])[0]
    after = np.nonzero(small[nbar - 1 :])[0]
    if before.size == 0 and after.size == 0:
        raise DegenerateSeries(f"eta_n >= {eta_bar} for all n; no turning period")
    N1 = int(before[-1]) + 1 if before.size else None
    N3 = int(after[0]) + nbar if after.size else None
    C_N = float(trace.H[nbar - 1])
    H1 = float(trace.H[0])
    drift = float(np.max(np.abs(trace.H - H1)) / H1)
    drift_ref = float(np.max(np.abs(trace.H - C_N)) / C_N)
    # without the first and last bounce, where the flight enters or leaves the cusp
    inner = trace.H[1:-1]
    drift_in = float(np.max(np.abs(inner - inner[0])) / inner[0])

    expo = None
    snphin = None
    if N1 is not None and N1 >= 3:
        k = n[:N1]
        expo = float(np.polyfit(np.log(k / N), np.log(trace.eta[:N1]), 1)[0])
        ratio = trace.s[:N1] ** (beta - 1) * k / trace.eta[:N1]
        snphin = (float(ratio.min()), float(ratio.max()))

    # v_n against its linear law 2 n C_N^(1/alpha) up to the middle of the series
    pred = 2 * n[:nbar] * C_N ** (1 / alpha)
    v_res = float(np.max(np.abs(trace.v[:nbar] - pred)) / trace.v[nbar - 1])
    return SeriesSummary(N, N1, nbar, N3, C_N, drift, drift_ref, drift_in, expo, v_res, snphin)


def entering_period(trace: CornerSeriesTrace, eta_bar: float = 0.1) -> int | None:
    """N1: the last bounce before the turning point with eta_n < eta_bar."""
    nbar = int(np.argmin(trace.rho)) + 1
    small = np.nonzero(trace.eta[:nbar] < eta_bar)[0]
    return int(small[-1]) + 1 if small.size else None


def pooled_eta_exponent(traces: list[CornerSeriesTrace], eta_bar: float = 0.1, first: int = 2) -> tuple[float, int]:
    """Common exponent b in eta_n ~ (n/N)^b over the entering periods of many traces.

    Bounces ``first``..N1 of every trace enter one least-squares fit of
    log eta_n against log(n/N). Returns (b, number of points used).
    """
    xs, ys = [], []
    for tr in traces:
        N1 = entering_period(tr, eta_bar)
        if N1 is None or N1 < first:
            continue
        n = np.arange(first, N1 + 1)
        xs.append(np.log(n / tr.N))
        ys.append(np.log(tr.eta[first - 1 : N1]))
    if not xs:
        raise InsufficientData("no trace has an entering period to fit")
    x, y = np.concatenate(xs), np.concatenate(ys)
    if x.size < 3:
        raise InsufficientData(f"only {x.size} points in the pooled fit")
    return float(np.polyfit(x, y, 1)[0]), int(x.size)


# ---------------------------------------------------------------------------
# batches of returns


def sample_returns(table: CuspTable, m: int, seed: int, policy: PrecisionPolicy = DEFAULT_POLICY,
                   workers: int | None = None, cap: int = DEFAULT_CAP) -> dict:
    """Return times of m independent mu-tilde starts (orbit ids 0..m-1)."""
    out = induced_batch(table, m, seed, spec=InducedSpec(cap=cap), policy=policy, workers=workers)
    return out


@dataclass
class CellStats:
    lo: int
    hi: int
    count: int
    mass: float
    stderr: float


def dyadic_bands(n_min: int, n_max: int) -> list[tuple[int, int]]:
    lo = 1 << max(0, int(math.floor(math.log2(max(n_min, 1)))))
    out = []
    while lo < n_max:
        out.append((lo, 2 * lo))
        lo *= 2
    return out


def cell_histogram(runlengths: np.ndarray, bands: list[tuple[int, int]] | None = None,
                   min_samples: int = 10**5) -> list[CellStats]:
    """Empirical mu-tilde mass of N-bands [lo, hi) from iid run lengths."""
    N = np.asarray(runlengths)
    m = N.size
    if m < min_samples:
        raise InsufficientData(f"{m} samples below the floor of {min_samples}")
    if bands is None:
        bands = dyadic_bands(1, max(2, int(N.max()) + 1))
    out = []
    for lo, hi in bands:
        c = int(np.count_nonzero((N >= lo) & (N < hi)))
        p = c / m
        out.append(CellStats(lo, hi, c, p, math.sqrt(p * (1 - p) / m)))
    return out


def cell_slope(cells: list[CellStats], n_lo: float, n_hi: float) -> tuple[float, float]:
    """Slope of log(per-N mass) against log N over bands inside [n_lo, n_hi].

    Each band mass is divided by its width, so a density N**(-1-alpha)
    produces slope -(1 + alpha). Returns (slope, stderr) from weighted least
    squares with Poisson weights.
    """
    sel = [c for c in cells if c.lo >= n_lo and c.hi <= 2 * n_hi and c.count > 0]
    if len(sel) < 3:
        raise InsufficientData("fewer than three populated bands in the fit range")
    # geometric band centre, average mass per integer N
    x = np.log([math.sqrt(c.lo * (c.hi - 1)) for c in sel])
    y = np.log([c.mass / (c.hi - c.lo) for c in sel])
    w = np.array([c.count for c in sel], dtype=float)
    coef, cov = np.polyfit(x, y, 1, w=np.sqrt(w), cov="unscaled")
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def collect_excursions(table: CuspTable, n_traces: int, n_min: int, seed: int, batch: int = 1 << 20,
                       policy: PrecisionPolicy = DEFAULT_POLICY, workers: int | None = None,
                       max_batches: int = 1000) -> list[tuple[int, ReturnSample, CornerSeriesTrace]]:
    """Scan mu-tilde starts (ids in order) until ``n_traces`` excursions with
    N >= n_min are found; each is re-run with a full trace."""
    found = []
    for b in range(max_batches):
        out = induced_batch(table, batch, seed, spec=InducedSpec(), policy=policy, workers=workers,
                            offset=b * batch)
        hits = np.nonzero((out["R"] - 1 >= n_min) & (out["status"] == K.DONE))[0]
        for i in hits:
            row = out["starts"][i]
            x = from_internal(table, int(row[0]), row[1], row[2])
            sample, cs = first_return(table, x, want_trace=True, policy=policy)
            found.append((b * batch + int(i), sample, cs))
            if len(found) >= n_traces:
                return found
    return found


def orbit_uniforms(seed: int, ids: np.ndarray) -> np.ndarray:
    return streams.uniforms(seed, streams.START, ids, 2)

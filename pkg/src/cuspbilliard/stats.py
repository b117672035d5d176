"""Estimators and experiment kernels built on the batch engines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy import stats as sps

from . import _kernels as K
from . import streams
from .batch import InducedSpec, failure_counts, full_batch, induced_batch, run_full
from .dynamics import DEFAULT_POLICY, PrecisionPolicy, sample_mu_array
from .errors import InsufficientData, InvalidParams
from .geometry import CuspTable
from .observables import Observable, constant, cusp_constants, tail_constant_returns

MODES = ("full_map", "induced")


# ---------------------------------------------------------------------------
# tail index and tail constant


def _hill_core(x: np.ndarray, k: int) -> float:
    top = np.partition(x, x.size - k - 1)[x.size - k - 1 :]
    thr = top.min()
    logs = np.log(top) - math.log(thr)
    s = logs.sum()
    if s <= 0:
        raise InsufficientData("zero log-spacings above the Hill threshold")
    return k / s


def hill(samples, k_frac: float = 0.001, groups: int = 20) -> tuple[float, float]:
    """Hill estimate of the tail index from the top ``k_frac`` order statistics.

    Returns (alpha_hat, stderr); the error is a delete-a-group jackknife over
    ``groups`` contiguous blocks of the input.
    """
    x = np.asarray(samples, dtype=float)
    if not 0 < k_frac <= 0.05:
        raise InvalidParams(f"k_frac must lie in (0, 0.05], got {k_frac}")
    if x.size < 10**4:
        raise InsufficientData(f"{x.size} samples; the Hill estimator needs at least 10^4")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise InvalidParams("Hill estimator needs positive finite samples")
    k = max(1, int(k_frac * x.size))
    a = _hill_core(x, k)
    edges = np.linspace(0, x.size, groups + 1).astype(int)
    reps = []
    for g in range(groups):
        rest = np.concatenate([x[: edges[g]], x[edges[g + 1] :]])
        reps.append(_hill_core(rest, max(1, int(k_frac * rest.size))))
    reps = np.array(reps)
    se = math.sqrt((groups - 1) / groups * np.sum((reps - reps.mean()) ** 2))
    return float(a), float(se)


@dataclass
class PlateauPoint:
    n: int
    value: float
    stderr: float
    exceedances: int


def tail_plateau(returns, n_grid, alpha: float) -> list[PlateauPoint]:
    """n * P(R > n^(1/alpha)) with binomial standard errors."""
    R = np.asarray(returns)
    m = R.size
    if m == 0:
        raise InsufficientData("no return samples")
    out = []
    for n in n_grid:
        c = int(np.count_nonzero(R > n ** (1 / alpha)))
        p = c / m
        out.append(PlateauPoint(int(n), n * p, n * math.sqrt(p * (1 - p) / m), c))
    return out


# ---------------------------------------------------------------------------
# Birkhoff sums


@dataclass(frozen=True)
class BirkhoffSample:
    mode: str
    n: int
    value: float
    orbit: int


@dataclass
class BirkhoffBatch:
    """Normalized sums for every n of the grid on a shared set of orbits.

    ``values[j]`` holds S_n f / n^(1/alpha) at ``n_grid[j]`` for the orbits in
    ``ids`` (failed orbits are dropped and counted in ``failures``). In
    induced mode ``return_values`` carries the same for R - 1/mu(M).
    """

    mode: str
    alpha: float
    n_grid: tuple[int, ...]
    ids: np.ndarray
    values: np.ndarray
    return_values: np.ndarray | None
    failures: dict
    resampled: int

    def at(self, n: int) -> np.ndarray:
        return self.values[self.n_grid.index(n)]

    def records(self):
        for j, n in enumerate(self.n_grid):
            for i, v in zip(self.ids, self.values[j]):
                yield BirkhoffSample(self.mode, n, float(v), int(i))


def _grid(n) -> tuple[int, ...]:
    grid = (int(n),) if np.isscalar(n) else tuple(int(v) for v in n)
    if not grid or list(grid) != sorted(set(grid)) or grid[0] < 1:
        raise InvalidParams(f"n grid must be strictly increasing positive integers, got {grid}")
    return grid


def birkhoff_samples(table: CuspTable, f: Observable, mode: str, n, m: int, seed: int,
                     policy: PrecisionPolicy = DEFAULT_POLICY, workers: int | None = None) -> BirkhoffBatch:
    """m normalized Birkhoff sums of f along T (``full_map``, starts from mu)
    or of the induced f-tilde along F (``induced``, starts from mu-tilde)."""
    if mode not in MODES:
        raise InvalidParams(f"mode must be one of {MODES}, got {mode!r}")
    if not f.centered:
        raise InvalidParams(f"observable {f.id!r} is not centred")
    grid = _grid(n)
    a = table.alpha
    norm = np.array([v ** (1 / a) for v in grid])[:, None]
    if mode == "induced":
        out = induced_batch(table, m, seed, f, InducedSpec(n_ret=grid[-1], checkpoints=grid), policy, workers,
                            chunk_size=_induced_chunk(grid[-1]))
        ok = out["status"] == K.DONE
        ret = (out["ck_r"][ok].T - np.array(grid)[:, None] / table.mu_M) / norm
        # f0 induces exactly R - 1/mu(M); use the integer return-time sums
        vals = ret.copy() if f.id == "f0" else out["ck_f"][ok].T / norm
    else:
        out = full_batch(table, m, seed, f, grid[-1], checkpoints=grid, policy=policy, workers=workers)
        ok = out["status"] == K.DONE
        cols = [list(out["checkpoints"]).index(v) for v in grid]
        vals = out["ck_f"][ok][:, cols].T / norm
        ret = None
    ids = np.arange(m)[ok]
    return BirkhoffBatch(mode, a, grid, ids, vals, ret, failure_counts(out["status"]), int(out["resampled"]))


def _induced_chunk(n_ret: int) -> int:
    # keep roughly 2^22 returns per chunk so long runs still spread over workers
    return int(min(streams.CHUNK, max(1, (1 << 22) // max(1, n_ret))))


def truncation_levels(alpha: float, n: int, delta: float) -> tuple[float, float]:
    """Run-length thresholds delta n^(1/alpha) and n^(1/alpha) / delta."""
    if not 0 < delta < 1:
        raise InvalidParams(f"delta must lie in (0, 1), got {delta}")
    b = n ** (1 / alpha)
    return delta * b, b / delta


@dataclass
class TruncatedSums:
    delta: float
    n: int
    ids: np.ndarray
    low: np.ndarray
    mid: np.ndarray
    high: np.ndarray
    total: np.ndarray
    failures: dict

    @property
    def low_centered(self) -> np.ndarray:
        """Low band minus its ensemble mean.

        The raw low band carries a drift of order delta^(1 - alpha), the mean
        of f-tilde restricted to short returns; only the centred part vanishes
        as delta -> 0.
        """
        return self.low - self.low.mean()


def truncated_birkhoff(table: CuspTable, f: Observable, delta: float, n: int, m: int, seed: int,
                       policy: PrecisionPolicy = DEFAULT_POLICY, workers: int | None = None) -> TruncatedSums:
    """Split S_n f-tilde by the cell (run length) of each return into the
    low, middle and high bands; all parts are normalized by n^(1/alpha)."""
    if not f.centered:
        raise InvalidParams(f"observable {f.id!r} is not centred")
    a = table.alpha
    lo, hi = truncation_levels(a, n, delta)
    spec = InducedSpec(n_ret=n, trunc=(lo, hi))
    out = induced_batch(table, m, seed, f, spec, policy, workers, chunk_size=_induced_chunk(n))
    ok = out["status"] == K.DONE
    t = out["trunc"][ok] / n ** (1 / a)
    total = out["sum_f"][ok] / n ** (1 / a)
    return TruncatedSums(delta, n, np.arange(m)[ok], t[:, 0], t[:, 1], t[:, 2], total,
                         failure_counts(out["status"]))


# ---------------------------------------------------------------------------
# Poisson structure of large returns


@dataclass
class PoissonReport:
    interval: tuple[float, float]
    lam: float
    hist: list[int]
    expected: list[float]
    chi2: float
    dof: int
    quantile99: float
    mean_count: float

    @property
    def ok(self) -> bool:
        return self.chi2 < self.quantile99


@dataclass
class PoissonResult:
    n: int
    reps: int
    counts: np.ndarray
    reports: list[PoissonReport]
    cov: np.ndarray
    cov_stderr: np.ndarray
    failures: dict = field(default_factory=dict)


def poisson_intensity(table: CuspTable, a: float, b: float) -> float:
    """Mass of (a, b) under alpha C x^(-1-alpha) dx with C the return-time tail constant."""
    al = table.alpha
    c = tail_constant_returns(table)
    return c * (a**-al - (0.0 if math.isinf(b) else b**-al))


def _chi2_report(counts: np.ndarray, lam: float, interval) -> PoissonReport:
    reps = counts.size
    hist = [int(np.sum(counts == 0)), int(np.sum(counts == 1)), int(np.sum(counts == 2)), int(np.sum(counts >= 3))]
    p = sps.poisson.pmf([0, 1, 2], lam)
    probs = np.append(p, max(0.0, 1.0 - p.sum()))
    exp = probs * reps
    used = exp > 0
    chi2 = float(np.sum((np.array(hist)[used] - exp[used]) ** 2 / exp[used]))
    dof = int(used.sum()) - 1
    return PoissonReport(tuple(interval), lam, hist, exp.tolist(), chi2, dof,
                         float(sps.chi2.ppf(0.99, max(dof, 1))), float(counts.mean()))


def poisson_counts(table: CuspTable, n: int, intervals, reps: int, seed: int,
                   policy: PrecisionPolicy = DEFAULT_POLICY, workers: int | None = None) -> PoissonResult:
    """Counts of k <= n with R(F^k x) / n^(1/alpha) in each interval, over
    ``reps`` independent mu-tilde starts, against Poisson(lambda)."""
    iv = np.atleast_2d(np.asarray(intervals, dtype=float))
    if np.any(iv[:, 0] <= 0) or np.any(iv[:, 1] <= iv[:, 0]):
        raise InvalidParams("intervals must satisfy 0 < a < b")
    scale = n ** (1 / table.alpha)
    spec = InducedSpec(n_ret=n, intervals=iv * scale)
    out = induced_batch(table, reps, seed, spec=spec, policy=policy, workers=workers, chunk_size=_induced_chunk(n))
    ok = out["status"] == K.DONE
    counts = out["counts"][ok]
    reports = [_chi2_report(counts[:, j], poisson_intensity(table, *iv[j]), iv[j]) for j in range(iv.shape[0])]
    c = counts - counts.mean(axis=0)
    k = counts.shape[1]
    cov = np.zeros((k, k))
    se = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            prod = c[:, i] * c[:, j]
            cov[i, j] = prod.mean()
            se[i, j] = prod.std(ddof=1) / math.sqrt(prod.size)
    return PoissonResult(n, int(ok.sum()), counts, reports, cov, se, failure_counts(out["status"]))


# ---------------------------------------------------------------------------
# correlations


def autocovariance(x: np.ndarray, max_lag: int) -> np.ndarray:
    """Time-average covariances at lags 0..max_lag via FFT."""
    x = np.asarray(x, dtype=float)
    L = x.size
    if L <= max_lag:
        raise InsufficientData(f"series of length {L} is too short for lag {max_lag}")
    y = x - x.mean()
    size = 1 << int(math.ceil(math.log2(2 * L)))
    spec = np.fft.rfft(y, size)
    acf = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    return acf / (L - np.arange(max_lag + 1))


@dataclass
class CorrelationReport:
    mode: str
    lags: np.ndarray
    cov: np.ndarray
    slope: float
    stderr: float
    fit_range: tuple[int, int]
    orbit_len: int


def orbit_series(table: CuspTable, f: Observable, length: int, seed: int,
                 policy: PrecisionPolicy = DEFAULT_POLICY) -> tuple[np.ndarray, np.ndarray]:
    """Values of f and the arc indicator along one orbit of T started from mu."""
    u = streams.uniforms(seed, streams.START, np.array([0]), 2)
    start = sample_mu_array(table, u)
    vals = run_full(table, start, f, length, record=True, policy=policy)
    arc = run_full(table, start, _ARC, length, record=True, policy=policy)
    if vals["status"][0] != K.DONE:
        raise InsufficientData(f"orbit stopped early with status {int(vals['status'][0])}")
    return vals["record"][0], arc["record"][0] > 0.5


@njit(cache=True)
def _k_arc(comp, r, phi, p):
    return 1.0 if comp == 3 else 0.0


_ARC = Observable("arc", 1.0, _k_arc, np.array([1.0]), needs_r=False)


def induce_series(values: np.ndarray, on_arc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Induced sums f-tilde and return times R from a T-orbit record.

    Returns start at each arc visit and run until the next one; the tail
    after the last visit is discarded.
    """
    idx = np.nonzero(on_arc)[0]
    if idx.size < 2:
        raise InsufficientData("fewer than two arc visits along the orbit")
    csum = np.concatenate([[0.0], np.cumsum(values)])
    ft = csum[idx[1:]] - csum[idx[:-1]]
    return ft, np.diff(idx)


def _slope(lags: np.ndarray, cov: np.ndarray) -> float:
    sel = cov > 0
    if sel.sum() < 3:
        return math.nan
    return float(np.polyfit(np.log(lags[sel]), np.log(cov[sel]), 1)[0])


def autocovariance_slope(table: CuspTable, f: Observable, lags=(10, 1000), orbit_len: int = 10**7,
                         seed: int = 0, mode: str = "full_map", delta: float = 0.1, blocks: int = 20,
                         boots: int = 200, policy: PrecisionPolicy = DEFAULT_POLICY) -> CorrelationReport:
    """Covariance decay of f along one long orbit.

    For T the slope of log C(k) against log k over ``lags`` is fitted, with a
    block-bootstrap standard error. For F the series is f-tilde truncated to
    returns with run length below delta * n^(1/alpha) (n the number of
    returns), and the fit is of log C(k) against k.
    """
    if orbit_len < 10**4:
        raise InsufficientData(f"orbit length {orbit_len} is too short")
    lo, hi = int(lags[0]), int(lags[1])
    vals, arc = orbit_series(table, f, orbit_len, seed, policy)
    if mode == "induced":
        ft, R = induce_series(vals, arc)
        cut = delta * ft.size ** (1 / table.alpha)
        x = np.where(R - 1 < cut, ft, 0.0)
        grid = np.arange(0, hi + 1)
        fit = lambda c: float(np.polyfit(grid[lo:][c[lo:] > 0], np.log(c[lo:][c[lo:] > 0]), 1)[0]) \
            if np.sum(c[lo:] > 0) >= 3 else math.nan
    elif mode == "full_map":
        x = vals
        grid = np.unique(np.geomspace(lo, hi, 25).astype(int))
        fit = lambda c: _slope(grid, c[grid])
    else:
        raise InvalidParams(f"mode must be one of {MODES}, got {mode!r}")
    cov = autocovariance(x, hi)
    est = fit(cov)
    # block bootstrap: resample whole blocks of per-block covariance curves
    B = x.size // blocks
    curves = np.array([autocovariance(x[b * B : (b + 1) * B], hi) for b in range(blocks)])
    rng = streams.generator(seed, streams.AUX)
    reps = []
    for _ in range(boots):
        pick = rng.integers(0, blocks, blocks)
        reps.append(fit(curves[pick].mean(axis=0)))
    reps = np.array([r for r in reps if np.isfinite(r)])
    se = float(reps.std(ddof=1)) if reps.size > 1 else math.nan
    out_lags = np.arange(hi + 1) if mode == "induced" else grid
    return CorrelationReport(mode, out_lags, cov[out_lags], est, se, (lo, hi), x.size)


# ---------------------------------------------------------------------------
# the error term E = f-tilde - (I_f / I_1)(R - 1/mu(M))


@dataclass
class ErrorBand:
    lo: int
    hi: int
    count: int
    max_abs: float


@dataclass
class ErrorSlope:
    slope: float
    bands: list[ErrorBand]
    max_abs: float
    samples: int
    failures: dict


def error_terms(table: CuspTable, f: Observable, m: int, seed: int, policy: PrecisionPolicy = DEFAULT_POLICY,
                workers: int | None = None) -> tuple[np.ndarray, np.ndarray, dict]:
    """(N, E) for m mu-tilde starts; N is the run length R - 1."""
    if not f.centered:
        raise InvalidParams(f"observable {f.id!r} is not centred")
    c = cusp_constants(table, f, require_positive=False)
    out = induced_batch(table, m, seed, f, InducedSpec(), policy, workers)
    ok = out["status"] == K.DONE
    R = out["R"][ok]
    E = out["ftilde"][ok] - c.I_f / c.I_1 * (R - 1 / table.mu_M)
    return R - 1, E, failure_counts(out["status"])


def error_term_slope(N: np.ndarray, E: np.ndarray, bands, samples_per_band: int) -> ErrorSlope:
    """Slope of log(max |E| over a band) against log N.

    Each band uses exactly its first ``samples_per_band`` samples (in orbit
    order), so band maxima are taken over equal sample sizes.
    """
    rows = []
    for lo, hi in bands:
        sel = np.nonzero((N >= lo) & (N < hi))[0]
        if sel.size < samples_per_band:
            raise InsufficientData(f"band [{lo}, {hi}) has {sel.size} < {samples_per_band} samples")
        e = np.abs(E[sel[:samples_per_band]])
        rows.append(ErrorBand(int(lo), int(hi), int(sel.size), float(e.max())))
    x = np.log([math.sqrt(b.lo * (b.hi - 1)) for b in rows])
    y = np.array([b.max_abs for b in rows])
    if np.all(y == 0):
        slope = -math.inf
    elif np.any(y == 0):
        raise InsufficientData("some bands have E identically zero; slope undefined")
    else:
        slope = float(np.polyfit(x, np.log(y), 1)[0])
    return ErrorSlope(slope, rows, float(np.max(np.abs(E))), int(N.size), {})


def zero_observable() -> Observable:
    return replace(constant(0.0), centered=True, mu_mean=0.0)

"""Drivers for the compiled batch engines.

The engines stop whenever a step needs extended precision; the drivers here
run that step in extended precision, hand the result back, and resume. Orbits
whose very first step is singular are restarted from fresh uniforms drawn
with the next stream tag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import streams
from .dynamics import DEFAULT_POLICY, PrecisionPolicy, escalate_row, sample_mu_array
from .geometry import CuspTable
from .observables import Observable, constant

MAX_RESAMPLE = 8
DEFAULT_CAP = 10**7

_ZERO = constant(0.0)


@dataclass
class InducedSpec:
    """What the induced engine should accumulate besides return times."""

    n_ret: int = 1
    checkpoints: tuple[int, ...] = ()
    trunc: tuple[float, float] = (np.inf, np.inf)
    intervals: np.ndarray | None = None
    cap: int = DEFAULT_CAP


def _forced_loop(engine, table, policy, cur, forced, *, start_index=0):
    i = start_index
    while True:
        i = engine(i)
        if i < 0:
            return
        forced[i] = escalate_row(table, cur[i, 0], cur[i, 1], cur[i, 2], policy.digits)


def run_induced(table: CuspTable, starts: np.ndarray, f: Observable | None = None,
                spec: InducedSpec | None = None, policy: PrecisionPolicy = DEFAULT_POLICY) -> dict:
    """Run the induced map from each start (rows of [comp, q, phi] on the arc)."""
    spec = spec or InducedSpec()
    f = f or _ZERO
    m = starts.shape[0]
    g, pol = table.packed, policy.vector()
    ck = np.asarray(sorted(spec.checkpoints), dtype=np.int64)
    intervals = np.zeros((0, 2)) if spec.intervals is None else np.asarray(spec.intervals, dtype=float)
    trunc = np.asarray(spec.trunc, dtype=float)
    cur = np.zeros((m, 3))
    istate = np.zeros((m, 5), dtype=np.int64)
    fstate = np.zeros((m, 4))
    forced = np.zeros((m, 6))
    ck_f = np.zeros((m, ck.size))
    ck_r = np.zeros((m, ck.size))
    trunc_out = np.zeros((m, 3))
    counts = np.zeros((m, intervals.shape[0]), dtype=np.int64)
    last = np.zeros((m, 2))
    starts = np.ascontiguousarray(starts, dtype=np.float64)

    def engine(i0):
        return K.induced_engine(
            g, pol, f.kernel, f.params, f.shift, f.needs_r, spec.cap, spec.n_ret, ck, trunc, intervals,
            i0, starts, cur, istate, fstate, forced, ck_f, ck_r, trunc_out, counts, last,
        )

    _forced_loop(engine, table, policy, cur, forced)
    return {
        "status": istate[:, 0].copy(),
        "steps": istate[:, 3].copy(),
        "R": last[:, 0].astype(np.int64),
        "ftilde": last[:, 1].copy(),
        "sum_f": fstate[:, 2] + fstate[:, 3],
        "end": cur,
        "ck_f": ck_f,
        "ck_r": ck_r,
        "trunc": trunc_out,
        "counts": counts,
    }


def run_full(table: CuspTable, starts: np.ndarray, f: Observable, n_steps: int,
             checkpoints: tuple[int, ...] = (), record: bool = False,
             policy: PrecisionPolicy = DEFAULT_POLICY) -> dict:
    """Birkhoff sums of f along the billiard map from each start."""
    m = starts.shape[0]
    g, pol = table.packed, policy.vector()
    ck = np.asarray(sorted(set(checkpoints) | {n_steps}), dtype=np.int64)
    cur = np.zeros((m, 3))
    istate = np.zeros((m, 3), dtype=np.int64)
    fstate = np.zeros((m, 2))
    forced = np.zeros((m, 6))
    ck_f = np.zeros((m, ck.size))
    rec = np.zeros((m, n_steps if record else 0))
    starts = np.ascontiguousarray(starts, dtype=np.float64)

    def engine(i0):
        return K.full_engine(g, pol, f.kernel, f.params, f.shift, f.needs_r, n_steps, ck, i0,
                             starts, cur, istate, fstate, forced, ck_f, rec)

    _forced_loop(engine, table, policy, cur, forced)
    return {"status": istate[:, 0].copy(), "checkpoints": ck, "ck_f": ck_f, "end": cur, "record": rec}


def _with_resampling(run, table, ids, seed, arc_only):
    """Call ``run(starts)`` and redo singular starts with fresh uniforms."""
    u = streams.uniforms(seed, streams.START, ids, 2)
    starts = sample_mu_array(table, u, arc_only)
    out = run(starts)
    resampled = 0
    for attempt in range(1, MAX_RESAMPLE + 1):
        bad = np.nonzero(out["status"] == K.FAIL_START)[0]
        if bad.size == 0:
            break
        resampled += bad.size
        u = streams.uniforms(seed, streams.START + attempt, ids[bad], 2)
        starts[bad] = sample_mu_array(table, u, arc_only)
        sub = run(starts[bad])
        for key, val in out.items():
            if isinstance(val, np.ndarray) and val.shape[:1] == (ids.size,):
                val[bad] = sub[key]
    out["starts"] = starts
    out["resampled"] = resampled
    return out


def induced_batch(table: CuspTable, m: int, seed: int, f: Observable | None = None,
                  spec: InducedSpec | None = None, policy: PrecisionPolicy = DEFAULT_POLICY,
                  workers: int | None = None, offset: int = 0, chunk_size: int = streams.CHUNK) -> dict:
    """m orbits of the induced map started from mu-tilde, merged in id order."""

    def chunk(lo, hi):
        ids = np.arange(offset + lo, offset + hi, dtype=np.int64)
        return _with_resampling(lambda s: run_induced(table, s, f, spec, policy), table, ids, seed, True)

    return streams.concat(streams.run_chunks(chunk, m, workers, chunk_size))


def full_batch(table: CuspTable, m: int, seed: int, f: Observable, n_steps: int,
               checkpoints: tuple[int, ...] = (), record: bool = False,
               policy: PrecisionPolicy = DEFAULT_POLICY, workers: int | None = None,
               chunk_size: int = 512) -> dict:
    """m Birkhoff sums along T started from mu, merged in id order."""

    def chunk(lo, hi):
        ids = np.arange(lo, hi, dtype=np.int64)
        return _with_resampling(lambda s: run_full(table, s, f, n_steps, checkpoints, record, policy),
                                table, ids, seed, False)

    parts = streams.run_chunks(chunk, m, workers, chunk_size)
    ck = parts[0].pop("checkpoints")
    for p in parts[1:]:
        p.pop("checkpoints")
    out = streams.concat(parts)
    out["checkpoints"] = ck
    return out


def failure_counts(status: np.ndarray) -> dict:
    return {
        "singular": int(np.sum(status == K.FAIL_SINGULAR)),
        "no_intersection": int(np.sum(status == K.FAIL_NOHIT)),
        "runaway": int(np.sum(status == K.FAIL_RUNAWAY)),
        "singular_start": int(np.sum(status == K.FAIL_START)),
    }

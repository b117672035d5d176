"""Acceptance criteria C1-C13 at full scale on the default table.

Each experiment runs once per session; every criterion test prints one
PASS/FAIL line (also collected into the terminal summary). Set
CUSPBILLIARD_ACCEPT_SCALE below 1 for a quick dry run of the plumbing; the
criteria are only meaningful at scale 1.
"""

import json
import os

import pytest

from cuspbilliard import harness as H

SCALE = float(os.environ.get("CUSPBILLIARD_ACCEPT_SCALE", "1.0"))
RESULTS: list[str] = []

EXPERIMENT_OF = {
    "C1": "oracle-check", "C2": "invariance", "C3": "tails", "C4": "tails", "C5": "tails",
    "C6": "corner-series", "C7": "selftest-stable", "C8": "stable-limit", "C9": "stable-limit",
    "C10": "poisson", "C11": "error-slope", "C12": "corr",
}


@pytest.fixture(scope="session")
def out_root(tmp_path_factory):
    d = os.environ.get("CUSPBILLIARD_ACCEPT_OUT")
    if d:
        os.makedirs(d, exist_ok=True)
        from pathlib import Path

        return Path(d)
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def bundles(out_root):
    cache = {}

    def get(experiment):
        if experiment not in cache:
            cfg = {"experiment": experiment, "out_dir": str(out_root), "seed": 0}
            if SCALE != 1.0:
                cfg["scale"] = SCALE
            cache[experiment] = H.run_experiment(cfg)
        return cache[experiment]

    return get


def _line(cid, c):
    parts = "; ".join(f"{p['name']}={_short(p['value'])}{'' if p['pass'] else ' (!)'}" for p in c["parts"])
    msg = parts + (f" [{c['message']}]" if c["message"] else "")
    return f"{cid:>4} {c['status'].upper():5} {H.TITLES[cid]}: {msg}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _record(line):
    RESULTS.append(line)
    print(line)


@pytest.mark.parametrize("cid", list(EXPERIMENT_OF))
def test_criterion(cid, bundles):
    b = bundles(EXPERIMENT_OF[cid])
    c = b.criterion(cid)
    assert c is not None, f"{cid} missing from the {EXPERIMENT_OF[cid]} summary"
    _record(_line(cid, c))
    assert c["status"] in ("pass", "warn"), json.dumps(c, indent=1)


# C13: rerun experiments with one and two workers and compare the sample files byte for byte
C13_RUNS = {
    "tails": {"m": 10**6, "kac_m": 10**5, "n_grid": [100, 1000, 10**4]},
    "stable-limit": {"scale": 0.02},
    "oracle-check": {"scale": 0.05},
}


def test_c13_determinism(out_root):
    ok, detail = True, []
    for exp, extra in C13_RUNS.items():
        blobs = []
        for w in (1, 2):
            d = out_root / f"c13-{exp}-w{w}"
            b = H.run_experiment({"experiment": exp, "out_dir": str(d), "seed": 3, "workers": w, **extra})
            blobs.append(b.files["samples"].read_bytes())
        same = blobs[0] == blobs[1]
        ok &= same
        detail.append(f"{exp}={'identical' if same else 'DIFFERENT'} ({len(blobs[0])} bytes)")
    _record(f"{'C13':>4} {'PASS' if ok else 'FAIL':5} {H.TITLES['C13']}: " + "; ".join(detail))
    assert ok

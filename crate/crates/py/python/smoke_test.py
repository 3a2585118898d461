"""Smoke test for the Python extension.

Build first:

    cargo build -p mkhawkes-py --features extension-module --release

then run `python3 crates/py/python/smoke_test.py`. The script imports an
installed `mkhawkes` if there is one, otherwise the freshly built library
(override with MKHAWKES_LIB=/path/to/libmkhawkes.so).
"""

import importlib.util
import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]

REF3 = {
    "constraint_profile": "SYMMETRIC_BIVARIATE",
    "mu": [0.0757, 0.0757],
    "alpha": [[[23.34, 15.67], [15.67, 23.34]], [[6.0, 9.0], [9.0, 6.0]], [[0.10, 0.02], [0.02, 0.10]]],
    "beta": [140, 30, 0.8],
}

TWO = {
    "constraint_profile": "SYMMETRIC_BIVARIATE",
    "mu": [0.3, 0.3],
    "alpha": [[[30.0, 10.0], [10.0, 30.0]], [[0.6, 0.3], [0.3, 0.6]]],
    "beta": [100, 2],
}


def load():
    try:
        import mkhawkes

        return mkhawkes
    except ImportError:
        pass
    candidates = [os.environ.get("MKHAWKES_LIB")] + [
        str(ROOT / "target" / build / name)
        for build in ("release", "debug")
        for name in ("libmkhawkes.so", "libmkhawkes.dylib", "mkhawkes.dll")
    ]
    lib = next((c for c in candidates if c and Path(c).is_file()), None)
    if lib is None:
        sys.exit("extension not built; run: cargo build -p mkhawkes-py --features extension-module --release")
    tmp = Path(tempfile.mkdtemp())
    suffix = ".pyd" if lib.endswith(".dll") else ".so"
    target = tmp / ("mkhawkes" + suffix)
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("mkhawkes", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    mk = load()
    assert mk.SCHEMA_VERSION == 1

    report = json.loads(mk.moments(json.dumps(REF3), 1000.0))
    en = report["horizon"]["E_N"][0]
    assert abs(en - 1059.8) / 1059.8 < 2.5e-3, en

    two = json.dumps(TWO)
    t, k = mk.simulate(two, 2000.0, seed=3)
    assert (t, k) == mk.simulate(two, 2000.0, seed=3)
    assert len(t) == len(k) > 100 and set(k) <= {1, 2}
    assert all(a < b for a, b in zip(t, t[1:]))

    ll = mk.log_likelihood(two, t, k, 0, 2_000_000_000_000)
    assert math.isfinite(ll)

    fit = json.loads(mk.fit(t, k, kernels=2, profile="sym2", grid_points=9, start_ns=0, end_ns=2_000_000_000_000))
    names = [p["name"] for p in fit["parameters"]]
    assert names == ["mu", "alpha_1s", "alpha_1c", "alpha_2s", "alpha_2c", "beta_1", "beta_2"], names
    assert fit["loglik"] >= ll - 1e-6, (fit["loglik"], ll)

    fitted = mk.fitted_params(json.dumps(fit))
    diag = json.loads(mk.diagnose(fitted, t, k, 0, 2_000_000_000_000))
    # increments between consecutive events of each type
    assert diag["n_residuals"] == len(t) - len(set(k))

    shares = json.loads(mk.attribute(fitted, t, k))["pooled"]
    assert abs(shares["base"] + sum(shares["kernels"]) - 1.0) < 1e-9

    resp = json.loads(mk.responsiveness(fitted))
    assert resp["entries"][0]["kind"] == "base"
    assert abs(mk.expected_arrival_time(619.8, 1922.0) * 1e6 - 132.1) < 1.5

    with tempfile.TemporaryDirectory() as d:
        q = Path(d) / "q.csv"
        q.write_text("timestamp_ns,bid,ask\n0,1.00,1.02\n10,1.01,1.03\n20,1.00,1.02\n")
        t2, k2, rep = mk.ingest(str(q))
        assert (t2, k2) == ([10, 20], [1, 2])
        assert json.loads(rep)["events_up"] == 1

    try:
        mk.moments(json.dumps({**TWO, "alpha": [[[300.0, 10.0], [10.0, 300.0]], [[0.6, 0.3], [0.3, 0.6]]]}))
    except mk.ModelError as e:
        assert "non-stationary" in str(e)
    else:
        raise AssertionError("non-stationary model accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()

"""The eleven acceptance criteria, each at its stated tolerance and runtime budget.

Every criterion records one PASS/FAIL line, printed in the terminal summary.
Set FASTGNTK_ACCEPTANCE_FAST=1 to run criterion 7 in its reduced form
(n=128, 20 trials, 30 s budget) instead of n=500 with 100 trials.
"""

import os
import time
from dataclasses import replace

import numpy as np

from conftest import ACCEPTANCE_LINES, FIXTURES
from fastgntk import cli, closedform, regression, validation
from fastgntk.gntk import Backend, GntkConfig, PairState, build_kernel, combine_layer
from fastgntk.graphs import fixed_size_dataset, random_dataset
from fastgntk.sketch import rng_for
from oracles import mc_relu_expectations

FAST = os.environ.get("FASTGNTK_ACCEPTANCE_FAST") == "1"


def record(num, title, ok, detail, elapsed, budget=None):
    in_time = budget is None or elapsed < budget
    limit = f" (budget {budget:g} s)" if budget is not None else ""
    status = "PASS" if ok and in_time else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] {num}: {title}: {detail}; {elapsed:.2f} s{limit}")
    assert ok, detail
    assert in_time, f"took {elapsed:.1f} s, budget {budget} s"


def checks_ok(checks):
    return all(c.ok for c in checks), "; ".join(f"{c.name} {c.detail}" for c in checks)


def test_ac01_kron_vec_trick():
    t0 = time.perf_counter()
    ok, detail = checks_ok(validation.kron_suite(seed=0, trials=100))
    record(1, "Kronecker vec-trick", ok, detail, time.perf_counter() - t0, 1.0)


def _sweep_worst(backend_cfg):
    worst = 0.0
    for ds, cfg in validation.backend_sweep(seed=0, count=20):
        ref = build_kernel(ds, replace(cfg, backend=Backend.DECOUPLED)).values
        got = build_kernel(ds, backend_cfg(cfg)).values
        worst = max(worst, validation.rel_diff(got, ref))
    return worst


def test_ac02_naive_vs_decoupled():
    t0 = time.perf_counter()
    worst = _sweep_worst(lambda c: replace(c, backend=Backend.NAIVE_KRON))
    record(2, "naive-kron vs decoupled", worst <= 1e-10,
           f"max rel diff {worst:.2e} over 20 datasets", time.perf_counter() - t0, 30.0)


def test_ac03_identity_sketch():
    t0 = time.perf_counter()
    worst = _sweep_worst(lambda c: replace(c, backend=Backend.SKETCHED, sketch_kind="identity"))
    record(3, "identity sketch vs decoupled", worst <= 1e-10,
           f"max rel diff {worst:.2e} over 20 datasets", time.perf_counter() - t0, 30.0)


def test_ac04_closed_form():
    t0 = time.perf_counter()
    worst = {"exact": 0.0, "sketched": 0.0}
    for ds, cfg, sk in validation.normalized_datasets(seed=0, count=10):
        for tag, sketches, c in (("exact", None, closedform.CLOSED_FORM_CONFIG), ("sketched", sk, cfg)):
            rec = build_kernel(ds, c, sketches).values
            k1, k2 = closedform.closed_form_kernel(ds, sketches)
            worst[tag] = max(worst[tag], float(np.max(np.abs(rec - k1 - k2))))
    record(4, "closed form vs recursion", max(worst.values()) <= 1e-8,
           f"max abs diff {worst['exact']:.2e} exact, {worst['sketched']:.2e} sketched",
           time.perf_counter() - t0, 10.0)


def test_ac05_arccos_series():
    t0 = time.perf_counter()
    err = validation.series_check(seed=0, max_l=50)
    record(5, "arc-cosine series at l=50", err <= 1e-6,
           f"max abs diff {err:.2e} with |x| <= 0.9", time.perf_counter() - t0, 5.0)


def test_ac06_trace_bound():
    t0 = time.perf_counter()
    ok, detail = checks_ok(validation.trace_suite(seed=0, count=10))
    record(6, "trace bound", ok, detail, time.perf_counter() - t0)


def test_ac07_sketch_error(tmp_path):
    n, trials, budget = (128, 20, 30.0) if FAST else (500, 100, 300.0)
    t0 = time.perf_counter()
    checks = validation.sketch_error_suite(seed=0, n=n, trials=trials, out_dir=tmp_path)
    ok, detail = checks_ok(checks)
    record(7, f"sketch-error sweep n={n} trials={trials}", ok, detail,
           time.perf_counter() - t0, budget)


def _mean_stage(ds, cfg, stage, runs=3):
    return float(np.mean([build_kernel(ds, cfg).stage_ms[stage] for _ in range(runs)]))


def test_ac08_timing():
    t0 = time.perf_counter()
    cfg = GntkConfig(threads=1)
    ds64 = fixed_size_dataset(rng_for(0, 900), 3, 64, 8)
    naive = _mean_stage(ds64, replace(cfg, backend=Backend.NAIVE_KRON), "total")
    dec = _mean_stage(ds64, cfg, "total")
    ds256 = fixed_size_dataset(rng_for(0, 901), 4, 256, 8)
    dec_agg = _mean_stage(ds256, cfg, "aggregate")
    sk_agg = _mean_stage(ds256, replace(cfg, backend=Backend.SKETCHED, sketch_ratio=0.125),
                         "aggregate")
    r1 = naive / dec
    r2 = dec_agg / sk_agg
    record(8, "timing", r1 >= 5 and r2 >= 3,
           f"decoupled {r1:.1f}x faster than naive at N=64; "
           f"sketched aggregate {r2:.1f}x faster at N=256, b=32", time.perf_counter() - t0, 120.0)


def test_ac09_gaussian_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for k, lam in enumerate((-0.9, -0.5, 0.0, 0.5, 0.9)):
        relu, step = mc_relu_expectations(lam, 2**20, seed=k)
        sig = np.array([[lam]])
        out = combine_layer(PairState(sig, np.ones((1, 1)), np.ones(1), np.ones(1)), c_phi=1.0)
        worst = max(worst, abs(out.sigma[0, 0] - relu) / relu,
                    abs(out.theta[0, 0] - out.sigma[0, 0] - step) / step)
    record(9, "arc-cosine vs Monte-Carlo", worst <= 3e-3,
           f"max rel diff {worst:.2e} with 2^20 samples", time.perf_counter() - t0, 10.0)


def test_ac10_regression():
    t0 = time.perf_counter()
    rng = rng_for(0, 1000)
    ds = random_dataset(rng, 20, 10, 4, min_nodes=2)
    model = regression.random_label_model(rng, 4, T=1)
    y = regression.synthesize_labels(ds, model)
    k = build_kernel(ds, closedform.CLOSED_FORM_CONFIG).values
    mse = float(np.mean((regression.krr_fit_predict(k, y, k, 1e-6) - y) ** 2))
    d = regression.gen_diagnostics(k, y, model, ds)
    vals = (d.y_norm_kinv, d.trace_k, d.bm02_bound, d.lemma_rhs)
    ok = mse <= 1e-3 and all(np.isfinite(v) for v in vals)
    record(10, "regression sanity", ok,
           f"train MSE {mse:.2e}; |y|={d.y_norm_kinv:.3g} tr={d.trace_k:.3g} "
           f"bm02={d.bm02_bound:.3g} rhs={d.lemma_rhs:.3g}", time.perf_counter() - t0, 10.0)


def test_ac11_determinism(tmp_path):
    t0 = time.perf_counter()
    blobs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.bin"
        code = cli.main(["kernel", "--dataset", str(FIXTURES / "minimol"), "--backend", "sketched",
                         "--sketch-ratio", "0.5", "--seed", "7", "--threads", "1",
                         "--out", str(out)])
        assert code == 0
        blobs.append(out.read_bytes())
    record(11, "sketched kernel determinism", blobs[0] == blobs[1],
           f"{len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}", time.perf_counter() - t0)

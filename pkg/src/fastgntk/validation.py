"""Self-check suites run by ``fastgntk validate``.

Each suite returns a list of :class:`Check`; a suite passes when every
check does. ``fast`` shrinks trial counts and sizes (roughly 1/4 of the
datasets, sketch-error at n=128 with 20 trials) to fit a CI budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import closedform, linalg, sketch
from .gntk import Backend, GntkConfig, Readout, build_kernel, make_sketches
from .graphs import Scaling, random_dataset
from .sketch import rng_for

SUITES = ("kron", "backends", "closedform", "trace", "sketch-error")


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""


def rel_diff(a, b):
    """Largest ``|a - b| / max(1, |b|)`` entry."""
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def kron_suite(seed=0, trials=100):
    rng = rng_for(seed, 101)
    worst = 0.0
    for _ in range(trials):
        p, q, r, s = rng.integers(1, 9, size=4)
        a = rng.standard_normal((p, q))
        h = rng.standard_normal((q, s))
        b = rng.standard_normal((r, s))
        lhs = linalg.vectorize(a @ h @ b.T)
        rhs = linalg.kron(a, b) @ linalg.vectorize(h)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return [Check("kron-vec-trick", worst <= 1e-12, f"max abs diff {worst:.2e}")]


def backend_sweep(seed=0, count=20):
    """Random (dataset, config) pairs covering L, R in 1..3, both scalings and readouts."""
    rng = rng_for(seed, 102)
    out = []
    for k in range(count):
        ds = random_dataset(rng, int(rng.integers(1, 6)), 12, 3, name=f"sweep{k}")
        cfg = GntkConfig(L=int(rng.integers(1, 4)), R=int(rng.integers(1, 4)),
                         scaling=(Scaling.UNIT, Scaling.INVERSE_DEGREE_PLUS_ONE)[k % 2],
                         readout=(Readout.SUM, Readout.JUMPING_KNOWLEDGE)[(k // 2) % 2])
        out.append((ds, cfg))
    return out


def backends_suite(seed=0, count=20, tol=1e-10):
    worst_kron = worst_id = 0.0
    for ds, cfg in backend_sweep(seed, count):
        dec = build_kernel(ds, replace(cfg, backend=Backend.DECOUPLED)).values
        naive = build_kernel(ds, replace(cfg, backend=Backend.NAIVE_KRON)).values
        ident = build_kernel(ds, replace(cfg, backend=Backend.SKETCHED,
                                         sketch_kind="identity")).values
        worst_kron = max(worst_kron, rel_diff(naive, dec))
        worst_id = max(worst_id, rel_diff(ident, dec))
    return [Check("naive-vs-decoupled", worst_kron <= tol, f"max rel diff {worst_kron:.2e}"),
            Check("identity-sketch-vs-decoupled", worst_id <= tol, f"max rel diff {worst_id:.2e}")]


def normalized_datasets(seed=0, count=10, ratio=0.8, max_n=6, max_nodes=10):
    """Random datasets with per-graph sketches for which normalized scaling is defined.

    A sketch can zero out an aggregated feature column, leaving the
    normalization undefined; such draws are replaced by the next seed.
    """
    rng = rng_for(seed, 103)
    out = []
    attempt = 0
    while len(out) < count:
        ds = random_dataset(rng, int(rng.integers(1, max_n + 1)), max_nodes, 4,
                            name=f"norm{len(out)}")
        cfg = closedform.closed_form_config(True, sketch_ratio=ratio, seed=seed + attempt)
        attempt += 1
        sk = make_sketches(ds, cfg)
        try:
            for g, s in zip(ds.graphs, sk):
                closedform.embeddings(g, s)
        except ValueError:
            continue
        out.append((ds, cfg, sk))
    return out


def closedform_suite(seed=0, count=10):
    worst = 0.0
    k2_min = math.inf
    for ds, cfg, sk in normalized_datasets(seed, count):
        for sketches, c in ((None, closedform.CLOSED_FORM_CONFIG), (sk, cfg)):
            rec = build_kernel(ds, c, sketches).values
            k1, k2 = closedform.closed_form_kernel(ds, sketches)
            worst = max(worst, float(np.max(np.abs(rec - k1 - k2))))
            lam = linalg.sym_eigvals_min(k2)
            k2_min = min(k2_min, lam / max(linalg.spectral_norm(k2), 1e-300))
    series_err = series_check(seed)
    return [Check("recursion-vs-closed-form", worst <= 1e-8, f"max abs diff {worst:.2e}"),
            Check("k2-psd", k2_min >= -1e-8, f"min eig / norm {k2_min:.2e}"),
            Check("k1-series", series_err <= 1e-6, f"max abs diff {series_err:.2e}")]


def low_correlation_dataset(rng, n=4, nodes=3, dim=6, cap=0.9):
    """Graphs without edges whose unit features have pairwise |cos| <= cap.

    Without edges each embedding is the normalized feature itself, so the
    correlation bound is controlled directly. Vectors are accepted one at a
    time; in low dimension many pairs land just under ``cap``. Self pairs of
    a graph always have correlation 1, so only entries between distinct
    graphs qualify for the series comparison.
    """
    from .graphs import Dataset, Graph
    accepted = []
    while len(accepted) < n * nodes:
        v = np.abs(rng.standard_normal(dim))
        v /= np.linalg.norm(v)
        if all(abs(float(v @ w)) <= cap for w in accepted):
            accepted.append(v)
    feats = np.stack(accepted, axis=1)
    graphs = tuple(Graph(np.zeros((nodes, nodes)), feats[:, k * nodes:(k + 1) * nodes])
                   for k in range(n))
    return Dataset(graphs, dim, "low-correlation")


def series_check(seed=0, max_l=50):
    """Largest series-vs-closed-form gap over off-diagonal entries with |x| <= 0.9."""
    rng = rng_for(seed, 104)
    ds = low_correlation_dataset(rng)
    k1, _ = closedform.closed_form_kernel(ds)
    series = closedform.k1_series(ds, None, max_l)
    off = ~np.eye(len(ds), dtype=bool)
    return float(np.max(np.abs(series - k1)[off]))


def trace_suite(seed=0, count=10):
    bad_trace = bad_self = 0
    runs = 0
    for ds, cfg, sk in normalized_datasets(seed, count):
        for sketches, c in ((None, closedform.CLOSED_FORM_CONFIG), (sk, cfg)):
            km = build_kernel(ds, c, sketches)
            k1, _ = closedform.closed_form_kernel(ds, sketches)
            tc = closedform.trace_bound_check(km, ds, k1)
            runs += 1
            bad_trace += tc.trace > tc.bound
            bad_self += sum(not p[2] for p in tc.per_graph)
    return [Check("trace-bound", bad_trace == 0, f"{bad_trace} violations in {runs} runs"),
            Check("self-k1-bound", bad_self == 0, f"{bad_self} violations")]


def sketch_error_suite(seed=0, n=500, trials=100, out_dir=None):
    rows = sketch.validate_error_bound(n, trials=trials, seed=seed)
    checks = [Check(f"violations@gamma={r.gamma:g}", r.bound_violation_frac <= 0.05,
                    f"{r.bound_violation_frac:.4f}") for r in rows]
    checks.append(Check("error-decreases", rows[-1].mean_rel_error < rows[0].mean_rel_error,
                        f"{rows[0].mean_rel_error:.3f} -> {rows[-1].mean_rel_error:.3f}"))
    if out_dir is not None:
        path = Path(out_dir) / "gamma_sweep.csv"
        sketch.write_gamma_csv(rows, path)
        checks.append(Check("csv-written", path.exists(), str(path)))
    return checks


def run_suite(name, seed=0, fast=False, n=None, trials=None, out_dir=None):
    if name == "kron":
        return kron_suite(seed)
    if name == "backends":
        return backends_suite(seed, 6 if fast else 20)
    if name == "closedform":
        return closedform_suite(seed, 4 if fast else 10)
    if name == "trace":
        return trace_suite(seed, 4 if fast else 10)
    if name == "sketch-error":
        n = n or (128 if fast else 500)
        trials = trials or (20 if fast else 100)
        return sketch_error_suite(seed, n, trials, out_dir)
    raise ValueError(f"unknown suite {name!r}")

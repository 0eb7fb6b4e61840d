"""Command-line interface: ``fastgntk {kernel,validate,bench,regress}``.

Exit codes: 0 success, 1 computation or check failure, 2 usage error.
Kernel settings come from flags, then a ``--config`` key=value file, then
defaults, in that order of precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gntk, regression, validation
from .gntk import Backend, GntkConfig, Readout, build_kernel
from .graphs import Scaling, fixed_size_dataset, load_dataset
from .sketch import rng_for

REPORT_SCHEMA = 1

# config keys accepted in --config files, with their parsers
CONFIG_KEYS = {
    "L": int, "R": int, "c_phi": float, "scaling": Scaling, "readout": Readout,
    "backend": Backend, "sketch_ratio": float, "seed": int, "clamp_eps": float,
    "sketch_kind": str, "kron_cap": int, "threads": int,
}


class UsageError(Exception):
    pass


def default_threads():
    env = os.environ.get("GNTK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"GNTK_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def read_config_file(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve_config(args, **overrides):
    """Merge defaults < config file < explicit flags into a :class:`GntkConfig`."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(GntkConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    values.update(overrides)
    values.setdefault("threads", default_threads())
    try:
        return GntkConfig(**values)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def write_report(path, command, cfg, timings, outputs, warnings, extra=None):
    doc = {"schema": REPORT_SCHEMA, "command": command,
           "config": cfg.to_dict() if cfg is not None else None,
           "timings": {k: max(0.0, float(v)) for k, v in timings.items()},
           "outputs": [str(o) for o in outputs], "warnings": list(warnings)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"dataset not found: {path}")
    return load_dataset(p)


def print_stage_table(stage_ms, out=None):
    out = out or sys.stdout
    print(f"{'stage':<12}{'ms':>12}", file=out)
    for k, v in stage_ms.items():
        print(f"{k:<12}{v:>12.2f}", file=out)


# --- subcommands ---------------------------------------------------------------

def cmd_kernel(args):
    cfg = resolve_config(args)
    ds = _load(args.dataset)
    km = build_kernel(ds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    report_path = out.with_suffix(".report.json")
    gntk.write_kernel_binary(km, out, timings=args.embed_timings)
    gntk.write_kernel_csv(km, csv_path)
    warnings = []
    if km.meta.get("clamp_events"):
        warnings.append(f"{km.meta['clamp_events']} correlations clamped into [-1, 1]")
    write_report(report_path, "kernel", cfg, km.stage_ms, [out, csv_path, report_path],
                 warnings, {"n": km.n, "config_hash": km.config_hash,
                            "clamp_events": km.meta.get("clamp_events", 0)})
    print_stage_table(km.stage_ms)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_validate(args):
    names = validation.SUITES if args.suite == "all" else (args.suite,)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    timings = {}
    for name in names:
        t0 = time.perf_counter()
        checks = validation.run_suite(name, seed=args.seed, fast=args.fast,
                                      n=args.n, trials=args.trials, out_dir=out_dir)
        timings[name] = (time.perf_counter() - t0) * 1e3
        for c in checks:
            print(f"[{'PASS' if c.ok else 'FAIL'}] {name}/{c.name}: {c.detail}")
            if not c.ok:
                failures.append(f"{name}/{c.name}")
    outputs = []
    sweep = out_dir / "gamma_sweep.csv"
    if sweep.exists() and "sketch-error" in names:
        outputs.append(sweep)
    if args.report:
        write_report(args.report, "validate", None, timings, outputs, [],
                     {"suite": args.suite, "fast": args.fast, "failures": failures})
    if failures:
        print("failed: " + ", ".join(failures), file=sys.stderr)
        return 1
    return 0


def _parse_synthetic(spec):
    try:
        big_n, n = (int(x) for x in spec.split(","))
    except ValueError:
        raise UsageError(f"--synthetic expects N,n, got {spec!r}") from None
    if big_n < 1 or n < 1:
        raise UsageError("--synthetic sizes must be positive")
    return big_n, n


def cmd_bench(args):
    if bool(args.dataset) == bool(args.synthetic):
        raise UsageError("bench needs exactly one of --dataset or --synthetic N,n")
    base = resolve_config(args)
    if args.dataset:
        ds = _load(args.dataset)
    else:
        big_n, n = _parse_synthetic(args.synthetic)
        ds = fixed_size_dataset(rng_for(base.seed, 900), n, big_n, args.feature_dim)
    backends = [Backend(b) for b in args.backends.split(",")]
    rows = []
    warnings = []
    totals = {}
    for b in backends:
        cfg = gntk.with_backend(base, b)
        if b is Backend.NAIVE_KRON and (ds.max_nodes ** 2) ** 2 > cfg.kron_cap:
            warnings.append(f"skipped naive-kron: N={ds.max_nodes} exceeds the Kronecker cap")
            continue
        runs = [build_kernel(ds, cfg).stage_ms for _ in range(args.repeats)]
        avg = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
        sizes = gntk.effective_sketch_sizes(ds, cfg.sketch_ratio) if b is Backend.SKETCHED \
            else [g.num_nodes for g in ds]
        rows.append({"backend": b.value, "n": len(ds), "N": ds.max_nodes,
                     "b": max(sizes), "total_ms": avg["total"],
                     "aggregate_ms": avg["aggregate"], "combine_ms": avg["combine"]})
        totals[b] = avg
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["backend", "n", "N", "b", "total_ms",
                                          "aggregate_ms", "combine_ms"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    speedups = {}
    if Backend.NAIVE_KRON in totals and Backend.DECOUPLED in totals:
        speedups["decoupled_vs_naive_total"] = (totals[Backend.NAIVE_KRON]["total"]
                                                / totals[Backend.DECOUPLED]["total"])
    if Backend.DECOUPLED in totals and Backend.SKETCHED in totals:
        speedups["sketched_vs_decoupled_aggregate"] = (totals[Backend.DECOUPLED]["aggregate"]
                                                       / totals[Backend.SKETCHED]["aggregate"])
    for r in rows:
        print(f"{r['backend']:<12} total {r['total_ms']:10.1f} ms  "
              f"aggregate {r['aggregate_ms']:10.1f} ms  combine {r['combine_ms']:10.1f} ms")
    for k, v in speedups.items():
        print(f"speedup {k}: {v:.2f}x")
    for wmsg in warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    if args.report:
        write_report(args.report, "bench", base,
                     {f"{r['backend']}_total": r["total_ms"] for r in rows},
                     [args.out], warnings, {"speedups": speedups})
    return 0


def _split(n, test_frac, seed):
    order = rng_for(seed, 500).permutation(n)
    n_test = int(round(test_frac * n))
    if n_test >= n:
        n_test = n - 1
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def cmd_regress(args):
    if args.labels == "real":
        if not args.labels_file or not Path(args.labels_file).is_file():
            raise UsageError("--labels real needs an existing --labels-file")
    if not args.kernel and not args.dataset:
        raise UsageError("regress needs --kernel or --dataset")
    if (args.labels == "synthetic" or args.diagnostics) and not args.dataset:
        raise UsageError("synthetic labels and diagnostics need --dataset")

    cfg = resolve_config(args)
    warnings = []
    timings = {}
    ds = _load(args.dataset) if args.dataset else None
    t0 = time.perf_counter()
    if args.kernel:
        km = gntk.read_kernel_binary(args.kernel)
        if ds is not None and km.n != len(ds):
            raise UsageError(f"kernel has {km.n} rows but dataset has {len(ds)} graphs")
    else:
        km = build_kernel(ds, cfg)
        timings.update(km.stage_ms)
    timings["kernel"] = (time.perf_counter() - t0) * 1e3
    k = km.values
    n = k.shape[0]

    model = None
    if args.labels == "real":
        y = np.loadtxt(args.labels_file, ndmin=1)
        if y.shape[0] != n:
            raise UsageError(f"labels file has {y.shape[0]} entries, kernel has {n}")
    else:
        model = regression.random_label_model(rng_for(cfg.seed, 600), ds.feature_dim, args.T)
        y = regression.synthesize_labels(ds, model)

    train, test = _split(n, args.test_frac, cfg.seed)
    ktr = k[np.ix_(train, train)]
    result = {}
    if args.task == "classification":
        pred_tr = regression.one_vs_rest_predict(ktr, y[train], ktr, args.ridge)
        result["train_accuracy"] = float(np.mean(pred_tr == y[train]))
        if len(test):
            pred = regression.one_vs_rest_predict(ktr, y[train], k[np.ix_(test, train)],
                                                  args.ridge)
            result["test_accuracy"] = float(np.mean(pred == y[test]))
    else:
        pred_tr = regression.krr_fit_predict(ktr, y[train], ktr, args.ridge)
        result["train_mse"] = float(np.mean((pred_tr - y[train]) ** 2))
        if len(test):
            pred = regression.krr_fit_predict(ktr, y[train], k[np.ix_(test, train)], args.ridge)
            result["test_mse"] = float(np.mean((pred - y[test]) ** 2))
    for key, v in result.items():
        print(f"{key}: {v:.6g}")

    outputs = []
    if args.diagnostics:
        if not (cfg.L == 1 and cfg.R == 1 and cfg.scaling is Scaling.NORMALIZED):
            warnings.append("diagnostics assume L=1, R=1 and normalized scaling")
        if model is None:
            model = regression.LabelModel(0.0, np.zeros(ds.feature_dim))
            warnings.append("real labels: learnability bound uses an all-zero label model")
        sketches = gntk.make_sketches(ds, cfg) if cfg.backend is Backend.SKETCHED else None
        diag = regression.gen_diagnostics(k, y, model, ds, sketches, args.delta)
        Path(args.diagnostics).write_text(diag.to_json() + "\n", encoding="utf-8")
        outputs.append(args.diagnostics)
    if args.report:
        outputs.append(args.report)
        write_report(args.report, "regress", cfg, timings, outputs, warnings, result)
    for wmsg in warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    return 0


# --- parser ------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $GNTK_THREADS or CPU count)")
    p.add_argument("--config", help="key=value file with kernel settings")


def _add_kernel_opts(p):
    p.add_argument("--backend", choices=[b.value for b in Backend], default=None)
    p.add_argument("--L", type=int, default=None)
    p.add_argument("--R", type=int, default=None)
    p.add_argument("--c-phi", dest="c_phi", type=float, default=None)
    p.add_argument("--scaling", choices=[s.value for s in Scaling], default=None)
    p.add_argument("--readout", choices=[r.value for r in Readout], default=None)
    p.add_argument("--sketch-ratio", dest="sketch_ratio", type=float, default=None)
    p.add_argument("--clamp-eps", dest="clamp_eps", type=float, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="fastgntk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel", help="build a kernel matrix for a dataset")
    _add_common(p)
    _add_kernel_opts(p)
    p.add_argument("--dataset", required=True, help="TU directory or JSON file")
    p.add_argument("--out", default="kernel.bin")
    p.add_argument("--embed-timings", action="store_true",
                   help="store stage times in the binary trailer (breaks byte-identity)")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("validate", help="run self-check suites")
    _add_common(p)
    p.add_argument("--suite", choices=list(validation.SUITES) + ["all"], default="all")
    p.add_argument("--fast", action="store_true", help="reduced sizes and trial counts")
    p.add_argument("--n", type=int, default=None, help="matrix size for sketch-error")
    p.add_argument("--trials", type=int, default=None, help="trials per gamma for sketch-error")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="time the backends on the same inputs")
    _add_common(p)
    _add_kernel_opts(p)
    p.add_argument("--dataset")
    p.add_argument("--synthetic", help="N,n: n random graphs with N nodes each")
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--backends", default="naive-kron,decoupled,sketched")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", default="bench.csv")
    p.add_argument("--report")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("regress", help="kernel ridge regression and diagnostics")
    _add_common(p)
    _add_kernel_opts(p)
    p.add_argument("--dataset")
    p.add_argument("--kernel", help="kernel binary written by 'kernel'")
    p.add_argument("--labels", choices=["real", "synthetic"], default="synthetic")
    p.add_argument("--labels-file")
    p.add_argument("--task", choices=["regression", "classification"], default="regression")
    p.add_argument("--T", type=int, default=1, help="polynomial terms in synthetic labels")
    p.add_argument("--lambda", dest="ridge", type=float, default=1e-6)
    p.add_argument("--test-frac", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--diagnostics", help="write generalization diagnostics JSON here")
    p.add_argument("--report")
    p.set_defaults(func=cmd_regress)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    if getattr(args, "seed", None) is None:
        args.seed = 0 if args.command == "validate" else None
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fastgntk: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit 1
        print(f"fastgntk: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

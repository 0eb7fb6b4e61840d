"""Closed form of the one-aggregate, one-ReLU-layer kernel on normalized graphs.

With normalized scaling every aggregated (and possibly sketched) node
embedding ``h~_u = [H S^T S (A+I) C]_{:,u}`` is a unit vector, so the
recursion with ``L = R = 1`` and ``c_phi = 1`` collapses to

    K1(G, H) = sum_{u,v} x (pi - arccos x) / (2 pi)
    K2(G, H) = sum_{u,v} (x (pi - arccos x) + sqrt(1 - x^2)) / (2 pi)

where ``x = <h~_u, h~_v>``. ``K1`` also has a power-series form in the
"Gram power" matrices ``sum_{u,v} x^t``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import linalg
from .graphs import Scaling, adjacency_with_self_loops, normalized_scaling_diag
from .gntk import Backend, GntkConfig, Readout

# configuration under which build_kernel reproduces k1 + k2
CLOSED_FORM_CONFIG = GntkConfig(L=1, R=1, c_phi=1.0, scaling=Scaling.NORMALIZED,
                                readout=Readout.SUM, backend=Backend.DECOUPLED)


@dataclass(frozen=True)
class Embeddings:
    bar_h: np.ndarray    # H (A+I) C, no sketch
    tilde_h: np.ndarray  # H S^T S (A+I) C, unit columns


@dataclass(frozen=True)
class GramPower:
    t: int
    values: np.ndarray


def closed_form_config(sketched=False, **kw):
    """``CLOSED_FORM_CONFIG``, optionally switched to the sketched backend."""
    from dataclasses import replace
    if sketched:
        kw.setdefault("backend", Backend.SKETCHED)
    return replace(CLOSED_FORM_CONFIG, **kw)


def embeddings(g, sketch=None):
    """Exact and sketched aggregated embeddings sharing one scaling ``C``.

    ``C`` is chosen so the sketched columns have unit norm; ``bar_h`` reuses
    it, so ``bar_h`` is unit-norm only when there is no sketch.
    """
    c = normalized_scaling_diag(g, sketch)
    a1 = adjacency_with_self_loops(g)
    h = g.features
    bar = h @ a1 @ c
    if sketch is None:
        tilde = bar.copy()
    else:
        s = sketch.data
        tilde = (h @ s.T) @ (s @ a1) @ c
    return Embeddings(bar, tilde)


def _embed_all(ds, sketches, exact=False):
    if sketches is None:
        sketches = [None] * len(ds)
    embs = [embeddings(g, s) for g, s in zip(ds.graphs, sketches)]
    return [e.bar_h if exact else e.tilde_h for e in embs]


def _correlations(hi, hj, normalize):
    x = hi.T @ hj
    if normalize:
        # unit columns in exact arithmetic; dividing by the diagonal of the
        # same Gram product makes self pairs exactly 1, where sqrt(1 - x^2)
        # would amplify a 1e-16 error to 1e-8
        di = np.diag(x) if hi is hj else np.diag(hi.T @ hi)
        dj = np.diag(x) if hi is hj else np.diag(hj.T @ hj)
        x = x / np.sqrt(np.outer(di, dj))
    return x


def _pairwise(ds, sketches, fn, exact=False, normalize=True):
    hs = _embed_all(ds, sketches, exact)
    n = len(hs)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = fn(_correlations(hs[i], hs[j], normalize))
    return out


def _k1_entry(x):
    x = np.clip(x, -1.0, 1.0)
    return float(np.sum(x * (np.pi - np.arccos(x)))) / (2 * np.pi)


def _k2_entry(x):
    x = np.clip(x, -1.0, 1.0)
    return float(np.sum(x * (np.pi - np.arccos(x)) + np.sqrt(1.0 - x * x))) / (2 * np.pi)


def _k2_printed_entry(x):
    x = np.clip(x, -1.0, 1.0)
    return float(np.sum(x * (np.pi - np.arccos(x) + np.sqrt(1.0 - x * x)))) / (2 * np.pi)


def closed_form_kernel(ds, sketches=None):
    """Return ``(k1, k2)``; their sum is the L=R=1 kernel at ``c_phi = 1``."""
    return _pairwise(ds, sketches, _k1_entry), _pairwise(ds, sketches, _k2_entry)


def k2_printed_variant(ds, sketches=None):
    """``sum x (pi - arccos x + sqrt(1 - x^2)) / (2 pi)``.

    This variant multiplies the square-root term by ``x`` as well. It does
    not match the recursion and need not be PSD; kept for comparison.
    """
    return _pairwise(ds, sketches, _k2_printed_entry)


def series_coefficients(max_l):
    """``c_l = (2l-3)!! / ((2l-2)!! (2l-1))`` for ``l = 1..max_l``."""
    if max_l < 1:
        raise ValueError("max_l must be at least 1")
    c = np.empty(max_l)
    c[0] = 1.0
    for l in range(1, max_l):
        c[l] = c[l - 1] * (2 * l - 1) ** 2 / ((2 * l) * (2 * l + 1))
    return c


def gram_power(ds, t, sketches=None, exact=False):
    """Entry ``(i, j)`` is ``sum_{u in G_i, v in G_j} <h_u, h_v>^t``."""
    if t < 1:
        raise ValueError("degree t must be at least 1")
    # exact embeddings are not unit-norm under a sketched scaling; keep raw
    # inner products so the polynomial Gram stays a true Gram matrix
    return GramPower(t, _pairwise(ds, sketches, lambda x: float(np.sum(x ** t)), exact,
                                  normalize=False))


def k1_series(ds, sketches=None, max_l=50):
    """Truncated series ``Gram_1 / 4 + (1/2pi) sum_l c_l Gram_{2l}``."""
    coeffs = series_coefficients(max_l)
    hs = _embed_all(ds, sketches)
    n = len(hs)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            x = _correlations(hs[i], hs[j], True)
            x2 = x * x
            acc = 0.0
            p = np.ones_like(x)
            for c in coeffs:
                p = p * x2
                acc += c * float(np.sum(p))
            out[i, j] = out[j, i] = 0.25 * float(np.sum(x)) + acc / (2 * np.pi)
    return out


def psd_sandwich_check(exact, sketched, slack, tol=1e-8):
    """True iff ``(1-slack) exact <= sketched <= (1+slack) exact`` in Loewner order."""
    if exact.t != sketched.t:
        raise ValueError(f"degrees differ: {exact.t} vs {sketched.t}")
    e = exact.values
    s = sketched.values
    if e.shape != s.shape:
        raise ValueError(f"shapes differ: {e.shape} vs {s.shape}")
    lower = linalg.sym_eigvals_min(s - (1 - slack) * e)
    upper = linalg.sym_eigvals_min((1 + slack) * e - s)
    return bool(lower >= -tol and upper >= -tol)


@dataclass(frozen=True)
class TraceCheck:
    trace: float
    bound: float
    ok: bool
    # per graph: (K1(G,G), N^2/2, ok)
    per_graph: tuple = ()


def trace_bound_check(k, ds, k1=None):
    """``tr K <= 2 n (max N)^2``; with ``k1`` also ``K1(G,G) <= N^2/2`` per graph."""
    values = k.values if hasattr(k, "values") else np.asarray(k)
    trace = float(np.trace(values))
    n = len(ds)
    bound = 2.0 * n * ds.max_nodes ** 2
    per = ()
    ok = trace <= bound
    if k1 is not None:
        per = tuple((float(k1[i, i]), g.num_nodes ** 2 / 2.0, bool(k1[i, i] <= g.num_nodes ** 2 / 2.0))
                    for i, g in enumerate(ds.graphs))
        ok = ok and all(p[2] for p in per)
    return TraceCheck(trace, bound, bool(ok), per)


def write_diagnostic_csv(path, trace_check, sandwich_rates=None, series_error=None):
    """Per-graph trace contributions plus optional summary rows."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "key", "value", "limit", "ok"])
        for i, (v, lim, ok) in enumerate(trace_check.per_graph):
            w.writerow(["k1_self", i, f"{v:.12g}", f"{lim:.12g}", int(ok)])
        w.writerow(["trace", "all", f"{trace_check.trace:.12g}",
                    f"{trace_check.bound:.12g}", int(trace_check.ok)])
        for t, rate in (sandwich_rates or {}).items():
            w.writerow(["sandwich_pass_rate", t, f"{rate:.6f}", "", ""])
        if series_error is not None:
            w.writerow(["series_max_error", "k1", f"{series_error:.3e}", "", ""])

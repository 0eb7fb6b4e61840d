"""Kernel ridge regression on graph kernels plus generalization diagnostics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg
from .closedform import embeddings, gram_power
from .graphs import adjacency_with_self_loops, normalized_scaling_diag


@dataclass(frozen=True)
class LabelModel:
    """``y = a1 sum_u <h_u, b1> + sum_l a_2l sum_u <h_u, b_2l>^(2l)``.

    ``terms[l-1]`` holds ``(a_2l, b_2l)``.
    """

    alpha1: float
    beta1: np.ndarray
    terms: tuple = ()

    def __post_init__(self):
        beta1 = np.asarray(self.beta1, dtype=np.float64)
        object.__setattr__(self, "beta1", beta1)
        terms = tuple((float(a), np.asarray(b, dtype=np.float64)) for a, b in self.terms)
        for _, b in terms:
            if b.shape != beta1.shape:
                raise ValueError("all beta vectors must share one dimension")
        object.__setattr__(self, "terms", terms)

    @property
    def T(self):
        return len(self.terms)

    def lemma_rhs(self):
        """``4|a1| |b1| + sum_l 4 sqrt(pi) (2l-1) |a_2l| |b_2l|``."""
        total = 4.0 * abs(self.alpha1) * float(np.linalg.norm(self.beta1))
        for l, (a, b) in enumerate(self.terms, start=1):
            total += 4.0 * math.sqrt(math.pi) * (2 * l - 1) * abs(a) * float(np.linalg.norm(b))
        return total


def random_label_model(rng, feature_dim, T=1, scale=1.0):
    """Unit-norm directions with standard normal weights."""
    def unit():
        v = rng.standard_normal(feature_dim)
        return v / np.linalg.norm(v)
    terms = tuple((scale * float(rng.standard_normal()), unit()) for _ in range(T))
    return LabelModel(scale * float(rng.standard_normal()), unit(), terms)


def synthesize_labels(ds, model, sketches=None):
    """Labels from the exact (unsketched) embeddings ``H (A+I) C``."""
    if model.beta1.shape[0] != ds.feature_dim:
        raise ValueError(f"model dimension {model.beta1.shape[0]} != features {ds.feature_dim}")
    if sketches is None:
        sketches = [None] * len(ds)
    y = np.empty(len(ds))
    for i, (g, s) in enumerate(zip(ds.graphs, sketches)):
        h = embeddings(g, s).bar_h
        val = model.alpha1 * float(np.sum(model.beta1 @ h))
        for l, (a, b) in enumerate(model.terms, start=1):
            val += a * float(np.sum((b @ h) ** (2 * l)))
        y[i] = val
    return y


def _values(k):
    return k.values if hasattr(k, "values") else np.asarray(k, dtype=np.float64)


def krr_fit_predict(k_train, y, k_cross, lam):
    """Predictions ``k_cross (K + lam I)^-1 y``."""
    if lam < 0:
        raise ValueError("ridge parameter must be nonnegative")
    kt = _values(k_train)
    kc = np.atleast_2d(np.asarray(k_cross, dtype=np.float64))
    if kc.shape[1] != kt.shape[0]:
        raise linalg.ShapeError(f"cross kernel {kc.shape} does not match train {kt.shape}")
    coef = linalg.solve_spd_jitter(kt, np.asarray(y, dtype=np.float64), jitter=lam)
    return kc @ coef


def one_vs_rest_predict(k_train, labels, k_cross, lam):
    """Class predictions from one ridge fit per class on +-1 targets."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    targets = np.stack([np.where(labels == c, 1.0, -1.0) for c in classes], axis=1)
    scores = krr_fit_predict(k_train, targets, k_cross, lam)
    return classes[np.argmax(scores, axis=1)]


@dataclass
class GenDiagnostics:
    y_norm_kinv: float
    trace_k: float
    bm02_bound: float
    lemma_rhs: float
    gamma_max: float
    jitter: float = 0.0
    gammas: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def gamma_ratio(values):
    """``|M|_F / |M|_2``; 1 for the zero matrix."""
    spec = linalg.spectral_norm(values)
    if spec == 0:
        return 1.0
    return float(np.linalg.norm(values, "fro")) / spec


def gen_diagnostics(k, y, model, ds, sketches=None, delta=0.05, jitter=None):
    """Quadratic form, trace, generalization bound, learnability bound and gamma."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    kv = _values(k)
    y = np.asarray(y, dtype=np.float64)
    n = kv.shape[0]
    trace = float(np.trace(kv))
    if jitter is None:
        jitter = 1e-10 * trace / n
    if np.any(y):
        x = linalg.solve_spd_jitter(kv, y, jitter=jitter)
        ynorm = math.sqrt(max(float(y @ x), 0.0))
    else:
        ynorm = 0.0
    bound = math.sqrt(ynorm ** 2 * trace) / n + math.sqrt(math.log(1 / delta) / n)
    degrees = [1] + [2 * l for l in range(1, model.T + 1)]
    gammas = {t: gamma_ratio(gram_power(ds, t, sketches, exact=True).values) for t in degrees}
    return GenDiagnostics(ynorm, trace, bound, model.lemma_rhs(), max(gammas.values()),
                          float(jitter), {str(t): v for t, v in gammas.items()})


@dataclass(frozen=True)
class Assumption3:
    lhs: float
    rhs: float
    ok: bool
    flags: tuple = ()


def assumption3_check(gi, gj, si=None, sj=None, gamma=1.0, t_cap=1, constant=1.0):
    """Both sides of the sketch-size condition for one graph pair.

    lhs = |A_j C_j 1| |A_i C_i 1| |H_j^T H_i|_F
    rhs = constant * min(sqrt b) / (gamma T log^3 N) * 1^T C_i A_i H_i^T H_j A_j C_j 1

    ``N`` is floored at 2 so the log is positive; ``T`` at 1.
    """
    flags = []
    ci = np.diag(normalized_scaling_diag(gi, si))
    cj = np.diag(normalized_scaling_diag(gj, sj))
    ai = adjacency_with_self_loops(gi) @ ci
    aj = adjacency_with_self_loops(gj) @ cj
    hij = gi.features.T @ gj.features
    lhs = float(np.linalg.norm(aj) * np.linalg.norm(ai) * np.linalg.norm(hij, "fro"))

    bi = si.b if si is not None else gi.num_nodes
    bj = sj.b if sj is not None else gj.num_nodes
    big_n = max(gi.num_nodes, gj.num_nodes)
    if big_n < 2:
        flags.append("N floored at 2")
        big_n = 2
    T = t_cap
    if T < 1:
        flags.append("T floored at 1")
        T = 1
    inner = float(ai @ hij @ aj)
    rhs = constant * math.sqrt(min(bi, bj)) / (gamma * T * math.log(big_n) ** 3) * inner
    if rhs <= 0:
        flags.append("nonpositive rhs")
    return Assumption3(lhs, rhs, bool(rhs > 0 and lhs <= rhs), tuple(flags))

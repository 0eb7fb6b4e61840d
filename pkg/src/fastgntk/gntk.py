"""Graph neural tangent kernel construction.

The kernel between two graphs is built from two ``N_i x N_j`` iterates,
``sigma`` (the covariance) and ``theta`` (the tangent kernel), through ``L``
levels of neighbourhood aggregation, each followed by ``R`` ReLU layers,
and summed over node pairs at the end.

Three aggregation backends compute the same recursion:

* ``naive-kron``: multiplies ``vec(sigma)`` by the Kronecker product of the
  two scaled adjacency matrices (``O(N^4)``, kept as the reference).
* ``decoupled``: two matrix products ``C_i A_i . sigma . A_j C_j``.
* ``sketched``: inserts ``S^T S`` on both sides with one AMS sketch per
  graph and evaluates it sketch-first (``O(N^2 b)``).

``A`` always includes self loops.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import linalg
from .graphs import Scaling, adjacency_with_self_loops, scaling_matrix
from .sketch import (SketchMatrix, apply_two_sided, identity_sketch, make_ams,
                     sketch_factors, sketch_size)

STAGES = ("prepare", "init", "aggregate", "combine", "readout")


class Backend(str, enum.Enum):
    NAIVE_KRON = "naive-kron"
    DECOUPLED = "decoupled"
    SKETCHED = "sketched"


class Readout(str, enum.Enum):
    SUM = "sum"
    JUMPING_KNOWLEDGE = "jk"


class CorrelationError(FloatingPointError):
    """A correlation left [-1, 1] by more than the configured tolerance."""


@dataclass(frozen=True)
class GntkConfig:
    L: int = 2
    R: int = 2
    c_phi: float = 2.0
    scaling: Scaling = Scaling.UNIT
    readout: Readout = Readout.SUM
    backend: Backend = Backend.DECOUPLED
    sketch_ratio: float = 1.0
    seed: int = 0
    clamp_eps: float = 1e-6
    # "ams" or "identity" (S^T S = I, for degeneration checks)
    sketch_kind: str = "ams"
    # refuse naive-kron pairs whose Kronecker factor has more entries
    kron_cap: int = 10**8
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scaling", Scaling(self.scaling))
        object.__setattr__(self, "readout", Readout(self.readout))
        object.__setattr__(self, "backend", Backend(self.backend))
        if self.L < 1 or self.R < 1:
            raise ValueError("L and R must be at least 1")
        if not self.c_phi > 0:
            raise ValueError("c_phi must be positive")
        if not 0 < self.sketch_ratio <= 1:
            raise ValueError("sketch_ratio must lie in (0, 1]")
        if self.sketch_kind not in ("ams", "identity"):
            raise ValueError(f"unknown sketch kind {self.sketch_kind!r}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def to_dict(self):
        d = asdict(self)
        for k in ("scaling", "readout", "backend"):
            d[k] = d[k].value
        return d

    def config_hash(self):
        d = self.to_dict()
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PairState:
    """Iterates for one graph pair plus the self-pair diagonals they need."""

    sigma: np.ndarray
    theta: np.ndarray
    diag_i: np.ndarray
    diag_j: np.ndarray
    # correlations clamped back into [-1, 1] by the last combine step
    clamped: int = 0


@dataclass
class PreparedGraph:
    """Per-graph quantities shared by every pair the graph takes part in.

    ``agg`` is ``C (A + I)``. ``self_diag[l][r]`` is the diagonal of the
    self-pair covariance after level ``l`` and layer ``r`` (``r = 0`` is
    right after aggregation; level 0 only has ``r = R``).
    """

    graph: object
    agg: np.ndarray
    sketch: SketchMatrix | None = None
    factors: object = None
    self_diag: list = field(default_factory=list)


@dataclass
class KernelMatrix:
    values: np.ndarray
    backend: str
    config_hash: str
    stage_ms: dict
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.values.shape[0]


# --- pair-level operations ---------------------------------------------------

def init_pair(gi, gj):
    """``sigma = theta = H_i^T H_j``; diagonals are squared feature norms."""
    hi = _features(gi)
    hj = _features(gj)
    if hi.shape[0] != hj.shape[0]:
        raise ValueError(f"feature dims differ: {hi.shape[0]} vs {hj.shape[0]}")
    gram = hi.T @ hj
    return PairState(gram, gram.copy(), np.sum(hi * hi, axis=0), np.sum(hj * hj, axis=0))


def _features(g):
    return g.graph.features if isinstance(g, PreparedGraph) else g.features


def _level_diags(pi, pj, level):
    if not pi.self_diag or not pj.self_diag:
        return None, None
    return pi.self_diag[level][0], pj.self_diag[level][0]


def aggregate_naive_kron(state, pi, pj, level=None, kron_cap=10**8):
    """Aggregate via ``vec(new) = (C_i A_i (x) C_j A_j) vec(old)``."""
    ni, nj = state.sigma.shape
    if (ni * nj) ** 2 > kron_cap:
        raise MemoryError(
            f"naive-kron pair of sizes {ni}x{nj} needs {(ni * nj) ** 2} Kronecker "
            "entries; use the decoupled backend"
        )
    big = linalg.kron(pi.agg, pj.agg)
    sigma = linalg.devectorize(big @ linalg.vectorize(state.sigma), ni, nj)
    theta = linalg.devectorize(big @ linalg.vectorize(state.theta), ni, nj)
    di, dj = _level_diags(pi, pj, level) if level is not None else (None, None)
    return PairState(sigma, theta, state.diag_i if di is None else di,
                     state.diag_j if dj is None else dj)


def aggregate_decoupled(state, pi, pj, level=None):
    """Aggregate via ``C_i A_i . old . A_j C_j`` without forming the Kronecker product."""
    sigma = linalg.vec_trick(pi.agg, state.sigma, pj.agg)
    theta = linalg.vec_trick(pi.agg, state.theta, pj.agg)
    di, dj = _level_diags(pi, pj, level) if level is not None else (None, None)
    return PairState(sigma, theta, state.diag_i if di is None else di,
                     state.diag_j if dj is None else dj)


def aggregate_sketched(state, pi, pj, level=None):
    """Aggregate via ``C_i A_i S_i^T S_i . old . S_j^T S_j A_j C_j`` (sketch-first order)."""
    if pi.factors is None or pj.factors is None:
        raise ValueError("sketched aggregation needs graphs prepared with sketches")
    sigma = apply_two_sided(pi.factors, state.sigma, pj.factors)
    theta = apply_two_sided(pi.factors, state.theta, pj.factors)
    di, dj = _level_diags(pi, pj, level) if level is not None else (None, None)
    return PairState(sigma, theta, state.diag_i if di is None else di,
                     state.diag_j if dj is None else dj)


def arccos_kernels(lam):
    """ReLU Gaussian expectations at unit variance and correlation ``lam``.

    Returns ``(E[relu(a) relu(b)], E[1(a>=0) 1(b>=0)])``.
    """
    angle = np.arccos(lam)
    k1 = (np.sqrt(np.maximum(1.0 - lam * lam, 0.0)) + (np.pi - angle) * lam) / (2 * np.pi)
    k0 = (np.pi - angle) / (2 * np.pi)
    return k1, k0


def correlation(sigma, diag_i, diag_j, clamp_eps=1e-6, strict=True):
    """``sigma / sqrt(d_i d_j)`` clamped to [-1, 1].

    Returns ``(lam, n_clamped, sqrt(d_i d_j))``. With ``strict`` a value
    beyond ``1 + clamp_eps`` or a nonpositive diagonal raises. Otherwise a
    zero diagonal (a node whose sketched representation cancelled to zero)
    gets ``lam = 0`` and a zero scale.
    """
    if strict and (np.any(diag_i <= 0) or np.any(diag_j <= 0)):
        raise ValueError("nonpositive self-covariance on the diagonal")
    scale = np.sqrt(np.outer(np.maximum(diag_i, 0.0), np.maximum(diag_j, 0.0)))
    live = scale > 0
    lam = np.divide(sigma, scale, out=np.zeros_like(sigma), where=live)
    over = np.abs(lam) > 1.0
    if strict and np.any(np.abs(lam) > 1.0 + clamp_eps):
        raise CorrelationError(
            f"correlation {float(np.max(np.abs(lam))):.9f} exceeds 1 + {clamp_eps:g}"
        )
    return np.clip(lam, -1.0, 1.0), int(np.count_nonzero(over)), scale


def combine_layer(state, c_phi=2.0, clamp_eps=1e-6, strict=True):
    """One fully connected ReLU layer applied to both iterates.

    A node with zero variance has an identically zero pre-activation, so
    both its ReLU output and its derivative term vanish.
    """
    lam, clamped, scale = correlation(state.sigma, state.diag_i, state.diag_j,
                                      clamp_eps, strict)
    k1, k0 = arccos_kernels(lam)
    sigma = c_phi * scale * k1
    sigma_dot = np.where(scale > 0, c_phi * k0, 0.0)
    theta = state.theta * sigma_dot + sigma
    half = c_phi / 2.0
    return PairState(sigma, theta, half * state.diag_i, half * state.diag_j, clamped)


def readout(per_level_theta, mode=Readout.SUM, levels=None):
    """Sum the final theta, or with jumping knowledge every level ``0..L``."""
    mode = Readout(mode)
    if not per_level_theta:
        raise ValueError("no theta iterates to read out")
    if mode is Readout.SUM:
        return float(np.sum(per_level_theta[-1]))
    if levels is not None and len(per_level_theta) != levels + 1:
        raise ValueError(
            f"jumping knowledge needs {levels + 1} levels, got {len(per_level_theta)}"
        )
    return float(sum(np.sum(t) for t in per_level_theta))


# --- per-graph preparation ----------------------------------------------------

def make_sketches(ds, cfg):
    """One sketch per graph, stream id = graph index; ``None`` for exact backends."""
    if cfg.backend is not Backend.SKETCHED:
        return [None] * len(ds)
    if cfg.sketch_kind == "identity":
        return [identity_sketch(g.num_nodes) for g in ds]
    return [make_ams(sketch_size(cfg.sketch_ratio, g.num_nodes), g.num_nodes, cfg.seed, i)
            for i, g in enumerate(ds)]


def prepare_graph(g, cfg, sketch=None):
    """Scaling, aggregation matrix, sketch factors and the self-pair diagonals."""
    c = scaling_matrix(g, cfg.scaling, sketch)
    agg = c @ adjacency_with_self_loops(g)
    prep = PreparedGraph(g, agg, sketch)
    if cfg.backend is Backend.SKETCHED:
        if sketch is None:
            raise ValueError("sketched backend needs a sketch per graph")
        prep.factors = sketch_factors(agg.T, sketch)

    # self-pair recursion: aggregation needs the full N x N covariance
    state = init_pair(g, g)
    diags = [[state.diag_i]]
    strict = cfg.backend is not Backend.SKETCHED
    for level in range(1, cfg.L + 1):
        state = _aggregate(state, prep, prep, None, cfg)
        d = np.diag(state.sigma).copy()
        state = PairState(state.sigma, state.theta, d, d)
        row = [d]
        for _ in range(cfg.R):
            state = combine_layer(state, cfg.c_phi, cfg.clamp_eps, strict)
            d = np.diag(state.sigma).copy()
            state = PairState(state.sigma, state.theta, d, d)
            row.append(d)
        diags.append(row)
    prep.self_diag = diags
    return prep


def _aggregate(state, pi, pj, level, cfg):
    if cfg.backend is Backend.NAIVE_KRON:
        return aggregate_naive_kron(state, pi, pj, level, cfg.kron_cap)
    if cfg.backend is Backend.DECOUPLED:
        return aggregate_decoupled(state, pi, pj, level)
    return aggregate_sketched(state, pi, pj, level)


def pair_kernel(pi, pj, cfg):
    """Kernel value for one prepared pair; returns ``(value, stage_seconds, clamps)``."""
    clock = time.perf_counter
    times = dict.fromkeys(STAGES[1:], 0.0)
    strict = cfg.backend is not Backend.SKETCHED
    clamps = 0

    t = clock()
    state = init_pair(pi, pj)
    times["init"] += clock() - t
    thetas = [state.theta]
    for level in range(1, cfg.L + 1):
        t = clock()
        state = _aggregate(state, pi, pj, level, cfg)
        times["aggregate"] += clock() - t
        t = clock()
        for _ in range(cfg.R):
            state = combine_layer(state, cfg.c_phi, cfg.clamp_eps, strict)
            clamps += state.clamped
        times["combine"] += clock() - t
        thetas.append(state.theta)
    t = clock()
    value = readout(thetas, cfg.readout, cfg.L)
    times["readout"] += clock() - t
    return value, times, clamps


def build_kernel(ds, cfg, sketches=None):
    """Gram matrix of the dataset under ``cfg``.

    Pairs ``i <= j`` are computed once and mirrored; sketches are drawn once
    per graph and shared by every pair, so the sketched kernel is symmetric
    too. Per-stage wall times (summed over pairs) land in ``stage_ms``.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    t0 = time.perf_counter()
    if sketches is None:
        sketches = make_sketches(ds, cfg)
    preps = [prepare_graph(g, cfg, s) for g, s in zip(ds.graphs, sketches)]
    stage = dict.fromkeys(STAGES, 0.0)
    stage["prepare"] = time.perf_counter() - t0

    n = len(ds)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    values = np.zeros((n, n))

    def work(ij):
        i, j = ij
        return pair_kernel(preps[i], preps[j], cfg)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, pairs))
    else:
        results = [work(p) for p in pairs]

    clamps = 0
    for (i, j), (value, times, c) in zip(pairs, results):
        values[i, j] = values[j, i] = value
        clamps += c
        for k, v in times.items():
            stage[k] += v
    stage_ms = {k: v * 1e3 for k, v in stage.items()}
    stage_ms["total"] = (time.perf_counter() - t0) * 1e3
    meta = {"clamp_events": clamps, "n": n,
            "sketch_sizes": [s.b if s is not None else None for s in sketches]}
    return KernelMatrix(values, cfg.backend.value, cfg.config_hash(), stage_ms, meta)


def kernel_entry(gi, gj, cfg, si=None, sj=None):
    """Kernel value for a single (unordered) pair, without mirroring."""
    pi = prepare_graph(gi, cfg, si)
    pj = prepare_graph(gj, cfg, sj)
    return pair_kernel(pi, pj, cfg)[0]


def with_backend(cfg, backend, **kw):
    return replace(cfg, backend=Backend(backend), **kw)


def effective_sketch_sizes(ds, ratio):
    return [sketch_size(ratio, g.num_nodes) for g in ds]


# --- serialization ------------------------------------------------------------

MAGIC = b"GNTK1\0"


def write_kernel_binary(km, path, timings=False):
    """Magic, u32 n, n*n little-endian f64 (row-major), then a JSON trailer.

    Stage times vary run to run, so they go into the trailer only when
    ``timings`` is set; otherwise ``stage_times`` is null and equal kernels
    give byte-identical files.
    """
    values = np.ascontiguousarray(km.values, dtype="<f8")
    n = values.shape[0]
    trailer = {"backend": km.backend, "config_hash": km.config_hash,
               "stage_times": dict(km.stage_ms) if timings else None}
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint32(n).astype("<u4").tobytes())
        f.write(values.tobytes(order="C"))
        f.write(json.dumps(trailer, sort_keys=True).encode("utf-8"))


def read_kernel_binary(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a kernel file (bad magic)")
    off = len(MAGIC)
    n = int(np.frombuffer(blob, "<u4", 1, off)[0])
    off += 4
    end = off + 8 * n * n
    if len(blob) < end:
        raise ValueError(f"{path}: truncated kernel payload")
    values = np.frombuffer(blob, "<f8", n * n, off).reshape(n, n).astype(np.float64)
    trailer = json.loads(blob[end:].decode("utf-8")) if len(blob) > end else {}
    return KernelMatrix(values, trailer.get("backend", ""), trailer.get("config_hash", ""),
                        trailer.get("stage_times") or {})


def write_kernel_csv(km, path):
    np.savetxt(path, km.values, delimiter=",", fmt="%.17g")


def read_kernel_csv(path):
    values = np.loadtxt(path, delimiter=",", ndmin=2)
    return KernelMatrix(values, "", "", {})

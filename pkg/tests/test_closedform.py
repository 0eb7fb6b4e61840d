import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastgntk import closedform
from fastgntk.closedform import (GramPower, closed_form_kernel, embeddings, gram_power,
                                 closed_form_config, k1_series, k2_printed_variant,
                                 psd_sandwich_check, series_coefficients, trace_bound_check)
from fastgntk.gntk import build_kernel
from fastgntk.graphs import Dataset, Graph, random_dataset
from fastgntk.sketch import identity_sketch, make_ams, sketch_size
from fastgntk.validation import low_correlation_dataset, normalized_datasets
from oracles import closed_form_loop, double_factorial, embedding_loop


def single(h):
    return Graph(np.zeros((1, 1)), np.asarray(h, dtype=float).reshape(-1, 1))


def ds_of(*graphs):
    return Dataset(tuple(graphs), graphs[0].feature_dim)


def test_embeddings_single_node():
    e = embeddings(single([1.0]))
    assert np.array_equal(e.bar_h, [[1.0]]) and np.array_equal(e.tilde_h, [[1.0]])


def test_embeddings_identity_sketch(rng):
    g = random_dataset(rng, 1, 6, 3, min_nodes=6)[0]
    e = embeddings(g, identity_sketch(6))
    assert np.allclose(e.bar_h, e.tilde_h, atol=1e-15)


def test_embeddings_path_pair_by_hand():
    g = Graph.from_edges(2, [(0, 1)], np.array([[1.0, 0.0], [2.0, 3.0]]))
    # H (A+I) = [[1, 1], [5, 5]]; both column norms sqrt(26)
    e = embeddings(g)
    assert np.allclose(e.bar_h, np.array([[1.0, 1.0], [5.0, 5.0]]) / math.sqrt(26))


def test_embeddings_match_loop_oracle(rng):
    g = random_dataset(rng, 1, 7, 3, min_nodes=5)[0]
    s = make_ams(g.num_nodes, g.num_nodes, 3)
    try:
        e = embeddings(g, s)
    except ValueError:
        pytest.skip("sketch cancelled a column")
    assert np.allclose(e.tilde_h, embedding_loop(g, s.data), atol=1e-12)
    assert np.allclose(np.linalg.norm(e.tilde_h, axis=0), 1.0, atol=1e-12)


def test_embeddings_zero_column():
    g = Graph(np.zeros((2, 2)), np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        embeddings(g)


def test_identical_single_nodes():
    ds = ds_of(single([0.6, 0.8]), single([0.6, 0.8]))
    k1, k2 = closed_form_kernel(ds)
    assert np.allclose(k1, 0.5) and np.allclose(k2, 0.5)
    assert np.allclose(k1 + k2, 1.0)


def test_orthogonal_single_nodes():
    ds = ds_of(single([1.0, 0.0]), single([0.0, 1.0]))
    k1, k2 = closed_form_kernel(ds)
    assert k1[0, 1] == pytest.approx(0.0, abs=1e-15)
    # the ReLU covariance of orthogonal unit inputs is 1/(2 pi), not zero
    assert k2[0, 1] == pytest.approx(1 / (2 * math.pi))
    assert k2_printed_variant(ds)[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_matches_loop_oracle(rng):
    for ds, cfg, sk in normalized_datasets(seed=5, count=3):
        for sketches in (None, sk):
            k1, k2 = closed_form_kernel(ds, sketches)
            r1, r2 = closed_form_loop(ds, sketches)
            assert np.allclose(k1, r1, atol=1e-6)
            assert np.allclose(k2, r2, atol=1e-6)


def test_recursion_equals_closed_form():
    for ds, cfg, sk in normalized_datasets(seed=9, count=5):
        for sketches, c in ((None, closed_form_config()), (sk, cfg)):
            rec = build_kernel(ds, c, sketches).values
            k1, k2 = closed_form_kernel(ds, sketches)
            assert np.max(np.abs(rec - (k1 + k2))) <= 1e-8


def test_printed_variant_differs_from_recursion():
    ds, _, _ = normalized_datasets(seed=2, count=1)[0]
    k1, _ = closed_form_kernel(ds)
    rec = build_kernel(ds, closed_form_config()).values
    assert not np.allclose(rec, k1 + k2_printed_variant(ds), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_k2_is_psd(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 6, 8, 4, min_nodes=1)
    _, k2 = closed_form_kernel(ds)
    eig = np.linalg.eigvalsh(k2)
    assert eig[0] >= -1e-8 * max(1.0, eig[-1])


def test_series_coefficients():
    c = series_coefficients(6)
    assert c[0] == 1.0
    assert c[1] == pytest.approx(1 / 6) and c[2] == pytest.approx(3 / 40)
    for l in range(1, 7):
        ref = double_factorial(2 * l - 3) / (double_factorial(2 * l - 2) * (2 * l - 1))
        assert c[l - 1] == pytest.approx(ref, rel=1e-14)
    with pytest.raises(ValueError):
        series_coefficients(0)


def test_series_with_orthogonal_embeddings():
    ds = ds_of(single([1.0, 0.0]), single([0.0, 1.0]))
    k1, _ = closed_form_kernel(ds)
    s = k1_series(ds, None, 5)
    assert s[0, 1] == pytest.approx(0.0, abs=1e-15) == k1[0, 1]


def test_series_converges_below_point_nine(rng):
    ds = low_correlation_dataset(rng)
    k1, _ = closed_form_kernel(ds)
    s = k1_series(ds, None, 50)
    off = ~np.eye(len(ds), dtype=bool)
    assert np.max(np.abs(s - k1)[off]) <= 1e-6


def test_series_error_within_analytic_tail(rng):
    """Near |x| = 1 fifty terms are not enough; the error is the dropped tail."""
    ds = low_correlation_dataset(rng, dim=3, nodes=2, n=3, cap=0.999)
    k1, _ = closed_form_kernel(ds)
    s = k1_series(ds, None, 50)
    coeffs = series_coefficients(200_000)
    l = np.arange(1, coeffs.size + 1)
    tail = float(np.sum(coeffs[50:] * 0.999 ** (2 * l[50:]))) / (2 * math.pi)
    off = ~np.eye(len(ds), dtype=bool)
    pairs = 2 * 2
    err = np.abs(s - k1)[off]
    assert np.all(s[off] <= k1[off] + 1e-12)  # every dropped term is nonnegative
    assert np.max(err) <= pairs * tail


def test_gram_power_definition(rng):
    ds = random_dataset(rng, 3, 5, 3)
    g2 = gram_power(ds, 2)
    hs = [embeddings(g).tilde_h for g in ds]
    ref = np.array([[np.sum((hs[i].T @ hs[j]) ** 2) for j in range(3)] for i in range(3)])
    assert np.allclose(g2.values, ref)
    eig = np.linalg.eigvalsh(g2.values)
    assert eig[0] >= -1e-8 * eig[-1]
    with pytest.raises(ValueError):
        gram_power(ds, 0)


def test_sandwich_trivial_cases():
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert psd_sandwich_check(GramPower(1, m), GramPower(1, m), 0.01)
    assert not psd_sandwich_check(GramPower(1, m), GramPower(1, 2 * m), 0.5)
    with pytest.raises(ValueError):
        psd_sandwich_check(GramPower(1, m), GramPower(2, m), 0.5)


def sandwich_pass_rate(seeds, ratio, t, slack, identity=False):
    passed = total = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        ds = random_dataset(rng, 8, 10, 4, min_nodes=4)
        if identity:
            sk = [identity_sketch(g.num_nodes) for g in ds]
        else:
            sk = [make_ams(sketch_size(ratio, g.num_nodes), g.num_nodes, seed, i)
                  for i, g in enumerate(ds)]
        try:
            exact = gram_power(ds, t, sk, exact=True)
            sketched = gram_power(ds, t, sk)
        except ValueError:
            continue
        total += 1
        passed += psd_sandwich_check(exact, sketched, slack)
    return passed / max(total, 1), total


def test_sandwich_pass_rate_reported():
    rate, total = sandwich_pass_rate(range(100), 0.5, 2, 0.5)
    print(f"sandwich pass rate at b=N/2, t=2, slack=0.5: {rate:.2f} over {total} datasets")
    assert 0.0 <= rate <= 1.0 and total > 0
    ident, _ = sandwich_pass_rate(range(10), 1.0, 2, 0.5, identity=True)
    assert ident == 1.0


def test_trace_single_node():
    ds = ds_of(single([1.0]))
    k1, k2 = closed_form_kernel(ds)
    tc = trace_bound_check(k1 + k2, ds, k1)
    assert tc.trace == pytest.approx(1.0) and tc.bound == 2.0 and tc.ok
    assert tc.per_graph[0][:2] == (pytest.approx(0.5), 0.5)


def test_trace_bound_holds_on_sweep():
    for ds, cfg, sk in normalized_datasets(seed=13, count=8):
        for sketches, c in ((None, closed_form_config()), (sk, cfg)):
            km = build_kernel(ds, c, sketches)
            k1, _ = closedform.closed_form_kernel(ds, sketches)
            tc = trace_bound_check(km, ds, k1)
            assert tc.ok, tc


def test_diagnostic_csv(tmp_path):
    ds = ds_of(single([1.0]), single([2.0]))
    k1, k2 = closed_form_kernel(ds)
    tc = trace_bound_check(k1 + k2, ds, k1)
    p = tmp_path / "diag.csv"
    closedform.write_diagnostic_csv(p, tc, {1: 0.5}, 1e-9)
    rows = p.read_text().splitlines()
    assert rows[0] == "kind,key,value,limit,ok"
    assert sum(r.startswith("k1_self") for r in rows) == 2

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import chisquare

from hierkg.decoder import DecoderConfig
from hierkg.hidr import EdgeArrays, RelClass, lift
from hierkg.hisl import (EncoderConfig, build_view, encode, init_fact_nodes, init_relation_nodes, inter_fact_pass,
                         intra_fact_pass, register_encoder_params, relation_gates, sample_neighbors, time2vec)
from hierkg.kg import dataset_from_labels
from hierkg.numeric import ParamStore, Tensor
from hierkg.train import Model


def corr(a, b):
    d = len(a)
    return np.array([sum(a[i] * b[(i + k) % d] for i in range(d)) for k in range(d)])


def leaky(x, s):
    return np.where(x > 0, x, s * x)


def setup_encoder(ds, **kw):
    cfg = EncoderConfig(d=8, intra_heads=2, **kw)
    view = build_view(lift(ds))
    store = ParamStore()
    register_encoder_params(store, cfg, view.n_entities, view.n_relation_rows, np.random.default_rng(0),
                            n_fact_rows=view.hidr.n_fact_nodes)
    return cfg, view, store


# -- initialisation ----------------------------------------------------------
def test_relation_nodes_identity_zero_and_oracle(rng):
    E = rng.normal(size=(4, 6))
    assert_allclose(init_relation_nodes(E, np.eye(6)).data, E)
    assert np.all(init_relation_nodes(E, np.zeros((6, 6))).data == 0)
    W = rng.normal(size=(6, 6))
    ref = np.array([[sum(E[i, k] * W[k, j] for k in range(6)) for j in range(6)] for i in range(4)])
    assert np.max(np.abs(init_relation_nodes(E, W).data - ref)) < 1e-12
    with pytest.raises(ValueError):
        init_relation_nodes(E, np.eye(5))


def test_fact_nodes_block_identity_constant_and_oracle(rng):
    d = 5
    h, r, t = (rng.normal(size=(3, d)) for _ in range(3))
    W = np.zeros((3 * d, d))
    W[:d] = np.eye(d)
    assert_allclose(init_fact_nodes(h, r, t, W, np.zeros(d)).data, h)
    c = rng.normal(size=d)
    assert_allclose(init_fact_nodes(h, r, t, np.zeros((3 * d, d)), c).data, np.tile(c, (3, 1)))
    W, b = rng.normal(size=(3 * d, d)), rng.normal(size=d)
    ref = np.stack([np.concatenate([h[i], r[i], t[i]]) @ W + b for i in range(3)])
    assert np.max(np.abs(init_fact_nodes(h, r, t, W, b).data - ref)) < 1e-12


def test_time2vec_cases(rng):
    d = 4
    w_p, b_p, w_np, b_np = rng.normal(size=(1, d)), rng.normal(size=d), rng.normal(size=(1, d)), rng.normal(size=d)
    tau = np.array([0.0, 0.5, 1.0])
    out = time2vec(tau, np.zeros(1), w_p, b_p, w_np, b_np).data
    assert_allclose(out, tau[:, None] * w_np + b_np, atol=1e-15)
    out = time2vec(tau, np.ones(1), np.zeros((1, d)), np.zeros(d), w_np, b_np).data
    assert_allclose(out, tau[:, None] * w_np + b_np, atol=1e-15)
    omega = 0.7
    expected = omega * np.sin(0.5 * w_p[0] + b_p) + 0.5 * w_np[0] + b_np
    assert np.max(np.abs(time2vec([0.5], np.array([omega]), w_p, b_p, w_np, b_np).data[0] - expected)) < 1e-12


# -- intra-fact attention ----------------------------------------------------
def test_intra_identical_neighbours_split_evenly(rng):
    d = 4
    H = np.vstack([np.ones(d), np.ones(d), rng.normal(size=d)])
    _, alpha = intra_fact_pass(H, rng.normal(size=(d, d)), rng.normal(size=(d, d)), rng.normal(size=d),
                               np.array([2, 2]), np.array([0, 1]), heads=2, return_attention=True)
    assert_allclose(alpha, 0.5, atol=1e-15)


def test_intra_single_neighbour(rng):
    H = rng.normal(size=(2, 4))
    _, alpha = intra_fact_pass(H, rng.normal(size=(4, 4)), rng.normal(size=(4, 4)), rng.normal(size=4),
                               np.array([1]), np.array([0]), heads=1, return_attention=True)
    assert_allclose(alpha, 1.0)


def test_intra_matches_dense_oracle(rng):
    d, heads, slope = 6, 2, 0.2
    dh = d // heads
    H = rng.normal(size=(4, d))
    W_in, W_out, W = rng.normal(size=(d, d)), rng.normal(size=(d, d)), rng.normal(size=d)
    center, member = np.array([3, 3, 3]), np.array([0, 1, 2])
    out, alpha = intra_fact_pass(H, W_in, W_out, W, center, member, heads, slope, return_attention=True)

    ref = H.copy()
    a_c = H[3] @ W_in
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        z = np.array([W[sl] @ leaky(a_c[sl] + (H[j] @ W_out)[sl], slope) for j in range(3)])
        p = np.exp(z - z.max())
        p /= p.sum()
        assert_allclose(alpha[:, hd], p, atol=1e-12)
        ref[3, sl] += sum(p[j] * (H[j] @ W_out)[sl] for j in range(3))
    for j in range(3):
        ref[j] += H[3] @ W_out
    assert np.max(np.abs(out.data - ref)) < 1e-10
    assert not np.allclose(out.data, ref - H)


def test_intra_attention_rows_sum_to_one(hkg):
    cfg, view, store = setup_encoder(hkg, layers=1)
    state = encode(view, store, cfg, keep_attention=True)
    att = state.attention[0]
    sums = np.zeros((view.n_nodes, att.shape[1]))
    np.add.at(sums, view.star_center, att)
    assert_allclose(sums[np.unique(view.star_center)], 1.0, atol=1e-9)


# -- inter-fact aggregation --------------------------------------------------
def _random_edges(rng, n, r, m):
    return (rng.integers(0, n, m), rng.integers(0, r, m), rng.integers(0, n, m), rng.integers(0, 3, m),
            rng.integers(0, 2, m))


def test_inter_matches_dense_oracle(rng):
    n, r, d = 5, 4, 6
    H, E = rng.normal(size=(n, d)), rng.normal(size=(r, d))
    Wf, Wr, Ws, Wrel = (rng.normal(size=(d, d)) for _ in range(4))
    omegas = [np.array([x]) for x in rng.normal(size=3)]
    gates = relation_gates([Tensor(o) for o in omegas])
    src, rel, dst, tau, lam = _random_edges(rng, n, r, 14)
    w = rng.uniform(0.2, 1.5, size=14)
    H1, E1 = inter_fact_pass(H, E, Wf, Wr, Ws, Wrel, gates, src, rel, dst, tau, lam, weights=w)

    sig = 1 / (1 + np.exp(-np.array([o[0] for o in omegas])))
    A = np.zeros((3, 2, n, n, r))
    for s, k, t, ty, dr, wk in zip(src, rel, dst, tau, lam, w):
        A[ty, dr, t, s, k] += wk
    msg = np.zeros((n, d))
    for ty in range(3):
        for dr, Wd in enumerate((Wf, Wr)):
            for i in range(n):
                for j in range(n):
                    for k in range(r):
                        if A[ty, dr, i, j, k]:
                            msg[i] += sig[ty] * A[ty, dr, i, j, k] * (corr(H[j], E[k]) @ Wd)
    assert np.max(np.abs(H1.data - np.tanh(msg + H @ Ws))) < 1e-10
    assert_allclose(E1.data, E @ Wrel, atol=1e-12)


def test_inter_isolated_node(rng):
    n, d = 3, 4
    H, E = rng.normal(size=(n, d)), rng.normal(size=(1, d))
    Ws = rng.normal(size=(d, d))
    eye = np.eye(d)
    H1, _ = inter_fact_pass(H, E, eye, eye, Ws, eye, relation_gates([], force_one=True),
                            np.array([0]), np.array([0]), np.array([1]), np.array([1]), np.array([0]))
    assert_allclose(H1.data[2], np.tanh(H[2] @ Ws), atol=1e-15)


def test_zero_omega_gives_half_gate():
    g = relation_gates([Tensor(np.zeros(1))] * 3)
    assert np.all(g.data == 0.5)


# -- sampling ----------------------------------------------------------------
def _star(deg):
    return EdgeArrays(np.arange(1, deg + 1), np.zeros(deg, np.int64), np.zeros(deg, np.int64),
                      np.zeros(deg, np.int64), np.zeros(deg, np.int64))


def test_sampling_below_cap_keeps_all():
    s = sample_neighbors(_star(3), 4, cap=3, rng=np.random.default_rng(0))
    assert list(s.index) == [0, 1, 2] and np.all(s.weight == 1)


def test_sampling_caps_and_is_seeded():
    e = _star(10)
    a = sample_neighbors(e, 11, 3, np.random.default_rng(4))
    b = sample_neighbors(e, 11, 3, np.random.default_rng(4))
    assert len(a.index) == 3 and np.array_equal(a.index, b.index)
    assert_allclose(a.weight, 10 / 3)


def test_sampling_is_uniform():
    e = _star(10)
    counts = np.zeros(10)
    for seed in range(2000):
        counts[sample_neighbors(e, 11, 3, np.random.default_rng(seed)).index] += 1
    assert chisquare(counts).pvalue > 0.01


# -- full encoder ------------------------------------------------------------
def test_zero_layers_returns_initialisation(hkg):
    cfg, view, store = setup_encoder(hkg, layers=0)
    st = encode(view, store, cfg)
    assert np.array_equal(st.H.data, st.H0.data)
    assert np.array_equal(st.E.data, store["E"].data)


def test_eval_deterministic_and_train_reproducible(htkg_small):
    cfg, view, store = setup_encoder(htkg_small)
    a, b = encode(view, store, cfg), encode(view, store, cfg)
    assert np.array_equal(a.H.data, b.H.data)
    t1 = encode(view, store, cfg, "train", np.random.default_rng(3))
    t2 = encode(view, store, cfg, "train", np.random.default_rng(3))
    assert np.array_equal(t1.H.data, t2.H.data)
    assert not np.array_equal(t1.H.data, a.H.data)
    with pytest.raises(ValueError):
        encode(view, store, cfg, "predict")


@pytest.fixture
def htkg_small():
    return dataset_from_labels("htkg", {"train": ([("a", "r", "b", (("k", "c"),), 2000, 2003),
                                                   ("b", "s", "c", (), 1990, 1991),
                                                   ("c", "r", "a", (("k", "b"),), 1995, 2001)], [])})


def _covering_dataset(n_facts, seed):
    ents = [f"e{i}" for i in range(12)]
    rels = [f"r{i}" for i in range(3)]
    rng = np.random.default_rng(seed)
    facts = [(ents[i], rels[i % 3], ents[(i + 1) % 12], (("q", ents[i]),), None, None) for i in range(12)]
    while len(facts) < n_facts:
        h, t = rng.choice(12, 2, replace=False)
        f = (ents[h], rels[rng.integers(3)], ents[t], (("q", ents[rng.integers(12)]),), None, None)
        if f not in facts:
            facts.append(f)
    return dataset_from_labels("hkg", {"train": (facts, [])})


def test_parameter_count_independent_of_fact_count():
    small, big = _covering_dataset(12, 0), _covering_dataset(120, 1)
    ms = Model(small, EncoderConfig(d=8, intra_heads=2), DecoderConfig(layers=1, heads=2))
    mb = Model(big, EncoderConfig(d=8, intra_heads=2), DecoderConfig(layers=1, heads=2))
    assert mb.graph.n_fact_nodes == 10 * ms.graph.n_fact_nodes
    assert ms.params.count() == mb.params.count()


def test_drop_mode_silences_nested_edges(nkg):
    cfg, view, store = setup_encoder(nkg, nested_gate_drop=True)
    nested_rows = np.unique(view.edges.rel[view.edges.tau == RelClass.NESTED])
    assert len(nested_rows) > 0
    before = encode(view, store, cfg).H.data
    store["E"].data[nested_rows] += 10.0
    after = encode(view, store, cfg).H.data
    assert np.array_equal(before, after)
    # without the drop the same perturbation is visible
    cfg.nested_gate_drop = False
    assert not np.array_equal(encode(view, store, cfg).H.data, after)

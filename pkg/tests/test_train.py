import numpy as np
import pytest

from hierkg.decoder import DecoderConfig
from hierkg.hisl import EncoderConfig
from hierkg.kg import SyntheticSpec, dataset_from_labels, generate_synthetic, merge_hybrid
from hierkg.train import (Model, RankingReport, TaskSpec, TrainConfig, build_queries, evaluate, fit, joint_train,
                          make_optimizer, metrics, rank, rank_rows, train_epoch, train_triple_prediction)
from hierkg.train.tasks import split_queries

try:
    from hypothesis import given, settings
    from hypothesis import strategies as st
except ImportError:  # pragma: no cover
    given = None


def sort_rank(scores, gold, filt):
    """Rank by sorting the surviving candidates; ties resolved by the midpoint of the tied block, rounded up."""
    alive = [i for i in range(len(scores)) if i == gold or i not in set(filt)]
    order = sorted(alive, key=lambda i: -scores[i])
    tied = [p + 1 for p, i in enumerate(order) if scores[i] == scores[gold]]
    lo, hi = tied[0], tied[-1]
    return lo + (hi - lo + 1) // 2


def small_model(ds, **enc):
    return Model(ds, EncoderConfig(d=8, intra_heads=2, **enc), DecoderConfig(heads=2, layers=1))


def tiny_cfg(**kw):
    base = dict(batch_size=64, lr=1e-2, epochs=1, patience=5)
    base.update(kw)
    return TrainConfig(**base)


# -- ranking -----------------------------------------------------------------
def test_unique_max_is_rank_one():
    assert rank(np.array([0.1, 0.9, 0.3]), 1) == 1


def test_ties_count_half_rounded_up():
    assert rank(np.array([1.0, 1.0, 1.0]), 0) == 2
    assert rank(np.array([1.0, 1.0]), 0) == 2
    assert rank(np.array([2.0, 1.0, 1.0, 1.0, 1.0]), 4) == 4


def test_rank_matches_sort_oracle(rng):
    for _ in range(300):
        n = int(rng.integers(1, 30))
        scores = rng.integers(0, 5, size=n).astype(float)
        gold = int(rng.integers(n))
        filt = list(rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False))
        assert rank(scores, gold, filt) == sort_rank(scores, gold, filt)
        assert rank_rows(scores[None], np.array([gold]), [filt])[0] == sort_rank(scores, gold, filt)


if given is not None:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=20), st.data())
    def test_rank_oracle_property(values, data):
        scores = np.array(values, dtype=float)
        gold = data.draw(st.integers(0, len(values) - 1))
        filt = data.draw(st.lists(st.integers(0, len(values) - 1), unique=True))
        assert rank(scores, gold, filt) == sort_rank(scores, gold, filt)


def test_metrics_example():
    m = metrics([1, 2, 10])
    assert m["mrr"] == pytest.approx((1 + 0.5 + 0.1) / 3)
    assert m["hits1"] == pytest.approx(1 / 3)
    assert m["hits3"] == pytest.approx(2 / 3)
    assert m["hits10"] == 1.0
    assert m["mr"] == pytest.approx(13 / 3)


def test_distractor_below_gold_changes_nothing(rng):
    scores = rng.normal(size=20)
    gold = int(np.argsort(scores)[10])
    with_extra = np.append(scores, scores.min() - 1)
    assert rank(scores, gold) == rank(with_extra, gold)


def test_report_json_and_csv():
    rep = RankingReport(task="hkg", filter_mode="strict", ranks={"subject/object": [1, 3]})
    doc = rep.to_dict()
    assert set(doc) == {"task", "filter_mode", "categories"}
    assert doc["categories"]["subject/object"]["n"] == 2
    assert rep.to_csv().splitlines()[0].startswith("task,filter_mode,category")
    assert rep.ranks_text("subject/object") == "1\n3\n"


# -- queries and filters -----------------------------------------------------
def test_triple_fact_gives_two_queries():
    ds = dataset_from_labels("triple", {"train": ([("a", "r", "b", (), None, None)], []),
                                        "test": ([("b", "r", "a", (), None, None)], [])})
    qs, _ = build_queries(ds, Model(ds, EncoderConfig(d=8, intra_heads=2), DecoderConfig(heads=2)).graph,
                          TaskSpec.for_flavor("triple"))
    assert len(qs) == 2


def test_hfact_with_two_qualifiers_gives_four_entity_queries(hkg):
    m = small_model(hkg)
    f = hkg.train.facts[2]
    qs, _ = build_queries(hkg, m.graph, TaskSpec("hkg", "all"), facts=[f])
    assert len(qs) == 4
    assert [q.category for q in qs] == ["head", "tail", "value", "value"]


def test_strict_filter_shares_tails():
    train = [("h", "r", "t1", (("k", "v"),), None, None), ("h", "r", "t2", (("k", "v"),), None, None),
             ("h", "r", "t3", (("k", "w"),), None, None)]
    ds = dataset_from_labels("hkg", {"train": (train, [])})
    m = small_model(ds)
    qs, index = build_queries(ds, m.graph, TaskSpec("hkg", "so"), split="train")
    tails = [q for q in qs if q.category == "tail"]
    ent = ds.entities.index
    assert index.known(tails[0]) == {("e", ent("t1")), ("e", ent("t2"))}
    assert tails[0].gold_token in index.known(tails[0])
    # the loose filter only looks at the main triple
    _, loose = build_queries(ds, m.graph, TaskSpec("hkg", "so"), split="train", filter_mode="loose")
    assert len(loose.known(tails[0])) == 3


def test_task_flavor_mismatch(hkg):
    with pytest.raises(ValueError):
        TaskSpec("tkg").check(hkg)


# -- evaluation --------------------------------------------------------------
def _oracle_scores(model, sign):
    def score(queries, state, chunk=512):
        out = []
        for q in queries:
            s = np.zeros(model.table.candidate_count(q.space))
            s[model.table.gold_index(q)] = sign
            out.append(s)
        return out
    return score


def test_perfect_and_anti_oracle(monkeypatch):
    ds = generate_synthetic(SyntheticSpec(n_entities=90, n_relations=6, n_facts=300))
    m = small_model(ds)
    task = TaskSpec("hkg", "all")
    monkeypatch.setattr(m, "score", _oracle_scores(m, 1.0))
    rep = evaluate(m, ds, task, "test")
    assert rep.metric("all entities") == 1.0 and rep.metric("all entities", "mr") == 1.0
    monkeypatch.setattr(m, "score", _oracle_scores(m, -1.0))
    rep = evaluate(m, ds, task, "test")
    assert rep.metric("all entities", "hits10") == 0.0


def test_evaluate_twice_is_identical(hkg):
    m = small_model(hkg)
    task = TaskSpec("hkg", "all")
    assert evaluate(m, hkg, task).to_json() == evaluate(m, hkg, task).to_json()


def test_so_task_has_no_all_entities_bucket(hkg):
    rep = evaluate(small_model(hkg), hkg, TaskSpec("hkg", "so"))
    assert set(rep.ranks) == {"subject/object"}


# -- training ----------------------------------------------------------------
def test_default_config_values():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.lr, cfg.weight_decay) == (2048, 5e-4, 0.01)
    with pytest.raises(ValueError):
        TrainConfig(nested_gate_mode="zero")


def test_empty_train_set(hkg):
    m = small_model(hkg)
    with pytest.raises(ValueError):
        train_epoch(m, [], make_optimizer(m, TrainConfig()), TrainConfig(), 0)


def test_one_fact_is_one_step():
    ds = dataset_from_labels("triple", {"train": ([("a", "r", "b", (), None, None)], [])})
    m = small_model(ds)
    cfg = TrainConfig()
    opt = make_optimizer(m, cfg)
    calls = []
    step = opt.step
    opt.step = lambda: (calls.append(1), step())
    queries = split_queries(ds, m.graph, TaskSpec.for_flavor("triple"), "train")
    loss = train_epoch(m, queries, opt, cfg, 0)
    assert len(calls) == 1 and np.isfinite(loss)


def test_fit_reduces_training_loss(hkg):
    m = small_model(hkg)
    res = fit(m, hkg, TaskSpec("hkg", "all"), tiny_cfg(epochs=15, patience=100))
    losses = [row["loss"] for row in res.history]
    assert losses[-1] < losses[0]
    assert 0 <= res.best_epoch < 15


def test_triple_prediction_freezes_entities_and_gate(nkg):
    m = small_model(nkg)
    m.params["inter0.omega_nested"].data[:] = 0.7
    before = m.params["H_a"].data.copy()
    cfg = tiny_cfg(epochs=2, freeze_entities=True, nested_gate_mode="frozen-zero")
    train_triple_prediction(m, nkg, cfg)
    assert np.array_equal(m.params["H_a"].data, before)
    for l in range(m.enc.layers):
        assert np.all(m.params[f"inter{l}.omega_nested"].data == 0)


def test_triple_prediction_needs_base(nkg):
    with pytest.raises(ValueError):
        train_triple_prediction(small_model(nkg), nkg, tiny_cfg(), base_loaded=False)


def test_multitask_shares_one_graph(nkg, monkeypatch):
    import hierkg.train.loop as loop
    m = small_model(nkg)
    graphs = []
    real = loop.split_queries

    def spy(ds, g, task, split, facts=None):
        graphs.append(g)
        return real(ds, g, task, split, facts)

    monkeypatch.setattr(loop, "split_queries", spy)
    res = joint_train(m, nkg, tiny_cfg(joint_mode="multitask"))
    assert graphs and all(g is m.graph for g in graphs)
    assert len(res.history) == 1


def test_hybrid_shares_rows_and_reports_per_source():
    a = generate_synthetic(SyntheticSpec(flavor="hkg", n_entities=60, n_relations=5, n_facts=150, seed=1))
    b = generate_synthetic(SyntheticSpec(flavor="tkg", n_entities=60, n_relations=5, n_facts=150, seed=2))
    res = merge_hybrid(a, b, ("w", "t"))
    ds = res.dataset
    shared = set(a.entities.labels) & set(b.entities.labels)
    assert shared
    assert len(ds.entities.labels) == len(set(a.entities.labels) | set(b.entities.labels))
    m = small_model(ds)
    assert m.params["H_a"].data.shape[0] == len(ds.entities.labels)
    joint_train(m, ds, tiny_cfg(joint_mode="hybrid"))
    reports = {name: evaluate(m, ds, TaskSpec("hybrid"), facts=res.source_test(name)) for name in ("w", "t")}
    assert all(r.ranks for r in reports.values())

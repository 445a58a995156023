"""Training loops and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..hisl.encoder import TYPE_NAMES
from ..hisl.graph import sample_neighbors
from ..kg.model import Fact, SourceDataset
from ..numeric import AdamW, no_grad
from .model import Model
from .ranking import RankingReport, rank_rows
from .tasks import CATEGORY_ROLES, TaskSpec, build_queries, split_queries

log = logging.getLogger(__name__)

NESTED_GATE_MODES = ("frozen-zero", "drop", "learn")
JOINT_MODES = ("none", "multitask", "hybrid")


@dataclass
class TrainConfig:
    batch_size: int = 2048
    lr: float = 5e-4
    weight_decay: float = 0.01
    epochs: int = 200
    entity_smoothing: float = 0.2
    relation_smoothing: float = 0.1
    seed: int = 0
    freeze_entities: bool = False
    nested_gate_mode: str = "frozen-zero"
    joint_mode: str = "none"
    patience: int = 10
    eval_every: int = 1
    filter_mode: str = "strict"
    # stop once validation MRR reaches this value (None: run to patience or epochs)
    target_mrr: float | None = None
    # wall-clock limit in seconds, checked after each epoch
    time_budget: float | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.nested_gate_mode not in NESTED_GATE_MODES:
            raise ValueError(f"nested_gate_mode must be one of {NESTED_GATE_MODES}")
        if self.joint_mode not in JOINT_MODES:
            raise ValueError(f"joint_mode must be one of {JOINT_MODES}")
        for name in ("entity_smoothing", "relation_smoothing"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_mrr: float = float("-inf")
    seconds: float = 0.0


def make_optimizer(model: Model, cfg: TrainConfig) -> AdamW:
    return AdamW(model.params, lr=cfg.lr, weight_decay=cfg.weight_decay)


def batches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[s:s + size] for s in range(0, n, size)]


def train_step(model: Model, queries: list, opt: AdamW, cfg: TrainConfig, rng: np.random.Generator) -> float:
    sampled = sample_neighbors(model.view.edges, model.view.n_nodes, model.enc.neighbor_cap, rng)
    state = model.encode("train", rng, sampled)
    loss = model.loss(queries, state, cfg.entity_smoothing, cfg.relation_smoothing, training=True, rng=rng)
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} on a batch of {len(queries)} queries")
    loss.backward()
    opt.step()
    opt.zero_grad()
    return value


def epoch_rng(cfg: TrainConfig, epoch: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, epoch, stream])


def train_epoch(model: Model, queries: list, opt: AdamW, cfg: TrainConfig, epoch: int) -> float:
    """One shuffled pass; returns the query-weighted mean loss."""
    if not queries:
        raise ValueError("no training queries")
    rng = epoch_rng(cfg, epoch)
    total = 0.0
    for idx in batches(len(queries), cfg.batch_size, rng):
        total += train_step(model, [queries[i] for i in idx], opt, cfg, rng) * len(idx)
    return total / len(queries)


def train_epoch_interleaved(model: Model, streams: list[list], opt: AdamW, cfg: TrainConfig, epoch: int) -> float:
    """Alternate batches drawn from several query lists (multi-task training)."""
    rng = epoch_rng(cfg, epoch)
    plans = [[[s[i] for i in idx] for idx in batches(len(s), cfg.batch_size, rng)] for s in streams if s]
    if not plans:
        raise ValueError("no training queries")
    total, count = 0.0, 0
    for k in range(max(len(p) for p in plans)):
        for p in plans:
            if k < len(p):
                total += train_step(model, p[k], opt, cfg, rng) * len(p[k])
                count += len(p[k])
    return total / count


def evaluate(model: Model, ds: SourceDataset, task: TaskSpec, split: str = "test", filter_mode: str = "strict",
             facts: Iterable[Fact] | None = None, state=None) -> RankingReport:
    """Filtered ranks of every query of ``split`` (or of ``facts``), grouped by category."""
    queries, index = build_queries(ds, model.graph, task, split, filter_mode, facts)
    if state is None:
        with no_grad():
            state = model.encode("eval")
    scores = model.score(queries, state)
    ranks = np.zeros(len(queries), dtype=np.int64)
    by_space: dict[str, list[int]] = {}
    for i, q in enumerate(queries):
        by_space.setdefault(q.space, []).append(i)
    table = model.table
    for space, idx in by_space.items():
        golds, filters = [], []
        for i in idx:
            q = queries[i]
            golds.append(table.gold_index(q))
            known = []
            for tok in index.known(q):
                probe = type(q)(tuple(tok if j == q.mask else t for j, t in enumerate(q.tokens)), q.mask, q.space)
                try:
                    known.append(table.gold_index(probe))
                except KeyError:
                    pass
            filters.append(known)
        ranks[idx] = rank_rows(np.stack([scores[i] for i in idx]), np.array(golds), filters)
    report = RankingReport(task=task.kind, filter_mode=filter_mode)
    for name, roles in CATEGORY_ROLES.items():
        if name == "all entities" and task.mask_roles != "all":
            continue
        sel = [int(ranks[i]) for i, q in enumerate(queries) if q.category in roles]
        if sel:
            report.ranks[name] = sel
    return report


def headline(report: RankingReport) -> float:
    """MRR used for model selection: all entities, else subject/object, else triple prediction."""
    for name in ("all entities", "subject/object", "triple prediction"):
        if name in report.ranks:
            return report.metric(name)
    raise ValueError("empty report")


def fit(model: Model, ds: SourceDataset, task: TaskSpec, cfg: TrainConfig,
        opt: AdamW | None = None, streams: list[list] | None = None,
        eval_tasks: list[TaskSpec] | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train with early stopping on validation MRR; the best parameters are restored at the end."""
    task.check(ds)
    opt = opt or make_optimizer(model, cfg)
    if streams is None:
        streams = [split_queries(ds, model.graph, task, "train") + split_queries(ds, model.graph, task, "extra")]
    if not any(streams):
        raise ValueError("empty training set")
    eval_tasks = eval_tasks or [task]
    has_valid = any(split_queries(ds, model.graph, t, "valid") for t in eval_tasks)
    result = TrainResult()
    best_state = model.params.state()
    stale = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        if len(streams) == 1:
            loss = train_epoch(model, streams[0], opt, cfg, epoch)
        else:
            loss = train_epoch_interleaved(model, streams, opt, cfg, epoch)
        row = {"epoch": epoch, "loss": loss}
        if has_valid and (epoch + 1) % cfg.eval_every == 0:
            with no_grad():
                state = model.encode("eval")
            mrrs = [headline(evaluate(model, ds, t, "valid", cfg.filter_mode, state=state))
                    for t in eval_tasks if split_queries(ds, model.graph, t, "valid")]
            mrr = float(np.mean(mrrs))
            row["valid_mrr"] = mrr
            if mrr > result.best_mrr:
                result.best_mrr, result.best_epoch = mrr, epoch
                best_state = model.params.state()
                stale = 0
            else:
                stale += 1
        result.history.append(row)
        log.info("epoch %d loss %.5f valid mrr %s", epoch, loss, row.get("valid_mrr"))
        if on_epoch is not None:
            on_epoch(row)
        if cfg.target_mrr is not None and row.get("valid_mrr", -1.0) >= cfg.target_mrr:
            break
        if has_valid and stale >= cfg.patience:
            break
        if cfg.time_budget is not None and time.perf_counter() - start >= cfg.time_budget:
            log.info("time budget of %.0f s reached after epoch %d", cfg.time_budget, epoch)
            break
    if has_valid:
        model.params.load_state(best_state)
    else:
        result.best_epoch = len(result.history) - 1
    result.seconds = time.perf_counter() - start
    return result


def apply_nested_gate_mode(model: Model, opt: AdamW, mode: str) -> None:
    """``frozen-zero``: omega_nested = 0 and frozen (gate 0.5); ``drop``: gate forced to 0."""
    if mode == "frozen-zero":
        for l in range(model.enc.layers):
            name = f"inter{l}.omega_{TYPE_NAMES[2]}"
            model.params[name].data = np.zeros_like(model.params[name].data)
            opt.freeze(name)
    elif mode == "drop":
        model.enc.nested_gate_drop = True


def train_triple_prediction(model: Model, ds: SourceDataset, cfg: TrainConfig, base_loaded: bool = True,
                            on_epoch=None) -> TrainResult:
    """Second stage on nested facts with the atomic entity table held fixed."""
    if not base_loaded:
        raise ValueError("triple prediction starts from a base link-prediction checkpoint")
    opt = make_optimizer(model, cfg)
    if cfg.freeze_entities:
        opt.freeze("H_a")
        if "H_f" in model.params:
            opt.freeze("H_f")
    apply_nested_gate_mode(model, opt, cfg.nested_gate_mode)
    return fit(model, ds, TaskSpec(kind="triple"), cfg, opt=opt, on_epoch=on_epoch)


def joint_train(model: Model, ds: SourceDataset, cfg: TrainConfig, on_epoch=None) -> TrainResult:
    """``multitask``: alternate base and triple-prediction batches over one graph.
    ``hybrid``: one merged dataset trained with mixed batches."""
    if cfg.joint_mode == "multitask":
        base, triple = TaskSpec.for_flavor(ds.flavor), TaskSpec(kind="triple")
        base.check(ds)
        triple.check(ds)
        streams = [split_queries(ds, model.graph, base, "train") + split_queries(ds, model.graph, base, "extra"),
                   split_queries(ds, model.graph, triple, "train")]
        opt = make_optimizer(model, cfg)
        if cfg.nested_gate_mode == "drop":
            apply_nested_gate_mode(model, opt, "drop")
        return fit(model, ds, base, cfg, opt=opt, streams=streams, eval_tasks=[base, triple], on_epoch=on_epoch)
    if cfg.joint_mode == "hybrid":
        return fit(model, ds, TaskSpec(kind="hybrid"), cfg, on_epoch=on_epoch)
    raise ValueError("joint_train needs joint_mode 'multitask' or 'hybrid'")

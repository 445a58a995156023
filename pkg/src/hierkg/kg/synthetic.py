"""Seeded synthetic datasets with a planted deterministic rule.

Every flavor uses a Latin-square rule: entities are split into roles and
the answer entity is ``T[(sigma(x) + pi(y)) mod n]`` for two driving
symbols ``x`` and ``y``.  Any two of the three role entities determine the
third, so every entity slot of a held-out fact is predictable from training
facts that share its key.

* triple: key ``(head, relation)``.
* hkg / htkg: key ``(head, rule value)``; the rule value is carried by the
  qualifier ``k_rule``, an auxiliary qualifier ``k_aux`` holds a value that
  depends on the head only.  Each key is repeated under several main
  relations so a held-out fact's key is usually seen during training.
* tkg: key ``(head, begin bucket)`` with the relation shifting the square.
* nkg: atomic triples as in the triple flavor; a nested relation ``imply``
  links ``(h, r1, t)`` to ``(h, r2, t)`` for a fixed relation pairing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .io import dataset_from_labels
from .model import DatasetError, Flavor, SourceDataset


@dataclass
class SyntheticSpec:
    flavor: str = "hkg"
    n_entities: int = 500
    n_relations: int = 20
    n_facts: int = 5000
    rule: str = "latin"
    seed: int = 0
    # htkg/tkg: timestamps are drawn from [time_start, time_start + n_times)
    time_start: int = 1900
    n_times: int = 100
    bucket: int = 10
    # nkg: fraction of atomic facts that receive an implied partner
    nested_fraction: float = 0.3
    prefix: str = ""

    @classmethod
    def from_json(cls, text_or_path: str | Path) -> "SyntheticSpec":
        p = Path(text_or_path)
        text = p.read_text(encoding="utf-8") if p.exists() else str(text_or_path)
        obj = json.loads(text)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _roles(spec: SyntheticSpec, rng: np.random.Generator, k: int) -> list[list[str]]:
    n = spec.n_entities // k
    if n < 2:
        raise DatasetError(f"{spec.n_entities} entities give {n} per role; the rule needs at least 2")
    labels = [f"{spec.prefix}e{i}" for i in range(spec.n_entities)]
    order = rng.permutation(spec.n_entities)
    return [[labels[order[j * n + i]] for i in range(n)] for j in range(k)]


def _split(facts: list, rng: np.random.Generator, key_of=None) -> dict[str, list]:
    """80/10/10 split; held-out facts whose key or symbols are unseen in train move to train."""
    order = rng.permutation(len(facts))
    n_hold = len(facts) // 10
    valid_i, test_i, train_i = order[:n_hold], order[n_hold:2 * n_hold], order[2 * n_hold:]
    train = [facts[i] for i in sorted(train_i)]
    ents, rels, keys = set(), set(), set()

    def note(f) -> None:
        ents.update((f[0], f[2]))
        rels.add(f[1])
        for k, v in f[3]:
            rels.add(k)
            ents.add(v)
        if key_of is not None:
            keys.add(key_of(f))

    for f in train:
        note(f)
    out = {"valid": [], "test": []}
    for name, idx in (("valid", valid_i), ("test", test_i)):
        for i in sorted(idx):
            f = facts[i]
            ok = {f[0], f[2], *(v for _, v in f[3])} <= ents and {f[1], *(k for k, _ in f[3])} <= rels
            if key_of is not None:
                ok = ok and key_of(f) in keys
            if ok:
                out[name].append(f)
            else:
                train.append(f)
                note(f)
    out["train"] = train
    return out


def _hyper(spec: SyntheticSpec, rng: np.random.Generator, temporal: bool) -> SourceDataset:
    if spec.n_relations < 3:
        raise DatasetError("hyper-relational rule needs at least 3 relations (k_rule, k_aux, one main)")
    heads, values, tails = _roles(spec, rng, 3)
    n = len(heads)
    sigma, pi = rng.permutation(n), rng.permutation(n)
    aux = rng.integers(0, n, size=n)
    rels = [f"{spec.prefix}r{i}" for i in range(spec.n_relations)]
    k_rule, k_aux, mains = rels[0], rels[1], rels[2:]
    reps = min(len(mains), 5)
    n_keys = -(-spec.n_facts // reps)
    if n_keys > n * n:
        raise DatasetError(f"{spec.n_facts} facts need {n_keys} distinct keys but only {n * n} exist")
    flat = rng.choice(n * n, size=n_keys, replace=False)
    facts = []
    for key in flat:
        hi, vi = divmod(int(key), n)
        t = tails[(sigma[hi] + pi[vi]) % n]
        quals = ((k_rule, values[vi]), (k_aux, values[aux[hi]]))
        for r in rng.choice(len(mains), size=reps, replace=False):
            if len(facts) == spec.n_facts:
                break
            if temporal:
                begin = spec.time_start + int(rng.integers(spec.n_times))
                end = begin + int(rng.integers(0, 4))
                facts.append((heads[hi], mains[r], t, quals, begin, end))
            else:
                facts.append((heads[hi], mains[r], t, quals, None, None))
    splits = _split(facts, rng, key_of=lambda f: (f[0], f[3][0][1]))
    flavor = Flavor.HTKG if temporal else Flavor.HKG
    return dataset_from_labels(flavor, {s: (fs, []) for s, fs in splits.items()})


def _temporal(spec: SyntheticSpec, rng: np.random.Generator) -> SourceDataset:
    heads, tails = _roles(spec, rng, 2)
    n = len(heads)
    rels = [f"{spec.prefix}r{i}" for i in range(spec.n_relations)]
    sigma, rho = rng.permutation(n), rng.integers(0, n, size=len(rels))
    n_buckets = -(-spec.n_times // spec.bucket)
    beta = rng.integers(0, n, size=n_buckets)
    seen, facts = set(), []
    limit = 50 * spec.n_facts
    while len(facts) < spec.n_facts and limit:
        limit -= 1
        hi, ri = int(rng.integers(n)), int(rng.integers(len(rels)))
        offset = int(rng.integers(spec.n_times))
        begin = spec.time_start + offset
        t = tails[(sigma[hi] + rho[ri] + beta[offset // spec.bucket]) % n]
        end = begin + int(rng.integers(0, 3))
        f = (heads[hi], rels[ri], t, (), begin, end)
        if f not in seen:
            seen.add(f)
            facts.append(f)
    if len(facts) < spec.n_facts:
        raise DatasetError("could not draw enough distinct temporal facts; enlarge the vocabularies")
    splits = _split(facts, rng)
    return dataset_from_labels(Flavor.TKG, {s: (fs, []) for s, fs in splits.items()})


def _triples(spec: SyntheticSpec, rng: np.random.Generator, n_facts: int, rels: list[str],
             paired: bool = False):
    heads, tails = _roles(spec, rng, 2)
    n = len(heads)
    sigma, rho = rng.permutation(n), rng.integers(0, n, size=len(rels))
    if paired:
        # r_{2i+1} shares the square of r_{2i}, so implied triples obey the rule too
        rho[1::2] = rho[0::2][:len(rho[1::2])]
    if n_facts > n * len(rels):
        raise DatasetError(f"{n_facts} facts exceed the {n * len(rels)} distinct (head, relation) keys")
    keys = rng.choice(n * len(rels), size=n_facts, replace=False)
    out = []
    for key in keys:
        hi, ri = divmod(int(key), len(rels))
        out.append((heads[hi], rels[ri], tails[(sigma[hi] + rho[ri]) % n], (), None, None))
    return out, heads, tails, sigma, rho


def _plain(spec: SyntheticSpec, rng: np.random.Generator) -> SourceDataset:
    rels = [f"{spec.prefix}r{i}" for i in range(spec.n_relations)]
    facts, *_ = _triples(spec, rng, spec.n_facts, rels)
    splits = _split(facts, rng)
    return dataset_from_labels(Flavor.TRIPLE, {s: (fs, []) for s, fs in splits.items()})


def _nested(spec: SyntheticSpec, rng: np.random.Generator) -> SourceDataset:
    if spec.n_relations < 2:
        raise DatasetError("nested rule needs at least 2 relations")
    rels = [f"{spec.prefix}r{i}" for i in range(spec.n_relations)]
    # relations r_{2i} imply r_{2i+1}; the implied triple shares head and tail
    sources = rels[0::2][:len(rels) // 2]
    implied = {sources[i]: rels[2 * i + 1] for i in range(len(sources))}
    n_nested = int(round(spec.nested_fraction * spec.n_facts / 2))
    n_base = spec.n_facts - n_nested
    base, *_ = _triples(spec, rng, n_base, rels, paired=True)
    mains = {f[:3] for f in base}
    candidates = [f for f in base if f[1] in implied and (f[0], implied[f[1]], f[2]) not in mains]
    if n_nested > len(candidates):
        n_nested = len(candidates)
    chosen = [candidates[i] for i in sorted(rng.choice(len(candidates), size=n_nested, replace=False))]
    pairs = []
    for f in chosen:
        partner = (f[0], implied[f[1]], f[2], (), None, None)
        base.append(partner)
        pairs.append((f[:3], f"{spec.prefix}imply", partner[:3]))
    members = {p[0] for p in pairs} | {p[2] for p in pairs}
    pinned = [f for f in base if f[:3] in members]
    free = [f for f in base if f[:3] not in members]
    split = _split(free, rng)
    split["train"] = pinned + split["train"]
    order = rng.permutation(len(pairs))
    n_hold = len(pairs) // 10
    nested = {"valid": [pairs[i] for i in sorted(order[:n_hold])],
              "test": [pairs[i] for i in sorted(order[n_hold:2 * n_hold])],
              "train": [pairs[i] for i in sorted(order[2 * n_hold:])]}
    return dataset_from_labels(Flavor.NKG, {s: (split[s], nested[s]) for s in split})


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> SourceDataset:
    """Deterministic synthetic dataset for ``spec`` (``seed`` overrides ``spec.seed``)."""
    if spec.rule != "latin":
        raise ValueError(f"unknown rule {spec.rule!r}")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    flavor = Flavor.parse(spec.flavor)
    if flavor == Flavor.HKG:
        return _hyper(spec, rng, temporal=False)
    if flavor == Flavor.HTKG:
        return _hyper(spec, rng, temporal=True)
    if flavor == Flavor.TKG:
        return _temporal(spec, rng)
    if flavor == Flavor.NKG:
        return _nested(spec, rng)
    if flavor == Flavor.TRIPLE:
        return _plain(spec, rng)
    raise ValueError(f"no synthetic generator for flavor {flavor.value}")


def rule_tail(ds: SourceDataset, key_label: str = "r0") -> dict:
    """Map each rule key ``(head, rule value)`` to the set of tails seen with it (HKG/HTKG).

    The planted rule holds iff every set has exactly one element.
    """
    out: dict = {}
    k_rule = ds.relations.index(key_label)
    for f in ds.all_facts():
        v = next((v for k, v in f.qualifiers if k == k_rule), None)
        out.setdefault((f.head, v), set()).add(f.tail)
    return out


def random_dataset(flavor: str | Flavor, seed: int, max_facts: int = 1000) -> SourceDataset:
    """Unstructured random dataset for fuzzing (no planted rule).

    Sizes, qualifier counts, intervals, duplicate facts, nested facts and
    extra training triples are all drawn from ``seed``.
    """
    flavor = Flavor.parse(flavor)
    rng = np.random.default_rng(seed)
    n_facts = int(rng.integers(1, max_facts + 1))
    n_ent = int(rng.integers(2, 60))
    n_rel = int(rng.integers(1, 12))
    ent = [f"e{i}" for i in range(n_ent)]
    rel = [f"r{i}" for i in range(n_rel)]
    hyper = flavor in (Flavor.HKG, Flavor.HTKG)
    temporal = flavor in (Flavor.TKG, Flavor.HTKG)
    facts = []
    for _ in range(n_facts):
        h, t = ent[rng.integers(n_ent)], ent[rng.integers(n_ent)]
        r = rel[rng.integers(n_rel)]
        m = int(rng.integers(0, 4)) if hyper else 0
        quals = tuple((rel[rng.integers(n_rel)], ent[rng.integers(n_ent)]) for _ in range(m))
        if temporal:
            begin = 1800 + int(rng.integers(0, 200))
            facts.append((h, r, t, quals, begin, begin + int(rng.integers(0, 5))))
        else:
            facts.append((h, r, t, quals, None, None))
    facts = list(dict.fromkeys(facts))  # splits must stay disjoint
    split = _split(facts, rng)
    if rng.random() < 0.3:
        split["train"].append(split["train"][int(rng.integers(len(split["train"])))])  # duplicate fact
    nested: dict[str, list] = {"train": [], "valid": [], "test": []}
    if flavor == Flavor.NKG:
        pool = [f[:3] for f in split["train"]]
        seen: set[str] = set()
        for _ in range(int(rng.integers(0, len(pool) // 2 + 1))):
            s, o = pool[rng.integers(len(pool))], pool[rng.integers(len(pool))]
            nr = f"n{rng.integers(3)}"
            name = ("train", "valid", "test")[int(rng.integers(3))] if nr in seen else "train"
            seen.add(nr)
            nested[name].append((s, nr, o))
    extra = []
    if flavor in (Flavor.TRIPLE, Flavor.NKG) and rng.random() < 0.3:
        pool = split["train"]
        extra = [pool[rng.integers(len(pool))][:3] for _ in range(int(rng.integers(1, 10)))]
    return dataset_from_labels(flavor, {s: (split[s], nested[s]) for s in split}, extra)

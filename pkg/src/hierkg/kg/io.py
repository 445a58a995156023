"""Readers and writers for the on-disk dataset layouts.

A dataset is a directory holding one file per split::

    train.<ext>  valid.<ext>  test.<ext>      main facts
    train_nested.tsv ...                      nested facts (NKG only)
    extra_train.tsv                           optional extra training triples
    meta.json                                 optional {"flavor": ...}

``<ext>`` is ``tsv`` for triple/TKG/NKG files and ``jsonl`` for
HKG/HTKG/hybrid files (HKG also accepts comma-separated ``csv``/``txt``).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .model import SPLITS, DatasetError, Fact, Flavor, NestedFact, SourceDataset, Split, Vocab, check_dataset

_MAIN_EXT = {
    Flavor.TRIPLE: ("tsv", "txt"),
    Flavor.TKG: ("tsv", "txt"),
    Flavor.NKG: ("tsv", "txt"),
    Flavor.HKG: ("jsonl", "csv", "txt"),
    Flavor.HTKG: ("jsonl",),
    Flavor.HYBRID: ("jsonl",),
}


class _Builder:
    """Incrementally maps labels to ids; valid/test may not introduce symbols."""

    def __init__(self) -> None:
        self.entities = Vocab()
        self.relations = Vocab()
        self.nested = Vocab()
        self.timestamps = Vocab()
        self.frozen = False

    def _lookup(self, vocab: Vocab, label: str, what: str, where: str) -> int:
        if self.frozen:
            idx = vocab.get(label)
            if idx is None:
                raise DatasetError(f"{where}: unknown {what} {label!r} outside the training data")
            return idx
        return vocab.add(label)

    def entity(self, label: str, where: str) -> int:
        return self._lookup(self.entities, label, "entity", where)

    def relation(self, label: str, where: str) -> int:
        return self._lookup(self.relations, label, "relation", where)

    def nested_relation(self, label: str, where: str) -> int:
        return self._lookup(self.nested, label, "nested relation", where)

    def time(self, value) -> int:
        self.timestamps.add(value)
        return value


def _int(token, where: str) -> int:
    try:
        if isinstance(token, bool):
            raise ValueError
        if isinstance(token, int):
            return token
        return int(str(token).strip())
    except ValueError:
        raise DatasetError(f"{where}: timestamp {token!r} is not an integer") from None


def _interval(b, e, where: str, builder: _Builder) -> tuple[int, int]:
    begin, end = _int(b, where), _int(e, where)
    if begin > end:
        raise DatasetError(f"{where}: interval begins after it ends ({begin} > {end})")
    return builder.time(begin), builder.time(end)


def _lines(path: Path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def _parse_tsv_triple(line: str, where: str, b: _Builder) -> Fact:
    parts = line.split("\t")
    if len(parts) != 3:
        raise DatasetError(f"{where}: expected 3 tab-separated fields, got {len(parts)}")
    h, r, t = parts
    return Fact(b.entity(h, where), b.relation(r, where), b.entity(t, where))


def _parse_tkg(line: str, where: str, b: _Builder) -> Fact:
    parts = line.split("\t")
    if len(parts) != 5:
        raise DatasetError(f"{where}: expected 5 tab-separated fields, got {len(parts)}")
    h, r, t, tb, te = parts
    head, rel, tail = b.entity(h, where), b.relation(r, where), b.entity(t, where)
    begin, end = _interval(tb, te, where, b)
    return Fact(head, rel, tail, begin=begin, end=end)


def _parse_csv_hkg(line: str, where: str, b: _Builder) -> Fact:
    parts = line.split(",")
    if len(parts) < 3 or (len(parts) - 3) % 2:
        raise DatasetError(f"{where}: expected h,r,t followed by key,value pairs")
    h, r, t = parts[:3]
    head, rel, tail = b.entity(h, where), b.relation(r, where), b.entity(t, where)
    quals = tuple((b.relation(parts[i], where), b.entity(parts[i + 1], where))
                  for i in range(3, len(parts), 2))
    return Fact(head, rel, tail, quals)


def _parse_json_fact(line: str, where: str, b: _Builder, flavor: Flavor) -> Fact:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{where}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict) or "triple" not in obj:
        raise DatasetError(f"{where}: expected an object with a 'triple' field")
    triple = obj["triple"]
    if not isinstance(triple, list) or len(triple) != 3 or not all(isinstance(x, str) for x in triple):
        raise DatasetError(f"{where}: 'triple' must be a list of 3 strings")
    quals_raw = obj.get("qualifiers", [])
    if not isinstance(quals_raw, list):
        raise DatasetError(f"{where}: 'qualifiers' must be a list")
    h, r, t = triple
    head, rel, tail = b.entity(h, where), b.relation(r, where), b.entity(t, where)
    quals = []
    for pair in quals_raw:
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(x, str) for x in pair):
            raise DatasetError(f"{where}: each qualifier must be a [key, value] pair of strings")
        quals.append((b.relation(pair[0], where), b.entity(pair[1], where)))
    has_time = "begin" in obj or "end" in obj
    if flavor == Flavor.HTKG and not has_time:
        raise DatasetError(f"{where}: hyper-relational temporal facts need 'begin' and 'end'")
    if flavor == Flavor.HKG and has_time:
        raise DatasetError(f"{where}: unexpected timestamps in a hyper-relational file")
    if has_time:
        if "begin" not in obj or "end" not in obj:
            raise DatasetError(f"{where}: 'begin' and 'end' must be given together")
        begin, end = _interval(obj["begin"], obj["end"], where, b)
        return Fact(head, rel, tail, tuple(quals), begin, end)
    return Fact(head, rel, tail, tuple(quals))


def _parse_nested(line: str, where: str, b: _Builder) -> NestedFact:
    parts = line.split("\t")
    if len(parts) != 7:
        raise DatasetError(f"{where}: expected 7 tab-separated fields, got {len(parts)}")
    h1, r1, t1, nr, h2, r2, t2 = parts
    subj = (b.entity(h1, where), b.relation(r1, where), b.entity(t1, where))
    rel = b.nested_relation(nr, where)
    obj = (b.entity(h2, where), b.relation(r2, where), b.entity(t2, where))
    return NestedFact(subj, rel, obj)


def _find(root: Path, stem: str, exts: tuple[str, ...]) -> Path | None:
    for ext in exts:
        p = root / f"{stem}.{ext}"
        if p.exists():
            return p
    return None


def _read_main(path: Path, flavor: Flavor, b: _Builder) -> list[Fact]:
    facts = []
    for lineno, line in _lines(path):
        where = f"{path}:{lineno}"
        if flavor in (Flavor.TRIPLE, Flavor.NKG):
            facts.append(_parse_tsv_triple(line, where, b))
        elif flavor == Flavor.TKG:
            facts.append(_parse_tkg(line, where, b))
        elif flavor == Flavor.HKG and path.suffix in (".csv", ".txt"):
            facts.append(_parse_csv_hkg(line, where, b))
        else:
            facts.append(_parse_json_fact(line, where, b, flavor))
    return facts


def parse_dataset(path: str | Path, flavor: str | Flavor) -> SourceDataset:
    """Read a dataset directory.

    Vocabularies follow first appearance over train, then valid, then test;
    entities and relations first seen outside the training files are
    rejected.
    """
    flavor = Flavor.parse(flavor)
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a dataset directory")
    b = _Builder()
    splits: dict[str, Split] = {}
    extra: list[Fact] = []
    for name in SPLITS:
        if name != "train":
            b.frozen = True
        main = _find(root, name, _MAIN_EXT[flavor])
        if main is None:
            if name == "train":
                raise DatasetError(f"{root}: missing train file")
            facts: list[Fact] = []
        else:
            facts = _read_main(main, flavor, b)
        nested: list[NestedFact] = []
        if flavor in (Flavor.NKG, Flavor.HYBRID):
            npath = root / f"{name}_nested.tsv"
            if npath.exists():
                nested = [_parse_nested(line, f"{npath}:{i}", b) for i, line in _lines(npath)]
        if name == "train":
            epath = root / "extra_train.tsv"
            if epath.exists():
                extra = [_parse_tsv_triple(line, f"{epath}:{i}", b) for i, line in _lines(epath)]
        splits[name] = Split(tuple(facts), tuple(nested))
    if not splits["train"].facts:
        raise DatasetError(f"{root}: empty train split")
    ds = SourceDataset(flavor, splits["train"], splits["valid"], splits["test"],
                       b.entities, b.relations, b.nested, b.timestamps, tuple(extra))
    check_dataset(ds)
    return ds


# ----------------------------------------------------------------------
# writers


def format_fact(ds: SourceDataset, f: Fact) -> str:
    E, R = ds.entities.label, ds.relations.label
    if ds.flavor in (Flavor.TRIPLE, Flavor.NKG):
        return f"{E(f.head)}\t{R(f.relation)}\t{E(f.tail)}"
    if ds.flavor == Flavor.TKG:
        return f"{E(f.head)}\t{R(f.relation)}\t{E(f.tail)}\t{f.begin}\t{f.end}"
    obj: dict = {"triple": [E(f.head), R(f.relation), E(f.tail)],
                 "qualifiers": [[R(k), E(v)] for k, v in f.qualifiers]}
    if f.is_temporal:
        obj["begin"] = f.begin
        obj["end"] = f.end
    return json.dumps(obj, ensure_ascii=False)


def format_nested(ds: SourceDataset, nf: NestedFact) -> str:
    E, R = ds.entities.label, ds.relations.label
    (h1, r1, t1), (h2, r2, t2) = nf.subject, nf.object
    return "\t".join([E(h1), R(r1), E(t1), ds.nested_relations.label(nf.relation), E(h2), R(r2), E(t2)])


def write_dataset(ds: SourceDataset, path: str | Path) -> Path:
    """Write ``ds`` in the canonical layout; returns the directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    ext = _MAIN_EXT[ds.flavor][0]
    for name, split in ds.splits():
        with open(root / f"{name}.{ext}", "w", encoding="utf-8", newline="\n") as fh:
            for f in split.facts:
                fh.write(format_fact(ds, f) + "\n")
        if ds.flavor == Flavor.NKG or (ds.flavor == Flavor.HYBRID and split.nested):
            with open(root / f"{name}_nested.tsv", "w", encoding="utf-8", newline="\n") as fh:
                for nf in split.nested:
                    fh.write(format_nested(ds, nf) + "\n")
    if ds.extra_train:
        E, R = ds.entities.label, ds.relations.label
        with open(root / "extra_train.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for f in ds.extra_train:
                fh.write(f"{E(f.head)}\t{R(f.relation)}\t{E(f.tail)}\n")
    (root / "meta.json").write_text(json.dumps({"flavor": ds.flavor.value}) + "\n", encoding="utf-8")
    return root


def write_facts(ds: SourceDataset, facts: Iterable[Fact], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in facts:
            fh.write(format_fact(ds, f) + "\n")


def read_facts(ds: SourceDataset, path: str | Path) -> list[Fact]:
    """Parse a fact file against the (frozen) vocabularies of ``ds``."""
    b = _Builder()
    b.entities, b.relations, b.nested, b.timestamps = ds.entities, ds.relations, ds.nested_relations, Vocab(ds.timestamps)
    b.frozen = True
    return _read_main(Path(path), ds.flavor, b)


def read_flavor(path: str | Path) -> Flavor | None:
    meta = Path(path) / "meta.json"
    if not meta.exists():
        return None
    return Flavor.parse(json.loads(meta.read_text(encoding="utf-8"))["flavor"])


def load_dataset(path: str | Path, flavor: str | Flavor | None = None) -> SourceDataset:
    """:func:`parse_dataset` with the flavor taken from ``meta.json`` when omitted."""
    if flavor is None:
        flavor = read_flavor(path)
        if flavor is None:
            raise DatasetError(f"{path}: no meta.json; pass the flavor explicitly")
    return parse_dataset(path, flavor)


def canonical_text(ds: SourceDataset) -> str:
    """Deterministic text rendering of every split, used for byte-level comparisons."""
    out = [f"flavor\t{ds.flavor.value}"]
    for name, split in ds.splits():
        out.extend(f"{name}\t{format_fact(ds, f)}" for f in split.facts)
        out.extend(f"{name}_nested\t{format_nested(ds, nf)}" for nf in split.nested)
    E, R = ds.entities.label, ds.relations.label
    out.extend(f"extra\t{E(f.head)}\t{R(f.relation)}\t{E(f.tail)}" for f in ds.extra_train)
    out.append("entities\t" + "\t".join(map(str, ds.entities)))
    out.append("relations\t" + "\t".join(map(str, ds.relations)))
    out.append("nested_relations\t" + "\t".join(map(str, ds.nested_relations)))
    out.append("timestamps\t" + "\t".join(map(str, ds.timestamps)))
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------------
# label-level construction


LabelFact = tuple  # (head, relation, tail, ((key, value), ...), begin | None, end | None)
LabelNested = tuple  # ((h1, r1, t1), nested_relation, (h2, r2, t2))


def dataset_from_labels(flavor: str | Flavor, splits: dict[str, tuple[list, list]],
                        extra_train: Iterable[tuple[str, str, str]] = ()) -> SourceDataset:
    """Build a dataset from label tuples with parser-identical vocabulary order.

    ``splits`` maps split name to ``(facts, nested)`` label lists.  Ids are
    assigned exactly as :func:`parse_dataset` would assign them when reading
    the files written by :func:`write_dataset`.
    """
    flavor = Flavor.parse(flavor)
    b = _Builder()
    built: dict[str, Split] = {}
    extra: list[Fact] = []
    for name in SPLITS:
        if name != "train":
            b.frozen = True
        facts_l, nested_l = splits.get(name, ([], []))
        facts = []
        for i, lf in enumerate(facts_l):
            where = f"{name}[{i}]"
            h, r, t = lf[0], lf[1], lf[2]
            quals = lf[3] if len(lf) > 3 else ()
            head, rel, tail = b.entity(h, where), b.relation(r, where), b.entity(t, where)
            q = tuple((b.relation(k, where), b.entity(v, where)) for k, v in quals)
            if len(lf) > 4 and lf[4] is not None:
                begin, end = _interval(lf[4], lf[5], where, b)
                facts.append(Fact(head, rel, tail, q, begin, end))
            else:
                facts.append(Fact(head, rel, tail, q))
        nested = []
        for i, (s, nr, o) in enumerate(nested_l):
            where = f"{name}_nested[{i}]"
            subj = (b.entity(s[0], where), b.relation(s[1], where), b.entity(s[2], where))
            rel = b.nested_relation(nr, where)
            obj = (b.entity(o[0], where), b.relation(o[1], where), b.entity(o[2], where))
            nested.append(NestedFact(subj, rel, obj))
        if name == "train":
            for i, (h, r, t) in enumerate(extra_train):
                where = f"extra_train[{i}]"
                extra.append(Fact(b.entity(h, where), b.relation(r, where), b.entity(t, where)))
        built[name] = Split(tuple(facts), tuple(nested))
    ds = SourceDataset(flavor, built["train"], built["valid"], built["test"],
                       b.entities, b.relations, b.nested, b.timestamps, tuple(extra))
    check_dataset(ds)
    return ds


def fact_labels(ds: SourceDataset, f: Fact) -> LabelFact:
    E, R = ds.entities.label, ds.relations.label
    return (E(f.head), R(f.relation), E(f.tail), tuple((R(k), E(v)) for k, v in f.qualifiers),
            f.begin, f.end)


def nested_labels(ds: SourceDataset, nf: NestedFact) -> LabelNested:
    E, R = ds.entities.label, ds.relations.label
    s, o = nf.subject, nf.object
    return ((E(s[0]), R(s[1]), E(s[2])), ds.nested_relations.label(nf.relation),
            (E(o[0]), R(o[1]), E(o[2])))

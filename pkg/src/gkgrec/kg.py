"""Knowledge-graph and interaction storage.

File formats
------------
triples
    UTF-8 TSV, ``head_id<TAB>relation_id<TAB>tail_id`` per line.
entities / relations / items
    JSON-lines, ``{"id": int, "text": str}`` with dense ids ``0..n-1``.
item map
    JSON-lines, ``{"item": item_id, "entity": int}``.
interactions
    JSON-lines, ``{"user": str, "items": [item_id, ...]}`` most-recent-last.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

MIN_EVAL_HISTORY = 11


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class DanglingReferenceError(DataError):
    pass


@dataclass(frozen=True)
class Subgraph:
    entities: np.ndarray  # sorted entity ids
    triples: np.ndarray  # sorted triple indices


@dataclass
class KnowledgeGraph:
    entities: list[str]
    relations: list[str]
    heads: np.ndarray
    rels: np.ndarray
    tails: np.ndarray
    item_to_entity: dict[int, int] = field(default_factory=dict)
    # CSR adjacency, undirected: each triple appears under both endpoints
    # (once for a self-loop).
    indptr: np.ndarray = field(init=False, repr=False)
    nbr: np.ndarray = field(init=False, repr=False)
    nbr_rel: np.ndarray = field(init=False, repr=False)
    nbr_tri: np.ndarray = field(init=False, repr=False)
    _labels: np.ndarray | None = field(init=False, repr=False, default=None)
    _parts: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self.heads = np.ascontiguousarray(self.heads, dtype=np.int64)
        self.rels = np.ascontiguousarray(self.rels, dtype=np.int64)
        self.tails = np.ascontiguousarray(self.tails, dtype=np.int64)
        self._build_adjacency()
        for arr in (self.heads, self.rels, self.tails, self.indptr,
                    self.nbr, self.nbr_rel, self.nbr_tri):
            arr.flags.writeable = False

    def _build_adjacency(self):
        n = len(self.entities)
        tri = np.arange(len(self.heads), dtype=np.int64)
        loop = self.self_loops
        src = np.concatenate([self.heads, self.tails[~loop]])
        dst = np.concatenate([self.tails, self.heads[~loop]])
        tid = np.concatenate([tri, tri[~loop]])
        order = np.lexsort((tid, src))
        src, dst, tid = src[order], dst[order], tid[order]
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=self.indptr[1:])
        self.nbr = np.ascontiguousarray(dst)
        self.nbr_tri = np.ascontiguousarray(tid)
        self.nbr_rel = np.ascontiguousarray(self.rels[tid])

    @property
    def self_loops(self) -> np.ndarray:
        return self.heads == self.tails

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self.heads)

    def triple(self, i: int) -> tuple[int, int, int]:
        return int(self.heads[i]), int(self.rels[i]), int(self.tails[i])

    def triple_texts(self, i: int) -> tuple[str, str, str]:
        h, r, t = self.triple(i)
        return self.entities[h], self.relations[r], self.entities[t]

    def adjacency(self, entity: int) -> list[tuple[int, int, int]]:
        """Incident ``(relation, neighbor, triple index)`` for ``entity``."""
        lo, hi = self.indptr[entity], self.indptr[entity + 1]
        return [(int(r), int(v), int(t)) for r, v, t in
                zip(self.nbr_rel[lo:hi], self.nbr[lo:hi], self.nbr_tri[lo:hi])]

    def degree(self, entity: int) -> int:
        return int(self.indptr[entity + 1] - self.indptr[entity])

    def component_labels(self) -> np.ndarray:
        """Connected-component label per entity (the smallest member id)."""
        if self._labels is None:
            lab = np.arange(self.n_entities, dtype=np.int64)
            h, t = self.heads, self.tails
            while True:
                m = np.minimum(lab[h], lab[t])
                new = lab.copy()
                np.minimum.at(new, h, m)
                np.minimum.at(new, t, m)
                while True:  # pointer jumping
                    nxt = new[new]
                    if np.array_equal(nxt, new):
                        break
                    new = nxt
                if np.array_equal(new, lab):
                    break
                lab = new
            lab.flags.writeable = False
            self._labels = lab
        return self._labels

    def component_csr(self, seeds, max_cached: int = 64):
        """``(nodes, indptr, nbr)`` of the components containing ``seeds``.

        ``nodes`` is sorted, so local ids keep the global order. Results are
        memoised per component set.
        """
        lab = self.component_labels()
        key = tuple(np.unique(lab[np.asarray(seeds, dtype=np.int64)]).tolist())
        part = self._parts.get(key)
        if part is None:
            nodes = np.flatnonzero(np.isin(lab, key))
            local = np.full(self.n_entities, -1, dtype=np.int64)
            local[nodes] = np.arange(len(nodes))
            deg = self.indptr[nodes + 1] - self.indptr[nodes]
            indptr = np.zeros(len(nodes) + 1, dtype=np.int64)
            np.cumsum(deg, out=indptr[1:])
            slots = adjacency_slots(self.indptr, nodes)
            part = (nodes, indptr, np.ascontiguousarray(local[self.nbr[slots]]))
            if len(self._parts) < max_cached:
                self._parts[key] = part
        return part


def adjacency_slots(indptr: np.ndarray, nodes) -> np.ndarray:
    """Concatenated CSR slot ranges of ``nodes``, in the given node order."""
    nodes = np.asarray(nodes, dtype=np.int64)
    start = indptr[nodes]
    deg = indptr[nodes + 1] - start
    offset = np.repeat(start - (np.cumsum(deg) - deg), deg)
    return offset + np.arange(int(deg.sum()), dtype=np.int64)


def k_hop_neighborhood(kg: KnowledgeGraph, seed, k: int) -> Subgraph:
    """Entities within ``k`` undirected hops of ``seed`` (an id or a set of ids).

    The triple set holds every triple with an endpoint at distance <= k - 1,
    so both of its endpoints are inside the entity set. A set of seeds yields
    the union of the per-seed neighbourhoods.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    seeds = np.atleast_1d(np.asarray(seed, dtype=np.int64))
    if seeds.size and (seeds.min() < 0 or seeds.max() >= kg.n_entities):
        raise IndexError(f"seed out of range: {seeds}")
    ents, tris = kernels.k_hop(kg.indptr, kg.nbr, kg.nbr_tri, seeds, k)
    return Subgraph(ents, tris)


# -- loading ---------------------------------------------------------------

def _read_jsonl(path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            rows.append((lineno, obj))
    return rows


def _read_texts(path) -> list[str]:
    """Read a dense ``{"id", "text"}`` JSON-lines table."""
    texts: dict[int, str] = {}
    for lineno, obj in _read_jsonl(path):
        i, text = obj.get("id"), obj.get("text")
        if not isinstance(i, int) or isinstance(i, bool) or not isinstance(text, str):
            raise DataError(f"{path}:{lineno}: need integer 'id' and string 'text'")
        if not text.strip():
            raise DataError(f"{path}:{lineno}: empty description for id {i}")
        if i in texts:
            raise DataError(f"{path}:{lineno}: duplicate id {i}")
        texts[i] = text
    if sorted(texts) != list(range(len(texts))):
        raise DataError(f"{path}: ids must be dense 0..{len(texts) - 1}")
    return [texts[i] for i in range(len(texts))]


def load_kg(triples_path, entities_path, relations_path, item_map_path=None,
            item_texts: list[str] | None = None) -> KnowledgeGraph:
    entities = _read_texts(entities_path)
    relations = _read_texts(relations_path)
    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []
    dupes = 0
    with open(triples_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError
                h, r, t = (int(p) for p in parts)
            except ValueError:
                raise DataError(f"{triples_path}:{lineno}: malformed triple line {line!r}") from None
            for ent in (h, t):
                if not 0 <= ent < len(entities):
                    raise DanglingReferenceError(
                        f"{triples_path}:{lineno}: undefined entity {ent}")
            if not 0 <= r < len(relations):
                raise DanglingReferenceError(
                    f"{triples_path}:{lineno}: undefined relation {r}")
            if (h, r, t) in seen:
                dupes += 1
                continue
            seen.add((h, r, t))
            rows.append((h, r, t))
    if dupes:
        logger.warning("%s: dropped %d duplicate triples", triples_path, dupes)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    kg = KnowledgeGraph(entities, relations, arr[:, 0], arr[:, 1], arr[:, 2])
    if item_map_path is not None and Path(item_map_path).exists():
        kg.item_to_entity = load_item_map(item_map_path, len(entities))
    elif item_texts is not None:
        kg.item_to_entity = match_items_by_text(item_texts, entities)
    return kg


def load_item_map(path, n_entities: int) -> dict[int, int]:
    mapping: dict[int, int] = {}
    used: dict[int, int] = {}
    for lineno, obj in _read_jsonl(path):
        item, ent = obj.get("item"), obj.get("entity")
        if not isinstance(item, int) or not isinstance(ent, int):
            raise DataError(f"{path}:{lineno}: need integer 'item' and 'entity'")
        if not 0 <= ent < n_entities:
            raise DanglingReferenceError(f"{path}:{lineno}: undefined entity {ent}")
        if ent in used and used[ent] != item:
            raise DataError(f"{path}:{lineno}: entity {ent} mapped to items "
                            f"{used[ent]} and {item}")
        mapping[item] = ent
        used[ent] = item
    return mapping


def match_items_by_text(item_texts: list[str], entities: list[str]) -> dict[int, int]:
    """Case-insensitive exact description match; ambiguous names are skipped."""
    index: dict[str, int] = {}
    ambiguous = set()
    for i, text in enumerate(entities):
        key = text.strip().lower()
        if key in index:
            ambiguous.add(key)
        index[key] = i
    out = {}
    for item, text in enumerate(item_texts):
        key = text.strip().lower()
        if key in index and key not in ambiguous:
            out[item] = index[key]
    return out


def save_kg(kg: KnowledgeGraph, triples_path, entities_path, relations_path,
            item_map_path=None):
    """Write ``kg`` in the canonical formats read by :func:`load_kg`."""
    write_texts(entities_path, kg.entities)
    write_texts(relations_path, kg.relations)
    with open(triples_path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in zip(kg.heads, kg.rels, kg.tails):
            fh.write(f"{h}\t{r}\t{t}\n")
    if item_map_path is not None:
        with open(item_map_path, "w", encoding="utf-8", newline="\n") as fh:
            for item in sorted(kg.item_to_entity):
                fh.write(json.dumps({"item": item, "entity": kg.item_to_entity[item]}) + "\n")


def write_texts(path, texts):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, text in enumerate(texts):
            fh.write(json.dumps({"id": i, "text": text}, ensure_ascii=False) + "\n")


# -- interactions ----------------------------------------------------------

@dataclass(frozen=True)
class InteractionRecord:
    user: str
    items: tuple[int, ...]  # most recent last

    @property
    def evaluable(self) -> bool:
        return len(self.items) >= MIN_EVAL_HISTORY


@dataclass
class InteractionData:
    records: list[InteractionRecord]
    item_texts: list[str]

    @property
    def n_items(self) -> int:
        return len(self.item_texts)

    def item_counts(self) -> np.ndarray:
        counts = np.zeros(self.n_items, dtype=np.int64)
        for rec in self.records:
            np.add.at(counts, np.asarray(rec.items, dtype=np.int64), 1)
        return counts


def load_interactions(path, item_texts: list[str]) -> InteractionData:
    records = []
    for lineno, obj in _read_jsonl(path):
        user, items = obj.get("user"), obj.get("items")
        if not isinstance(user, str) or not isinstance(items, list):
            raise DataError(f"{path}:{lineno}: need string 'user' and list 'items'")
        for it in items:
            if not isinstance(it, int) or not 0 <= it < len(item_texts):
                raise DanglingReferenceError(f"{path}:{lineno}: undefined item {it!r}")
        records.append(InteractionRecord(user, tuple(items)))
    return InteractionData(records, item_texts)


def save_interactions(data: InteractionData, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in data.records:
            fh.write(json.dumps({"user": rec.user, "items": list(rec.items)}) + "\n")


def load_item_texts(path) -> list[str]:
    return _read_texts(path)

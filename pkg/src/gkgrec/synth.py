"""Planted-structure synthetic world for desk-scale training and acceptance runs.

Four item catalogs, each tied to one kind of user:

* franchise - every context item and the target share a franchise word, so
  the history alone identifies the target;
* sequel - one context item (watched twice) has a ``sequel`` edge to the target;
* star - one context item (watched twice) has many ``related title`` edges,
  one of which points at the target;
* multihop - most context items share an otherwise unused creator who also
  made the target, so the target is two hops from the history.

Every catalog title opens with one of a few style words owned by that
catalog, which makes the user kind visible in the query text without any
single word dominating it. Background items give each catalog realistic
genre and creator structure and fill the distractor pool.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .kg import InteractionData, InteractionRecord, KnowledgeGraph, save_interactions, save_kg, write_texts

KINDS = ("franchise", "sequel", "star", "multihop")
HARD_KIND = "multihop"

_CONS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"


@dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 2000
    n_eval: int = 500
    mix: tuple = (0.25, 0.25, 0.25, 0.25)  # share of each user kind, in KINDS order
    history_len: int = 10
    catalog_items: int = 500  # background items per catalog
    genres: int = 10  # per catalog
    items_per_creator: int = 4
    star_fanout: int = 30
    creator_share: int = 8  # multihop context items made by the pivot creator
    franchise_spares: int = 2  # extra franchise items never used as context or target
    style_words: int = 8  # per catalog
    related_pool: int = 1500  # star-catalog items reachable only through related-title edges

    def __post_init__(self):
        self.mix = tuple(float(x) for x in self.mix)
        if len(self.mix) != len(KINDS) or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ValueError("mix needs four non-negative shares")
        if not 2 <= self.creator_share < self.history_len:
            raise ValueError("creator_share must be in [2, history_len)")
        if self.star_fanout < 2 or self.catalog_items < self.history_len:
            raise ValueError("catalog too small for the history length")
        if self.related_pool < self.star_fanout:
            raise ValueError("related_pool must hold at least star_fanout items")


@dataclass
class SynthWorld:
    kg: KnowledgeGraph
    item_texts: list[str]
    train: InteractionData
    eval: InteractionData
    kinds: dict[str, str] = field(default_factory=dict)  # user -> kind
    config: SynthConfig | None = None

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        j = lambda name: os.path.join(directory, name)  # noqa: E731
        save_kg(self.kg, j("triples.tsv"), j("entities.jsonl"), j("relations.jsonl"),
                j("item_map.tsv"))
        write_texts(j("items.jsonl"), self.item_texts)
        save_interactions(self.train, j("train.jsonl"))
        save_interactions(self.eval, j("eval.jsonl"))
        with open(j("users.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            for user in sorted(self.kinds):
                fh.write(f"{user}\t{self.kinds[user]}\n")
        with open(j("synth.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(asdict(self.config), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Names:
    """Unique capitalised pseudo-words."""

    def __init__(self, rng: np.random.Generator, reserved=()):
        self.rng = rng
        self.used = {w.lower() for w in reserved}

    def word(self) -> str:
        while True:
            n = 2 + int(self.rng.integers(0, 2))
            w = "".join(_CONS[self.rng.integers(len(_CONS))] + _VOWELS[self.rng.integers(len(_VOWELS))]
                        for _ in range(n))
            if w not in self.used:
                self.used.add(w)
                return w.capitalize()


class _Builder:
    def __init__(self):
        self.entities: list[str] = []
        self.relations: list[str] = []
        self._rel: dict[str, int] = {}
        self.triples: list[tuple[int, int, int]] = []
        self.items: list[int] = []  # item id -> entity id

    def entity(self, text: str) -> int:
        self.entities.append(text)
        return len(self.entities) - 1

    def item(self, text: str) -> int:
        self.items.append(self.entity(text))
        return len(self.items) - 1

    def rel(self, text: str) -> int:
        if text not in self._rel:
            self._rel[text] = len(self.relations)
            self.relations.append(text)
        return self._rel[text]

    def add(self, h_item_or_ent: int, rel: str, t: int, h_is_item=True, t_is_item=False):
        h = self.items[h_item_or_ent] if h_is_item else h_item_or_ent
        t = self.items[t] if t_is_item else t
        self.triples.append((h, self.rel(rel), t))


def generate(cfg: SynthConfig | None = None) -> SynthWorld:
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    names = _Names(rng, reserved=("has", "genre", "sequel", "related", "title", "by", "made"))
    b = _Builder()
    n_users = cfg.n_train + cfg.n_eval
    shares = np.asarray(cfg.mix) / sum(cfg.mix)
    user_kind = rng.choice(len(KINDS), size=n_users, p=shares)

    catalogs = []
    bg_attrs: dict[int, tuple[int, int]] = {}
    for c in range(len(KINDS)):
        styles = [names.word() for _ in range(cfg.style_words)]
        genres = [b.entity(f"{names.word()} {names.word()}") for _ in range(cfg.genres)]
        creators: list[int] = []

        def new_creator():
            creators.append(b.entity(f"{names.word()} {names.word()}"))
            return creators[-1]

        background = []
        for i in range(cfg.catalog_items):
            it = b.item(f"{styles[int(rng.integers(len(styles)))]} {names.word()} {names.word()}")
            if i % cfg.items_per_creator == 0:
                cr = new_creator()
            g = genres[int(rng.integers(cfg.genres))]
            b.add(it, "genre", g)
            b.add(it, "made by", cr)
            background.append(it)
            bg_attrs[it] = (g, cr)
        related = []
        if KINDS[c] == "star":
            # kept apart from the background so context items do not collect
            # the related-title edges of every other star user
            for i in range(cfg.related_pool):
                it = b.item(f"{styles[int(rng.integers(len(styles)))]} {names.word()} {names.word()}")
                if i % cfg.items_per_creator == 0:
                    cr = new_creator()
                b.add(it, "genre", genres[int(rng.integers(cfg.genres))])
                b.add(it, "made by", cr)
                related.append(it)
        catalogs.append({"styles": styles, "genres": genres, "background": background,
                         "related": related})

    def fresh_item(c: int, words: tuple[str, str] | None = None, genre=None, creator=None) -> int:
        cat = catalogs[c]
        w = words or (names.word(), names.word())
        style = cat["styles"][int(rng.integers(len(cat["styles"])))]
        it = b.item(f"{style} {w[0]} {w[1]}")
        g = genre if genre is not None else cat["genres"][int(rng.integers(cfg.genres))]
        b.add(it, "genre", g)
        b.add(it, "made by", creator if creator is not None else b.entity(f"{names.word()} {names.word()}"))
        return it

    def background_sample(c: int, k: int, exclude=()) -> list[int]:
        pool = [x for x in catalogs[c]["background"] if x not in exclude]
        return [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]

    records, kinds = [], {}
    L = cfg.history_len
    for u in range(n_users):
        k = int(user_kind[u])
        kind = KINDS[k]
        if kind == "franchise":
            fw = names.word()
            maker = b.entity(f"{names.word()} {names.word()}")
            franchise = [fresh_item(k, (fw, names.word()), creator=maker)
                         for _ in range(L + 1 + cfg.franchise_spares)]
            order = rng.permutation(L + 1)
            context = [franchise[i] for i in order[:L]]
            target = franchise[order[L]]
        elif kind == "sequel":
            base = background_sample(k, L - 2)
            pivot = fresh_item(k)
            target = fresh_item(k)
            b.add(pivot, "sequel", target, t_is_item=True)
            context = _place_twice(rng, base, pivot)
        elif kind == "star":
            base = background_sample(k, L - 2)
            pivot = fresh_item(k)
            target = fresh_item(k)
            pool = catalogs[k]["related"]
            others = [pool[i] for i in rng.choice(len(pool), size=cfg.star_fanout - 1, replace=False)]
            linked = others + [target]
            for j in rng.permutation(len(linked)):
                b.add(pivot, "related title", linked[j], t_is_item=True)
            context = _place_twice(rng, base, pivot)
        else:  # multihop
            cat = catalogs[k]
            creator = b.entity(f"{names.word()} {names.word()}")
            genre = cat["genres"][int(rng.integers(cfg.genres))]
            made = [fresh_item(k, genre=genre, creator=creator) for _ in range(cfg.creator_share)]
            target = fresh_item(k, genre=genre, creator=creator)
            # background context uses distinct genres and creators, none shared
            # with the pivot, so (creator, genre) is the only recurring pair
            rest, seen = [], {genre}
            for i in rng.permutation(len(cat["background"])):
                x = cat["background"][i]
                if seen.isdisjoint(bg_attrs[x]):
                    rest.append(x)
                    seen.update(bg_attrs[x])
                    if len(rest) == L - cfg.creator_share:
                        break
            ctx = made + rest
            context = [ctx[i] for i in rng.permutation(L)]
        split = "train" if u < cfg.n_train else "eval"
        user = f"{split}-{u:06d}"
        kinds[user] = kind
        records.append(InteractionRecord(user, tuple(int(x) for x in context) + (int(target),)))

    heads, rels, tails = (np.array(col, dtype=np.int64) for col in zip(*b.triples))
    kg = KnowledgeGraph(b.entities, b.relations, heads, rels, tails,
                        {i: e for i, e in enumerate(b.items)})
    item_texts = [b.entities[e] for e in b.items]
    train = InteractionData(records[:cfg.n_train], item_texts)
    evl = InteractionData(records[cfg.n_train:], item_texts)
    return SynthWorld(kg, item_texts, train, evl, kinds, cfg)


def _place_twice(rng, base: list[int], pivot: int) -> list[int]:
    """Context of len(base)+2 with ``pivot`` twice, once as the most recent item."""
    ctx = list(base) + [pivot]
    ctx = [ctx[i] for i in rng.permutation(len(ctx))]
    ctx.remove(pivot)
    ctx.append(pivot)
    ctx.insert(int(rng.integers(len(ctx))), pivot)
    return ctx


def item_attributes(kg: KnowledgeGraph, item: int) -> set[int]:
    """Entities adjacent to the item's entity in the KG."""
    e = kg.item_to_entity[item]
    return {int(v) for _, v, _ in kg.adjacency(e) if v != e}


def context_attributes(kg: KnowledgeGraph, context) -> set[int]:
    """Attributes shared by at least two distinct context items."""
    counts: dict[int, int] = {}
    for it in set(int(x) for x in context):
        for a in item_attributes(kg, it):
            counts[a] = counts.get(a, 0) + 1
    return {a for a, n in counts.items() if n >= 2}


def check_hard_instance(kg: KnowledgeGraph, context, candidates, target_pos: int) -> bool:
    """True when the target is the only candidate sharing >= 2 context attributes."""
    ctx = context_attributes(kg, context)
    shared = [len(item_attributes(kg, int(c)) & ctx) for c in candidates]
    winners = [i for i, s in enumerate(shared) if s >= 2]
    return winners == [target_pos]

"""Glue between a :class:`RunConfig` and the modules: data, indexes, pipelines, runs."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .embed import HashEncoder, KGIndexes, RemoteEncoder, build_kg_indexes, kg_corpus
from .evaluation import EvalReport, EvalSet, build_eval_set, evaluate
from .kg import DataError, InteractionData, KnowledgeGraph, load_interactions, load_item_texts, load_kg, save_kg
from .mmapo import TrainResult, load_checkpoint, load_model_tensors, model_tensors, save_checkpoint, train
from .pipeline import Pipeline, RetrievalCache
from .prompts import MOVIE, MUSIC
from .recommender import refresh_reference

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "model.mmpo"
METRICS_NAME = "metrics.csv"


@dataclass
class World:
    kg: KnowledgeGraph
    item_texts: list[str]
    train: InteractionData | None = None
    eval: InteractionData | None = None


def load_world(cfg: RunConfig, splits=("train", "eval")) -> World:
    p = cfg.data.path
    items = load_item_texts(p("items"))
    kg = load_kg(p("triples"), p("entities"), p("relations"), p("item_map"), item_texts=items)
    w = World(kg, items)
    for split in splits:
        setattr(w, split, load_interactions(p(split), items))
    return w


def make_encoder(cfg: RunConfig, kg: KnowledgeGraph | None = None):
    e = cfg.encoder
    if e.kind == "remote":
        return RemoteEncoder(e.endpoint or None, e.model, cache_path=e.cache or None)
    enc = HashEncoder(e.dim, e.seed, sublinear=e.sublinear)
    if e.idf:
        if kg is None:
            raise ValueError("an IDF-weighted encoder needs the KG to fit on")
        enc.fit_idf(kg_corpus(kg))
    return enc


def index_dir(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / "index"


def build_and_save_index(cfg: RunConfig, world: World, encoder) -> KGIndexes:
    idx = build_kg_indexes(world.kg, encoder)
    d = index_dir(cfg)
    idx.save(d)
    kg_dir = d / "kg"
    kg_dir.mkdir(parents=True, exist_ok=True)
    save_kg(world.kg, kg_dir / "triples.tsv", kg_dir / "entities.jsonl",
            kg_dir / "relations.jsonl", kg_dir / "item_map.tsv")
    return idx


def get_indexes(cfg: RunConfig, kg: KnowledgeGraph, encoder) -> KGIndexes:
    """Persisted indexes when they match ``encoder`` and ``kg``, else a fresh in-memory build."""
    d = index_dir(cfg)
    if (d / "triples.gkgx").exists():
        idx = KGIndexes.load(d)
        if (idx.encoder_id == encoder.identifier and idx.triple.rows == kg.n_triples
                and idx.entity.rows == kg.n_entities):
            return idx
        logger.warning("index in %s does not match the current encoder or KG; rebuilding in memory", d)
    return build_kg_indexes(kg, encoder)


def make_generator(url: str, model: str):
    from .llm import ChatClient

    return ChatClient(url or None, model)


def make_pipeline(cfg: RunConfig, world: World, indexes: KGIndexes, encoder,
                  cache: RetrievalCache | None = None, router_mode: str | None = None,
                  fixed_expert: int | None = None) -> Pipeline:
    g = cfg.generator
    align_gen = make_generator(g.endpoint, g.model) if g.align_with_llm else None
    rec_gen = make_generator(g.endpoint, g.model) if cfg.recommender.use_llm else None
    mode = router_mode or cfg.router.mode
    if fixed_expert is None and mode == "fixed":
        fixed_expert = cfg.router.fixed_expert
    return Pipeline(
        world.kg, indexes, encoder, world.item_texts, budget=cfg.retrieval,
        cost_model=cfg.cost_model(), alpha=cfg.reward.alpha, eta=cfg.reward.eta,
        prob_floor=cfg.reward.prob_floor, n_hard=cfg.train.n_hard, router_mode=mode,
        fixed_expert=fixed_expert, dom=MUSIC if cfg.domain == "music" else MOVIE,
        generator=align_gen, cache=cache, scorer_scale=cfg.recommender.scorer_scale,
        seed=cfg.seed, rec_generator=rec_gen, rec_temperature=cfg.recommender.temperature,
        rec_samples=cfg.recommender.n_samples)


def train_instances(cfg: RunConfig, world: World) -> EvalSet:
    return build_eval_set(world.train, seed=cfg.seed, history_len=cfg.eval.history_len)


def eval_instances(cfg: RunConfig, world: World, mode: str = "standard") -> EvalSet:
    counts = world.train.item_counts() if world.train is not None else None
    return build_eval_set(world.eval, seed=cfg.eval.seed, mode=mode, train_counts=counts,
                          history_len=cfg.eval.history_len)


def save_model(path, pipeline: Pipeline, cfg: RunConfig):
    save_checkpoint(path, model_tensors(pipeline.router, pipeline.aligner, pipeline.scorer,
                                        pipeline.ref), cfg.to_dict())


def load_model(path, pipeline: Pipeline) -> dict | None:
    """Load checkpoint parameters into ``pipeline``; returns the stored config."""
    try:
        tensors, stored = load_checkpoint(path)
        if any(k.startswith("ref.") for k in tensors) and pipeline.ref is None:
            pipeline.ref = refresh_reference(pipeline.scorer)
        load_model_tensors(tensors, pipeline.router, pipeline.aligner, pipeline.scorer, pipeline.ref)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return stored


@dataclass
class RunResult:
    pipeline: Pipeline
    train: TrainResult
    report: EvalReport
    eval_set: EvalSet


def run(cfg: RunConfig, world: World, encoder=None, indexes: KGIndexes | None = None,
        cache: RetrievalCache | None = None, router_mode: str | None = None,
        fixed_expert: int | None = None, log_every: bool = False) -> RunResult:
    """Train on ``world.train`` then evaluate on ``world.eval``.

    ``encoder``, ``indexes`` and ``cache`` may be shared across runs over the
    same world; retrieval is deterministic so sharing does not change results.
    """
    encoder = encoder or make_encoder(cfg, world.kg)
    indexes = indexes or build_kg_indexes(world.kg, encoder)
    if cache is None:
        cache = RetrievalCache(encoder)
    p = make_pipeline(cfg, world, indexes, encoder, cache, router_mode, fixed_expert)
    tr, ev = train_instances(cfg, world), eval_instances(cfg, world)
    p.prefetch(list(tr) + list(ev))
    result = train(p, list(tr), cfg.train_config(), log_every=log_every)
    return RunResult(p, result, evaluate(p, ev), ev)

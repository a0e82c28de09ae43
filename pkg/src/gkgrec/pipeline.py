"""End-to-end rollout: route, retrieve, template, align, recommend, reward."""
from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .align import AlignmentPolicy, TemplatedDraft, align, temp
from .experts import RetrievalBudget, SearchHits, run_expert, search_batch
from .mmapo import N_EXPERTS, RouterPolicy, Trajectory, select_expert
from .prompts import MOVIE, PromptDomain
from .recommender import SurrogateScorer, llm_predict, mine_hard_negatives, rank_of
from .rewards import CostModel, reward_for

logger = logging.getLogger(__name__)

ROUTER_MODES = ("learned", "random", "fixed")


class StatementStore:
    """Deduplicated statement embeddings shared by every query.

    For encoders with an additive ``raw`` representation the raw vectors are
    kept too, so the context embedding of history plus kept statements is an
    exact sum rather than a re-encode of the joined text.
    """

    def __init__(self, encoder):
        self.encoder = encoder
        self.additive = hasattr(encoder, "raw")
        self._rows: dict[str, int] = {}
        self._unit = np.zeros((256, encoder.dim))
        self._raw = np.zeros((256, encoder.dim)) if self.additive else None
        self.size = 0

    def _grow(self, need: int):
        cap = len(self._unit)
        if need <= cap:
            return
        cap = max(need, 2 * cap)
        self._unit = np.resize(self._unit, (cap, self.encoder.dim))
        if self.additive:
            self._raw = np.resize(self._raw, (cap, self.encoder.dim))

    def rows(self, statements: list[str]) -> np.ndarray:
        new = [s for s in dict.fromkeys(statements) if s not in self._rows]
        if new:
            self._grow(self.size + len(new))
            for s in new:
                i = self.size
                if self.additive:
                    r = self.encoder.raw(s)
                    self._raw[i] = r
                    self._unit[i] = self.encoder.normalize(r)
                else:
                    self._unit[i] = self.encoder.encode(s)
                self._rows[s] = i
                self.size += 1
        return np.array([self._rows[s] for s in statements], dtype=np.int64)

    def unit(self, ids) -> np.ndarray:
        return self._unit[ids]

    def raw(self, ids) -> np.ndarray:
        return self._raw[ids]


@dataclass
class ExpertOutput:
    knowledge: object
    draft: TemplatedDraft
    rows: np.ndarray
    elapsed: float


@dataclass
class QueryState:
    text: str
    z_q: np.ndarray
    raw_q: np.ndarray | None
    experts: dict[int, ExpertOutput] = field(default_factory=dict)
    hits: SearchHits | None = None


@dataclass
class RolloutResult:
    expert: int
    probs: np.ndarray
    pred: int
    rank: int
    retrieval_s: float
    total_s: float
    trajectory: Trajectory
    knowledge_text: str = ""

    @property
    def correct(self) -> bool:
        return self.rank == 1


class RetrievalCache:
    """Query-keyed memo of retrieval output, shareable by pipelines over one KG."""

    def __init__(self, encoder):
        self.store = StatementStore(encoder)
        self.queries: dict[tuple, QueryState] = {}


class Pipeline:
    def __init__(self, kg, indexes, encoder, item_texts: list[str], budget: RetrievalBudget | None = None,
                 router: RouterPolicy | None = None, aligner: AlignmentPolicy | None = None,
                 scorer: SurrogateScorer | None = None, cost_model: CostModel | None = None,
                 alpha: float = 0.2, eta: float = 0.005, prob_floor: float = 1e-8, n_hard: int = 10,
                 router_mode: str = "learned", fixed_expert: int | None = None,
                 dom: PromptDomain = MOVIE, generator=None, cache: RetrievalCache | None = None,
                 scorer_scale: float = 20.0, seed: int = 0, rec_generator=None,
                 rec_temperature: float = 0.8, rec_samples: int = 8):
        if router_mode not in ROUTER_MODES:
            raise ValueError(f"router_mode must be one of {ROUTER_MODES}")
        if router_mode == "fixed" and fixed_expert not in (1, 2, 3, 4):
            raise ValueError("fixed routing needs fixed_expert in 1..4")
        self.kg = kg
        self.indexes = indexes
        self.encoder = encoder
        self.item_texts = item_texts
        self.budget = budget or RetrievalBudget()
        d = encoder.dim
        self.router = router or RouterPolicy(d)
        self.aligner = aligner or AlignmentPolicy(d)
        self.scorer = scorer or SurrogateScorer(d, scorer_scale)
        self.ref = None
        self.cost_model = cost_model or CostModel()
        self.alpha, self.eta, self.prob_floor, self.n_hard = alpha, eta, prob_floor, n_hard
        self.router_mode = router_mode
        self.fixed_expert = fixed_expert
        self.dom = dom
        self.generator = generator
        self.cache = cache or RetrievalCache(encoder)
        self.seed = seed
        # optional chat model for the recommendation step; the surrogate covers misses
        self.rec_generator = rec_generator
        self.rec_temperature, self.rec_samples = rec_temperature, rec_samples
        self.llm_misses = 0
        self.item_vecs = encoder.encode_batch(item_texts)

    # -- query side ----------------------------------------------------------

    def history(self, context) -> list[str]:
        return [self.item_texts[i] for i in context]

    def query(self, context) -> QueryState:
        key = tuple(context)
        q = self.cache.queries.get(key)
        if q is None:
            text = "; ".join(self.history(context))
            if self.cache.store.additive:
                raw = self.encoder.raw(text)
                q = QueryState(text, self.encoder.normalize(raw), raw)
            else:
                q = QueryState(text, self.encoder.encode(text), None)
            self.cache.queries[key] = q
        return q

    def prefetch(self, instances, chunk: int = 256):
        """Batch the vector searches of every not-yet-searched query in ``instances``.

        Retrieval results are identical up to score rounding; each query is
        charged its share of the batch time.
        """
        todo = {}
        for inst in instances:
            q = self.query(inst.context)
            if q.hits is None and not q.experts:
                todo[id(q)] = q
        qs = list(todo.values())
        if qs:
            for q, h in zip(qs, search_batch(self.indexes, np.stack([q.z_q for q in qs]),
                                             self.budget, chunk)):
                q.hits = h
        return len(qs)

    def expert_output(self, q: QueryState, e: int) -> tuple[ExpertOutput, bool]:
        """Cached retrieval and templating; the flag says whether it was cached."""
        out = q.experts.get(e)
        if out is not None:
            return out, True
        k, elapsed = run_expert(e, q.z_q, self.kg, self.indexes, self.budget, q.hits)
        draft = temp(k, self.kg)
        out = ExpertOutput(k, draft, self.cache.store.rows(draft.statements), elapsed)
        q.experts[e] = out
        return out, False

    def route(self, inst, rng, greedy: bool):
        q = self.query(inst.context)
        s = self.router.state(q.z_q)
        if self.router_mode == "learned":
            e, lp, v = select_expert(self.router, s, "greedy" if greedy else "sample", rng)
        elif self.router_mode == "fixed":
            e, lp, v = self.fixed_expert, 0.0, 0.0
        else:
            if rng is None:  # evaluation: a per-user stream keeps results order independent
                rng = np.random.default_rng([self.seed, zlib.crc32(inst.user.encode("utf-8"))])
            e, lp, v = int(rng.integers(N_EXPERTS)) + 1, float(np.log(1.0 / N_EXPERTS)), 0.0
        return e, lp, v, s, q

    def context_vector(self, q: QueryState, out: ExpertOutput, kept: list[int], text: str,
                       refined: bool) -> np.ndarray:
        if not kept:
            return q.z_q
        if refined or not self.cache.store.additive:
            return self.encoder.encode_concat([q.text, text])
        return self.encoder.normalize(q.raw_q + self.cache.store.raw(out.rows[kept]).sum(axis=0))

    def distribution(self, z_ctx, cand_vecs, history, cand, knowledge: str | None) -> np.ndarray:
        if self.rec_generator is not None:
            p = llm_predict(self.rec_generator, history, [self.item_texts[i] for i in cand],
                            knowledge, self.dom, self.rec_temperature, self.rec_samples)
            if p is not None:
                return p
            self.llm_misses += 1
        return self.scorer.distribution(z_ctx, cand_vecs)

    # -- rollout ------------------------------------------------------------------

    def rollout(self, inst, rng, greedy: bool = False, with_pairs: bool = False) -> RolloutResult:
        t0 = time.perf_counter()
        e, r_lp, r_v, s, q = self.route(inst, rng, greedy)
        out, cached = self.expert_output(q, e)
        replayed = out.elapsed if cached else 0.0
        stmt_vecs = self.cache.store.unit(out.rows)
        history = self.history(inst.context)
        aligned = align(self.aligner, q.z_q, out.draft, stmt_vecs, rng=rng, greedy=greedy,
                        generator=self.generator, history=history, dom=self.dom,
                        keep_features=False)
        z_ctx = self.context_vector(q, out, aligned.kept, aligned.text, aligned.refined)
        cand = np.asarray(inst.candidates, dtype=np.int64)
        cand_vecs = self.item_vecs[cand]
        probs = self.distribution(z_ctx, cand_vecs, history, cand, aligned.text or None)
        pred = int(np.argmax(probs))
        p_base = probs if e == 1 else self.distribution(q.z_q, cand_vecs, history, cand, None)
        reward = reward_for(e, probs, pred, inst.target_pos, p_base, self.cost_model,
                            self.alpha, self.eta, self.prob_floor)
        pairs = None
        if with_pairs:
            negs = mine_hard_negatives(probs, inst.target_pos, self.n_hard)
            pairs = (z_ctx, cand_vecs[inst.target_pos], cand_vecs[negs])
        acts = np.asarray(aligned.actions, dtype=np.int64)
        rows = out.rows
        aligner, store, z_q = self.aligner, self.cache.store, q.z_q
        traj = Trajectory(
            state=s, expert=e, router_logp=r_lp, router_value=r_v,
            align_features=lambda: aligner.replay_features(z_q, store.unit(rows), acts)
            if len(acts) else np.zeros((0, aligner.n_features)),
            align_actions=acts, align_logp=np.asarray(aligned.log_probs),
            align_values=np.asarray(aligned.values), reward=reward, pairs=pairs)
        total = time.perf_counter() - t0 + replayed
        return RolloutResult(e, probs, pred, rank_of(probs, inst.target_pos), out.elapsed, total,
                             traj, aligned.text)

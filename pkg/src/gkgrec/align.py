"""Verbalisation of retrieved knowledge and the statement-filtering alignment policy."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .experts import Empty, Forest, Subgraph, Triples
from .policy import LinearPolicy
from .prompts import MOVIE, PromptDomain, alignment_prompt

logger = logging.getLogger(__name__)

KEEP, DROP, STOP = 0, 1, 2
DIRECTIVES = ("KEEP", "DROP", "STOP")
N_PROGRESS = 3
DRAFT_LEN_SCALE = 32.0

# relations whose text opens with one of these read as verb phrases
VERB_WORDS = frozenset("""
is was are were has had have directed wrote written produced composed created
starred stars starring features featured plays played performed recorded
released belongs influenced inspired won founded signed appears appeared
follows followed precedes preceded based adapted remade sampled covered
""".split())


def is_verb_phrase(relation: str) -> bool:
    words = relation.split()
    return bool(words) and words[0] in VERB_WORDS


def verbalize(head: str, relation: str, tail: str) -> str:
    if is_verb_phrase(relation):
        return f"{head} {relation} {tail}"
    return f"{head} has {relation} {tail}"


@dataclass
class TemplatedDraft:
    statements: list[str]
    provenance: list[int]  # triple index per statement, -1 for the header
    expert: int = 1

    def __len__(self):
        return len(self.statements)

    @property
    def text(self) -> str:
        return join_statements(self.statements)


def join_statements(statements) -> str:
    return " ".join(s if s.endswith(".") else s + "." for s in statements)


def temp_triples(k: Triples, kg) -> TemplatedDraft:
    ids = [int(i) for i in k.ids]
    return TemplatedDraft([verbalize(*kg.triple_texts(i)) for i in ids], ids, expert=2)


def _seed_distance(kg, seeds, tri_ids) -> dict[int, int]:
    adj: dict[int, list[int]] = {}
    for t in tri_ids:
        h, _, tl = kg.triple(t)
        adj.setdefault(h, []).append(tl)
        adj.setdefault(tl, []).append(h)
    dist = {int(s): 0 for s in seeds}
    queue = deque(dist)
    while queue:
        u = queue.popleft()
        for v in adj.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def temp_graph(k: Subgraph | Forest, kg) -> TemplatedDraft:
    """Header naming the seed entities, then one statement per edge.

    Edges are ordered by hop distance of their nearer endpoint from the seeds,
    then (forests only) by cost, then by triple index.
    """
    if isinstance(k, Forest):
        tri = [int(t) for t in k.edges]
        costs = [float(c) for c in k.costs]
        expert = 4
    else:
        tri = [int(t) for t in k.triples]
        costs = [0.0] * len(tri)
        expert = 3
    dist = _seed_distance(kg, k.seeds, tri)
    far = len(kg.entities) + 1

    def key(i):
        h, _, t = kg.triple(tri[i])
        return min(dist.get(h, far), dist.get(t, far)), costs[i], tri[i]

    order = sorted(range(len(tri)), key=key)
    header = "Key entities: " + ", ".join(kg.entities[int(s)] for s in k.seeds)
    statements = [header] + [verbalize(*kg.triple_texts(tri[i])) for i in order]
    return TemplatedDraft(statements, [-1] + [tri[i] for i in order], expert=expert)


def temp(k, kg) -> TemplatedDraft:
    if isinstance(k, Empty):
        return TemplatedDraft([], [], expert=1)
    if isinstance(k, Triples):
        return temp_triples(k, kg)
    if isinstance(k, (Subgraph, Forest)):
        return temp_graph(k, kg)
    raise TypeError(f"unknown knowledge variant {type(k).__name__}")


@dataclass
class AlignedKnowledge:
    text: str
    kept: list[int]
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    features: np.ndarray | None = None  # one row per action
    refined: bool = False


class AlignmentPolicy(LinearPolicy):
    """Per-statement KEEP / DROP / STOP directives over a templated draft.

    Context features: query embedding, statement embedding, and progress
    terms (position, kept fraction, normalised draft length).
    """

    def __init__(self, dim: int, keep_bias: float = 1.0, stop_bias: float = -4.0):
        super().__init__(2 * dim + N_PROGRESS, 3, action_bias=[keep_bias, 0.0, stop_bias])
        self.dim = dim

    def features(self, z_q, z_s, step: int, n: int, kept: int) -> np.ndarray:
        prog = np.array([step / n, kept / step if step else 1.0,
                         min(n / DRAFT_LEN_SCALE, 1.0)])
        return np.concatenate([z_q, z_s, prog])

    def progress(self, n: int, actions) -> np.ndarray:
        """Progress columns for each step of a recorded directive sequence."""
        acts = np.asarray(actions, dtype=np.int64)
        steps = np.arange(len(acts))
        kept = np.concatenate([[0], np.cumsum(acts[:-1] == KEEP)]) if len(acts) else steps
        frac = np.where(steps > 0, kept / np.maximum(steps, 1), 1.0)
        return np.column_stack([steps / n, frac, np.full(len(acts), min(n / DRAFT_LEN_SCALE, 1.0))])

    def replay_features(self, z_q, stmt_vecs, actions) -> np.ndarray:
        """Feature rows for a recorded directive sequence over ``len(stmt_vecs)`` statements."""
        n, steps = len(stmt_vecs), len(actions)
        if steps == 0:
            return np.zeros((0, self.n_features))
        zq = np.broadcast_to(np.asarray(z_q, dtype=np.float64), (steps, self.dim))
        return np.hstack([zq, np.asarray(stmt_vecs)[:steps], self.progress(n, actions)])

    def sample_directives(self, z_q, stmt_vecs, rng=None, greedy: bool = False):
        """Run the directive loop; returns ``(actions, log_probs, values)``.

        The query and statement terms of the logits are computed for the whole
        draft at once, leaving only the three progress terms per step. Sampling
        consumes one uniform draw per step, exactly like :meth:`act`.
        """
        d, n = self.dim, len(stmt_vecs)
        W, b, v, c = (self.params[k] for k in ("W", "b", "v", "c"))
        base = (W[:, :d] @ z_q + b)[None, :] + stmt_vecs @ W[:, d:2 * d].T
        vbase = (z_q @ v[:d] + c[0]) + stmt_vecs @ v[d:2 * d]
        base, vbase = base.tolist(), vbase.tolist()
        wp, vp = W[:, 2 * d:].tolist(), v[2 * d:].tolist()
        size = min(n / DRAFT_LEN_SCALE, 1.0)
        actions, logps, values = [], [], []
        kept = 0
        for i in range(n):
            prog = (i / n, kept / i if i else 1.0, size)
            z = [base[i][a] + sum(w * x for w, x in zip(wp[a], prog)) for a in range(3)]
            top = max(z)
            lse = top + math.log(sum(math.exp(x - top) for x in z))
            lp = [x - lse for x in z]
            if greedy or rng is None:
                a = lp.index(max(lp))
            else:
                p = [math.exp(x) for x in lp]
                u = rng.random() * sum(p)
                acc, a = 0.0, 2
                for j in range(3):
                    acc += p[j]
                    if acc > u:
                        a = j
                        break
            actions.append(a)
            logps.append(lp[a])
            values.append(vbase[i] + sum(w * x for w, x in zip(vp, prog)))
            if a == STOP:
                break
            kept += a == KEEP
        return actions, logps, values

    def sequence_log_prob(self, aligned: AlignedKnowledge) -> float:
        if not aligned.actions:
            return 0.0
        return float(self.log_prob(aligned.features, aligned.actions).sum())


def align(policy: AlignmentPolicy, z_q, draft: TemplatedDraft, stmt_vecs,
          rng: np.random.Generator | None = None, greedy: bool = False,
          generator=None, history: list[str] | None = None,
          dom: PromptDomain = MOVIE, forced: list[int] | None = None,
          keep_features: bool = True) -> AlignedKnowledge:
    """Filter ``draft`` statement by statement with ``policy``.

    ``stmt_vecs`` holds one unit embedding per statement. ``forced`` replays a
    fixed directive sequence (for tests and log-prob recomputation). With a
    ``generator`` the kept statements are rewritten through the alignment
    prompt; the policy actions are still recorded. ``keep_features=False``
    skips materialising the feature rows (callers that replay them later).
    """
    n = len(draft)
    if n == 0:
        return AlignedKnowledge("", [], features=np.zeros((0, policy.n_features)))
    z_q = np.asarray(z_q, dtype=np.float64)
    stmt_vecs = np.asarray(stmt_vecs, dtype=np.float64)
    if forced is None:
        actions, logps, values = policy.sample_directives(z_q, stmt_vecs, rng, greedy)
    else:
        actions = [int(a) for a in forced[:n]]
        if STOP in actions:
            actions = actions[:actions.index(STOP) + 1]
        x = policy.replay_features(z_q, stmt_vecs, actions)
        logps = policy.log_prob(x, actions).tolist() if actions else []
        values = np.atleast_1d(policy.value(x)).tolist() if actions else []
    feats = policy.replay_features(z_q, stmt_vecs, actions) if keep_features else None
    kept = [i for i, a in enumerate(actions) if a == KEEP]
    out = AlignedKnowledge(join_statements([draft.statements[i] for i in kept]), kept,
                           actions, logps, values, feats)
    if generator is not None and kept and draft.expert in (2, 3, 4):
        prompt = alignment_prompt(draft.expert, history or [],
                                  [draft.statements[i] for i in kept], dom)
        try:
            text = generator.complete(prompt, temperature=0.0).strip()
            if text:
                out.text = text
                out.refined = True
        except Exception as exc:  # any generator failure keeps the plain text
            logger.warning("alignment generator failed, using templated text: %s", exc)
    return out

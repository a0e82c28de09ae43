"""Candidate scoring, hard-negative mining and the contrastive preference loss."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np

from .llm import parse_letter
from .policy import log_softmax, softmax
from .prompts import MOVIE, OPTION_LETTERS, PromptDomain, recommendation_prompt

logger = logging.getLogger(__name__)

CANDIDATE_POOL = 20
PROB_FLOOR = 1e-8


@dataclass
class RecContext:
    """One recommendation decision: context embedding plus the candidate pool."""
    z_ctx: np.ndarray  # embedding of query + aligned knowledge
    cand_vecs: np.ndarray  # (n_candidates, d)
    candidates: np.ndarray  # item ids, in option order
    target: int  # position of the ground-truth item in ``candidates``

    def __post_init__(self):
        if len(set(int(c) for c in self.candidates)) != len(self.candidates):
            raise ValueError("candidates must be distinct")
        if not 0 <= self.target < len(self.candidates):
            raise ValueError("target must be one of the candidates")


class SurrogateScorer:
    """Weighted-cosine scorer ``score(o) = sum_i w_i z_ctx[i] z_o[i]``, softmax over the pool.

    One weight per embedding coordinate, so training can damp or boost
    individual feature buckets without a d x d parameter block.
    """

    def __init__(self, dim: int, init_scale: float = 0.0):
        self.dim = dim
        self.params = {"w": np.full(dim, float(init_scale))}

    @property
    def w(self) -> np.ndarray:
        return self.params["w"]

    def logits(self, z_ctx, cand_vecs) -> np.ndarray:
        return cand_vecs @ (z_ctx * self.w)

    def distribution(self, z_ctx, cand_vecs) -> np.ndarray:
        return softmax(self.logits(z_ctx, cand_vecs))

    def log_probs(self, z_ctx, cand_vecs) -> np.ndarray:
        return log_softmax(self.logits(z_ctx, cand_vecs))

    def state_dict(self) -> dict:
        return {"w": self.w.copy()}

    def load_state_dict(self, state: dict):
        w = np.array(state["w"], dtype=np.float64).reshape(-1)
        if w.shape != (self.dim,):
            raise ValueError(f"scorer weights have shape {w.shape}, expected ({self.dim},)")
        self.params["w"] = w


ReferencePolicy = SurrogateScorer


def refresh_reference(scorer: SurrogateScorer) -> SurrogateScorer:
    return copy.deepcopy(scorer)


def predict(scorer: SurrogateScorer, ctx: RecContext) -> tuple[np.ndarray, int]:
    """Distribution over the pool and the argmax position (first on ties)."""
    p = scorer.distribution(ctx.z_ctx, ctx.cand_vecs)
    return p, int(np.argmax(p))


def rank_of(probs: np.ndarray, pos: int) -> int:
    """1-based rank of ``pos`` by descending probability, earlier options first on ties."""
    p = probs[pos]
    return int(np.sum(probs > p) + np.sum(probs[:pos] == p)) + 1


def mine_hard_negatives(probs: np.ndarray, target: int, n: int) -> np.ndarray:
    """Positions of the ``n`` most probable non-target candidates."""
    if n > len(probs) - 1:
        raise ValueError("n exceeds the number of non-target candidates")
    idx = np.array([i for i in range(len(probs)) if i != target], dtype=np.int64)
    order = np.lexsort((idx, -probs[idx]))
    return idx[order[:n]]


@dataclass
class PreferencePair:
    z_ctx: np.ndarray
    z_pos: np.ndarray
    z_neg: np.ndarray
    logp_pos: float = math.nan  # under the behaviour scorer when mined
    logp_neg: float = math.nan


def stack_pairs(pairs: list[PreferencePair]):
    return (np.stack([p.z_ctx for p in pairs]), np.stack([p.z_pos for p in pairs]),
            np.stack([p.z_neg for p in pairs]))


def preference_loss(scorer: SurrogateScorer, ref: SurrogateScorer, pairs, beta: float):
    """Mean ``-log sigmoid(beta * margin)`` over pairs and its gradient in ``w``.

    The margin is the policy-vs-reference log-ratio of the positive minus that
    of the negative; softmax normalisers cancel, leaving a weighted inner product.
    ``pairs`` is a list of :class:`PreferencePair`, a stacked triple of
    ``(P, d)`` arrays, or a grouped triple ``(z_ctx (B, d), z_pos (B, d),
    z_neg (B, N, d))`` where each context carries ``N`` negatives.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    zc, zp, zn = stack_pairs(pairs) if isinstance(pairs, list) else pairs
    zn = np.asarray(zn, dtype=np.float64)
    grouped = zn.ndim == 3
    diff = zp[:, None, :] - zn if grouped else zp - zn
    proj = zc * (scorer.w - ref.w)
    delta = np.einsum("bd,bnd->bn", proj, diff) if grouped else np.sum(proj * diff, axis=1)
    if not np.all(np.isfinite(delta)):
        raise FloatingPointError("non-finite preference margin; scorer is degenerate")
    u = beta * delta
    loss = float(np.mean(np.logaddexp(0.0, -u)))
    w = -beta * _sigmoid(-u) / u.size
    if grouped:
        grad = np.sum(zc * np.einsum("bn,bnd->bd", w, diff), axis=0)
    else:
        grad = np.sum(zc * (w[:, None] * diff), axis=0)
    return loss, {"w": grad}


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


# -- external LLM path ----------------------------------------------------

def letters_to_distribution(scores: dict[str, float], n: int, floor: float = PROB_FLOOR,
                            are_logprobs: bool = True) -> np.ndarray:
    letters = OPTION_LETTERS[:n]
    p = np.array([math.exp(scores[c]) if are_logprobs and c in scores
                  else scores.get(c, 0.0) for c in letters], dtype=np.float64)
    p = np.maximum(p, floor)
    return p / p.sum()


def llm_predict(generator, history: list[str], options: list[str], knowledge: str | None,
                dom: PromptDomain = MOVIE, temperature: float = 0.8, n_samples: int = 8,
                rng: np.random.Generator | None = None) -> np.ndarray | None:
    """Option-letter distribution from a chat model, or ``None`` on a miss.

    Uses returned letter log-probabilities when the endpoint provides them;
    otherwise samples ``n_samples`` replies at ``temperature`` and counts letters.
    """
    prompt = recommendation_prompt(history, options, knowledge, dom)
    n = len(options)
    lp = generator.letter_logprobs(prompt)
    if lp:
        return letters_to_distribution(lp, n)
    counts: dict[str, float] = {}
    for _ in range(n_samples):
        letter = None
        for _attempt in range(2):
            letter = parse_letter(generator.complete(prompt, temperature=temperature))
            if letter is not None and OPTION_LETTERS.index(letter) < n:
                break
            letter = None
        if letter is not None:
            counts[letter] = counts.get(letter, 0.0) + 1.0
    if not counts:
        logger.warning("no parseable option letter from generator")
        return None
    return letters_to_distribution(counts, n, are_logprobs=False)

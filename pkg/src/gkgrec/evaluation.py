"""Evaluation protocol: 20-way candidate pools, accuracy, Recall@K and timing."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .kg import MIN_EVAL_HISTORY, InteractionData

logger = logging.getLogger(__name__)

HISTORY_LEN = MIN_EVAL_HISTORY - 1
N_CANDIDATES = 20
COLD_START_QUANTILE = 0.1


@dataclass(frozen=True)
class EvalInstance:
    user: str
    context: tuple[int, ...]  # oldest first
    target: int
    candidates: tuple[int, ...]
    target_pos: int
    seed: int

    def __post_init__(self):
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("duplicate candidates")
        if self.candidates[self.target_pos] != self.target:
            raise ValueError("target_pos does not point at the target")


class EvalSet(list):
    """List of instances that also remembers how many users were skipped."""

    skipped: int = 0
    threshold: float | None = None


def cold_start_threshold(counts: np.ndarray, q: float = COLD_START_QUANTILE) -> float:
    """Interaction count at the bottom-decile boundary of the item vocabulary."""
    return float(np.quantile(np.asarray(counts, dtype=np.float64), q))


def build_eval_set(data: InteractionData, seed: int = 0, mode: str = "standard",
                   train_counts: np.ndarray | None = None,
                   n_candidates: int = N_CANDIDATES, history_len: int = HISTORY_LEN) -> EvalSet:
    """One instance per user: target = last item, context = the preceding ``history_len``.

    Distractors are drawn uniformly from the item vocabulary minus context and
    target, with a per-user generator derived from ``(seed, user position)``.
    In ``cold_start`` mode only targets at or below the bottom-decile
    interaction count (of ``train_counts``, default: ``data`` itself) are kept.
    """
    if mode not in ("standard", "cold_start"):
        raise ValueError("mode must be 'standard' or 'cold_start'")
    n_items = data.n_items
    out = EvalSet()
    if mode == "cold_start":
        counts = data.item_counts() if train_counts is None else np.asarray(train_counts)
        out.threshold = cold_start_threshold(counts)
    for pos, rec in enumerate(data.records):
        if len(rec.items) < history_len + 1:
            out.skipped += 1
            continue
        context = tuple(int(x) for x in rec.items[-history_len - 1:-1])
        target = int(rec.items[-1])
        if mode == "cold_start" and counts[target] > out.threshold:
            continue
        excluded = set(context) | {target}
        if n_items - len(excluded) < n_candidates - 1:
            raise ValueError("item vocabulary too small for the candidate pool")
        rng = np.random.default_rng([seed, pos])
        distractors: list[int] = []
        chosen = set(excluded)
        while len(distractors) < n_candidates - 1:
            for x in rng.integers(0, n_items, size=2 * n_candidates).tolist():
                if x not in chosen:
                    chosen.add(x)
                    distractors.append(x)
                    if len(distractors) == n_candidates - 1:
                        break
        pool = [target] + distractors
        order = rng.permutation(n_candidates)
        cands = tuple(pool[i] for i in order)
        out.append(EvalInstance(rec.user, context, target, cands, int(np.flatnonzero(order == 0)[0]),
                                seed))
    if out.skipped:
        logger.info("skipped %d users with fewer than %d interactions", out.skipped, history_len + 1)
    return out


@dataclass
class EvalReport:
    accuracy: float
    recall_at_3: float
    recall_at_5: float
    mean_retrieval_s: float
    mean_total_s: float
    expert_fractions: tuple[float, float, float, float]
    count: int

    def __post_init__(self):
        if self.count and not (0 <= self.accuracy <= self.recall_at_3 <= self.recall_at_5 <= 1):
            raise ValueError("inconsistent report: need accuracy <= R@3 <= R@5")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["accuracy", f"{self.accuracy:.6f}"])
        w.writerow(["recall@3", f"{self.recall_at_3:.6f}"])
        w.writerow(["recall@5", f"{self.recall_at_5:.6f}"])
        w.writerow(["mean_retrieval_s", f"{self.mean_retrieval_s:.6f}"])
        w.writerow(["mean_total_s", f"{self.mean_total_s:.6f}"])
        for e, f in enumerate(self.expert_fractions, start=1):
            w.writerow([f"frac_e{e}", f"{f:.6f}"])
        w.writerow(["instances", self.count])
        return buf.getvalue()


def evaluate(pipeline, instances, timing: bool = True) -> EvalReport:
    """Greedy routing and prediction over ``instances``; parameters are untouched."""
    n = len(instances)
    if n == 0:
        return EvalReport(0.0, 0.0, 0.0, 0.0, 0.0, (0.0, 0.0, 0.0, 0.0), 0)
    hits = np.zeros(3)
    ret_t = tot_t = 0.0
    hist = np.zeros(4)
    for inst in instances:
        r = pipeline.rollout(inst, None, greedy=True)
        hits += (r.rank <= 1, r.rank <= 3, r.rank <= 5)
        hist[r.expert - 1] += 1
        ret_t += r.retrieval_s
        tot_t += r.total_s
    frac = tuple(float(x) for x in hist / n)
    return EvalReport(hits[0] / n, hits[1] / n, hits[2] / n, ret_t / n, tot_t / n, frac, n)


def expert_distribution(pipeline, instances) -> np.ndarray:
    """Fractions of greedy routing decisions per expert."""
    hist = np.zeros(4)
    for inst in instances:
        hist[pipeline.route(inst, None, greedy=True)[0] - 1] += 1
    return hist / max(len(instances), 1)


def distribution_csv(fractions) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["expert", "fraction"])
    for e, f in enumerate(fractions, start=1):
        w.writerow([e, f"{float(f):.6f}"])
    return buf.getvalue()


def distribution_plot_data(fractions) -> str:
    """Two-column bar-chart data (label, percent)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "percent"])
    for e, f in enumerate(fractions, start=1):
        w.writerow([f"Expert {e}", f"{100 * float(f):.1f}"])
    return buf.getvalue()

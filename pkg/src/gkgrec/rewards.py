"""Recommendation reward, KL information gain, cost penalty and the combined reward."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WRONG_REWARD = -0.1
DEFAULT_COSTS = (0.0, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class CostModel:
    costs: tuple = DEFAULT_COSTS

    def __post_init__(self):
        c = tuple(float(x) for x in self.costs)
        if len(c) != 4:
            raise ValueError("cost model needs one cost per expert")
        if c[0] != 0.0:
            raise ValueError("direct recommendation must cost 0")
        if any(b < a for a, b in zip(c, c[1:])):
            raise ValueError("costs must be non-decreasing in expert id")
        object.__setattr__(self, "costs", c)

    def __call__(self, expert: int) -> float:
        return self.costs[expert - 1]


@dataclass(frozen=True)
class RewardBreakdown:
    r_rec: float
    delta_i: float
    cost: float
    r_mig: float
    r_total: float
    alpha: float
    eta: float


def rec_reward(probs, predicted: int, target: int) -> float:
    """Confidence of the prediction when it is right, a fixed penalty otherwise."""
    if predicted == target:
        return float(probs[predicted])
    return WRONG_REWARD


def kl_divergence(p_expert, p_base, floor: float = 1e-8) -> float:
    p = np.maximum(np.asarray(p_expert, dtype=np.float64), floor)
    q = np.maximum(np.asarray(p_base, dtype=np.float64), floor)
    if p.shape != q.shape:
        raise ValueError("distributions must share support")
    p = p / p.sum()
    q = q / q.sum()
    # fsum keeps the tiny cancellation terms accurate; clamp tiny negative round-off
    return max(0.0, math.fsum((p * (np.log(p) - np.log(q))).tolist()))


def mig_reward(expert: int, p_expert, p_base, cost_model: CostModel, eta: float,
               floor: float = 1e-8) -> tuple[float, float, float]:
    """Returns ``(r_mig, delta_i, cost)``; the no-retrieval expert scores exactly 0."""
    cost = cost_model(expert)
    if expert == 1:
        return 0.0, 0.0, cost
    d = kl_divergence(p_expert, p_base, floor)
    return d - eta * cost, d, cost


def total_reward(r_rec: float, delta_i: float, cost: float, alpha: float, eta: float) -> RewardBreakdown:
    r_mig = delta_i - eta * cost
    return RewardBreakdown(r_rec, delta_i, cost, r_mig, r_rec + alpha * r_mig, alpha, eta)


def reward_for(expert: int, probs, predicted: int, target: int, p_base,
               cost_model: CostModel, alpha: float, eta: float, floor: float = 1e-8) -> RewardBreakdown:
    r_rec = rec_reward(probs, predicted, target)
    _, d, cost = mig_reward(expert, probs, p_base, cost_model, eta, floor)
    return total_reward(r_rec, d, cost, alpha, eta)

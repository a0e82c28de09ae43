"""Affine categorical policies with value heads, the clipped surrogate, and Adam."""
from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def clipped_policy_objective(new_logp, old_logp, advantage, eps):
    """Per-step ``min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)``."""
    rho = np.exp(np.asarray(new_logp, dtype=np.float64) - np.asarray(old_logp, dtype=np.float64))
    adv = np.asarray(advantage, dtype=np.float64)
    out = np.minimum(rho * adv, np.clip(rho, 1.0 - eps, 1.0 + eps) * adv)
    return float(out) if out.ndim == 0 else out


def clipped_objective_grad_logp(new_logp, old_logp, advantage, eps):
    """d/d(new_logp) of the clipped objective: ``rho * A`` where unclipped, else 0."""
    rho = np.exp(new_logp - old_logp)
    active = ~(((advantage > 0) & (rho > 1.0 + eps)) | ((advantage < 0) & (rho < 1.0 - eps)))
    return np.where(active, rho * advantage, 0.0)


class LinearPolicy:
    """``pi(a|x) = softmax(W x + b)`` with a separate affine value head ``v x + c``."""

    def __init__(self, n_features: int, n_actions: int, action_bias=None):
        self.n_features = n_features
        self.n_actions = n_actions
        self.params = {
            "W": np.zeros((n_actions, n_features)),
            "b": np.zeros(n_actions) if action_bias is None else np.array(action_bias, dtype=np.float64),
            "v": np.zeros(n_features),
            "c": np.zeros(1),
        }

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.params["W"].T + self.params["b"]

    def probs(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def log_prob(self, x: np.ndarray, actions) -> np.ndarray:
        lp = log_softmax(self.logits(np.atleast_2d(x)))
        return lp[np.arange(len(lp)), np.asarray(actions)]

    def value(self, x: np.ndarray):
        return x @ self.params["v"] + self.params["c"][0]

    def act(self, x: np.ndarray, rng: np.random.Generator | None, greedy: bool = False):
        """Sample (or argmax) one action for a single feature vector.

        Returns ``(action, log_prob, value)``.
        """
        lp = log_softmax(self.logits(x))
        if greedy or rng is None:
            a = int(np.argmax(lp))
        else:
            p = np.exp(lp)
            a = int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"),
                        self.n_actions - 1))
        return a, float(lp[a]), float(self.value(x))

    def ppo_grads(self, x, actions, old_logp, adv, returns, eps, value_coef):
        """Gradients of ``-(clipped objective) + value_coef/2 * (V - G)^2`` (batch means).

        Returns ``(grads, report)``.
        """
        n = len(x)
        logits = self.logits(x)
        lp_all = log_softmax(logits)
        p = np.exp(lp_all)
        idx = np.arange(n)
        new_logp = lp_all[idx, actions]
        g_logp = clipped_objective_grad_logp(new_logp, old_logp, adv, eps)
        onehot = np.zeros_like(p)
        onehot[idx, actions] = 1.0
        # d(-J)/d logits
        d_logits = -(g_logp[:, None] * (onehot - p)) / n
        v = self.value(x)
        d_v = value_coef * (v - returns) / n
        grads = {
            "W": d_logits.T @ x,
            "b": d_logits.sum(axis=0),
            "v": d_v @ x,
            "c": np.array([d_v.sum()]),
        }
        report = {
            "objective": float(np.mean(clipped_policy_objective(new_logp, old_logp, adv, eps))),
            "value_loss": float(0.5 * value_coef * np.mean((v - returns) ** 2)),
        }
        return grads, report

    def state_dict(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict):
        for k in self.params:
            self.params[k] = np.array(state[k], dtype=np.float64).reshape(self.params[k].shape)


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


class Adam:
    """Adam over a dict of arrays, updated in place (descent direction)."""

    def __init__(self, params: dict, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

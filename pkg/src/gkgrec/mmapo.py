"""Coupled router / alignment training with clipped proximal updates.

A trajectory is one router step followed by the alignment directives for the
chosen expert's draft; only the last step carries a reward. Advantages come
from GAE over that sequence. The recommender is trained separately with the
pairwise preference loss on hard negatives mined during the rollouts.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .policy import Adam, LinearPolicy, clip_global_norm
from .recommender import preference_loss, refresh_reference

logger = logging.getLogger(__name__)

N_EXPERTS = 4
CKPT_MAGIC = b"MMPO"
CKPT_VERSION = 1
CONFIG_TENSOR = "meta.config_json"
METRIC_COLUMNS = ("iteration", "mean_r_total", "mean_delta_i", "mean_cost", "acc_holdout",
                  "frac_e1", "frac_e2", "frac_e3", "frac_e4")


@dataclass
class TrainConfig:
    lr: float = 3e-4
    rec_lr: float = 3e-4
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    update_epochs: int = 3
    batch_size: int = 64
    buffer_size: int = 2048
    grad_max_norm: float = 0.5
    beta: float = 0.2
    n_hard: int = 10
    alpha: float = 0.2
    eta: float = 0.005
    value_loss_coef: float = 0.5
    iterations: int = 8
    ref_refresh: int = 0  # refresh the reference every k iterations; 0 = once at start
    holdout_size: int = 200
    seed: int = 0

    def __post_init__(self):
        checks = [
            ("lr", self.lr > 0), ("rec_lr", self.rec_lr >= 0),
            ("gamma", 0 < self.gamma <= 1), ("lam", 0 < self.lam <= 1),
            ("clip_eps", 0 < self.clip_eps < 1), ("update_epochs", self.update_epochs >= 1),
            ("batch_size", self.batch_size >= 1), ("buffer_size", self.buffer_size >= 1),
            ("grad_max_norm", self.grad_max_norm > 0), ("beta", self.beta > 0),
            ("n_hard", self.n_hard >= 1), ("alpha", self.alpha >= 0), ("eta", self.eta >= 0),
            ("value_loss_coef", self.value_loss_coef >= 0), ("iterations", self.iterations >= 0),
            ("ref_refresh", self.ref_refresh >= 0), ("holdout_size", self.holdout_size >= 0),
        ]
        bad = [name for name, ok in checks if not ok]
        if bad:
            raise ValueError(f"train config out of range: {', '.join(bad)}")


class RouterPolicy(LinearPolicy):
    """Four-way expert router on the (rescaled) query embedding, with a value head."""

    def __init__(self, dim: int, input_scale: float | None = None):
        super().__init__(dim, N_EXPERTS)
        self.dim = dim
        # unit embeddings have per-coordinate scale ~ 1/sqrt(d); rescale to O(1)
        self.input_scale = math.sqrt(dim) if input_scale is None else float(input_scale)

    def state(self, z_q) -> np.ndarray:
        return np.asarray(z_q, dtype=np.float64) * self.input_scale


def select_expert(router: RouterPolicy, s, mode: str = "sample", rng=None):
    """Returns ``(expert_id, log_prob, value)`` with expert ids 1..4."""
    if mode not in ("sample", "greedy"):
        raise ValueError("mode must be 'sample' or 'greedy'")
    a, lp, v = router.act(s, rng, greedy=(mode == "greedy"))
    return a + 1, lp, v


def compute_gae(rewards, values, gamma: float, lam: float):
    """Advantages and discounted returns for one trajectory (value after the end = 0)."""
    r = np.asarray(rewards, dtype=np.float64)
    return kernels.gae(r, np.asarray(values, dtype=np.float64),
                       np.array([0, len(r)], dtype=np.int64), gamma, lam)


def normalize_advantages(adv: np.ndarray, min_std: float = 1e-8) -> np.ndarray:
    """Zero-mean, unit-std advantages; single-element batches are left as they are."""
    if len(adv) < 2:
        return adv
    return (adv - adv.mean()) / max(float(adv.std()), min_std)


@dataclass
class Trajectory:
    state: np.ndarray
    expert: int  # 1..4
    router_logp: float
    router_value: float
    align_features: object  # callable returning the (L, F) feature rows
    align_actions: np.ndarray
    align_logp: np.ndarray
    align_values: np.ndarray
    reward: object  # RewardBreakdown
    pairs: tuple | None = None  # (z_ctx, z_pos, z_negs) with z_negs of shape (N, d)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def length(self) -> int:
        return 1 + len(self.align_actions)

    def step_values(self) -> np.ndarray:
        return np.concatenate([[self.router_value], self.align_values])

    def step_rewards(self) -> np.ndarray:
        r = np.zeros(self.length)
        r[-1] = self.reward.r_total
        return r


def assign_advantages(trajs: list[Trajectory], gamma: float, lam: float):
    lengths = np.array([t.length for t in trajs], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    rewards = np.concatenate([t.step_rewards() for t in trajs])
    values = np.concatenate([t.step_values() for t in trajs])
    adv, ret = kernels.gae(rewards, values, ptr, gamma, lam)
    if not np.all(np.isfinite(adv)):
        raise FloatingPointError("non-finite advantages")
    for t, a, b in zip(trajs, ptr[:-1], ptr[1:]):
        t.advantages = adv[a:b]
        t.returns = ret[a:b]


@dataclass
class Optimizers:
    router: Adam
    align: Adam
    rec: Adam

    @classmethod
    def create(cls, router, aligner, scorer, cfg: TrainConfig):
        return cls(Adam(router.params, cfg.lr), Adam(aligner.params, cfg.lr),
                   Adam(scorer.params, cfg.rec_lr))


def _policy_step(policy: LinearPolicy, opt: Adam, x, actions, old_logp, adv, ret,
                 cfg: TrainConfig, tag: str) -> dict:
    grads, rep = policy.ppo_grads(x, actions, old_logp, normalize_advantages(adv), ret,
                                  cfg.clip_eps, cfg.value_loss_coef)
    if not all(np.all(np.isfinite(g)) for g in grads.values()) or not math.isfinite(rep["objective"]):
        raise FloatingPointError(f"non-finite {tag} update: objective={rep['objective']!r}, "
                                 f"value_loss={rep['value_loss']!r}, rows={len(x)}")
    rep["grad_norm"] = clip_global_norm(grads, cfg.grad_max_norm)
    opt.step(grads)
    return rep


def update_policies(router: RouterPolicy, aligner, trajs: list[Trajectory], cfg: TrainConfig,
                    opts: Optimizers, rng: np.random.Generator, scorer=None, ref=None) -> dict:
    """Clipped updates for router and aligner, plus preference steps for the scorer.

    ``trajs`` must already carry advantages and returns. Mini-batches of
    ``batch_size`` trajectories are drawn without replacement each epoch.
    Passing ``router=None`` freezes routing (fixed and random baselines).
    """
    report = {"router_objective": [], "align_objective": [], "pref_loss": []}
    n = len(trajs)
    update_router = router is not None
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            mb = [trajs[i] for i in order[start:start + cfg.batch_size]]
            if update_router:
                rep = _policy_step(router, opts.router, np.stack([t.state for t in mb]),
                                   np.array([t.expert - 1 for t in mb]),
                                   np.array([t.router_logp for t in mb]),
                                   np.array([t.advantages[0] for t in mb]),
                                   np.array([t.returns[0] for t in mb]), cfg, "router")
                report["router_objective"].append(rep["objective"])
            with_align = [t for t in mb if len(t.align_actions)]
            if with_align:
                rep = _policy_step(
                    aligner, opts.align,
                    np.concatenate([t.align_features() for t in with_align]),
                    np.concatenate([t.align_actions for t in with_align]),
                    np.concatenate([t.align_logp for t in with_align]),
                    np.concatenate([t.advantages[1:] for t in with_align]),
                    np.concatenate([t.returns[1:] for t in with_align]), cfg, "alignment")
                report["align_objective"].append(rep["objective"])
            if scorer is not None and cfg.rec_lr > 0:
                pairs = [t.pairs for t in mb if t.pairs is not None]
                if pairs:
                    if len({p[2].shape for p in pairs}) == 1:
                        stacked = tuple(np.stack(col) for col in zip(*pairs))
                    else:
                        stacked = (np.concatenate([np.broadcast_to(p[0], p[2].shape) for p in pairs]),
                                   np.concatenate([np.broadcast_to(p[1], p[2].shape) for p in pairs]),
                                   np.concatenate([p[2] for p in pairs]))
                    loss, grads = preference_loss(scorer, ref, stacked, cfg.beta)
                    if not math.isfinite(loss):
                        raise FloatingPointError("non-finite preference loss")
                    clip_global_norm(grads, cfg.grad_max_norm)
                    opts.rec.step(grads)
                    report["pref_loss"].append(loss)
    return {k: float(np.mean(v)) if v else 0.0 for k, v in report.items()}


# -- training loop ----------------------------------------------------------

@dataclass
class TrainResult:
    metrics: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def _fmt(x) -> str:
    return str(x) if isinstance(x, (int, np.integer)) else f"{float(x):.10f}"


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue()


class InstanceStream:
    """Endless uniform sampling without replacement, reshuffled each pass."""

    def __init__(self, items: list, rng: np.random.Generator):
        if not items:
            raise ValueError("dataset is empty")
        self.items = items
        self.rng = rng
        self._order = np.zeros(0, dtype=np.int64)
        self._pos = 0
        self.passes = 0

    def __next__(self):
        if self._pos >= len(self._order):
            self._order = self.rng.permutation(len(self.items))
            self._pos = 0
            self.passes += 1
        item = self.items[self._order[self._pos]]
        self._pos += 1
        return item


def train(pipeline, instances: list, cfg: TrainConfig, holdout: list | None = None,
          log_every: bool = True) -> TrainResult:
    """Run ``cfg.iterations`` rollout/update rounds on ``pipeline`` in place.

    ``pipeline`` supplies ``router``, ``aligner``, ``scorer``, ``ref`` and a
    ``rollout(instance, rng, greedy)`` method returning a :class:`Trajectory`
    (plus evaluation fields). When ``holdout`` is ``None`` the last
    ``holdout_size`` instances are held out from training.
    """
    t0 = time.perf_counter()
    if holdout is None and cfg.holdout_size and len(instances) > cfg.holdout_size:
        holdout = instances[-cfg.holdout_size:]
        instances = instances[:-cfg.holdout_size]
    ss = np.random.SeedSequence(cfg.seed)
    data_rng, roll_rng, upd_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    stream = InstanceStream(instances, data_rng)
    pipeline.ref = refresh_reference(pipeline.scorer)
    opts = Optimizers.create(pipeline.router, pipeline.aligner, pipeline.scorer, cfg)
    result = TrainResult()
    for it in range(1, cfg.iterations + 1):
        if cfg.ref_refresh and it > 1 and (it - 1) % cfg.ref_refresh == 0:
            pipeline.ref = refresh_reference(pipeline.scorer)
        trajs = [pipeline.rollout(next(stream), roll_rng, greedy=False, with_pairs=True).trajectory
                 for _ in range(cfg.buffer_size)]
        assign_advantages(trajs, cfg.gamma, cfg.lam)
        router = pipeline.router if getattr(pipeline, "router_mode", "learned") == "learned" else None
        rep = update_policies(router, pipeline.aligner, trajs, cfg, opts, upd_rng,
                              scorer=pipeline.scorer, ref=pipeline.ref)
        hist = np.bincount([t.expert - 1 for t in trajs], minlength=N_EXPERTS)
        acc = float("nan")
        if holdout:
            acc = float(np.mean([pipeline.rollout(x, None, greedy=True).correct for x in holdout]))
        row = {
            "iteration": it,
            "mean_r_total": float(np.mean([t.reward.r_total for t in trajs])),
            "mean_delta_i": float(np.mean([t.reward.delta_i for t in trajs])),
            "mean_cost": float(np.mean([t.reward.cost for t in trajs])),
            "acc_holdout": acc,
        }
        for e in range(N_EXPERTS):
            row[f"frac_e{e + 1}"] = hist[e] / len(trajs)
        result.metrics.append(row)
        if log_every:
            logger.info("iter %d: R=%.4f dI=%.4f cost=%.3f acc=%.3f experts=%s pref=%.4f",
                        it, row["mean_r_total"], row["mean_delta_i"], row["mean_cost"], acc,
                        hist.tolist(), rep["pref_loss"])
    result.seconds = time.perf_counter() - t0
    return result


# -- checkpoints -------------------------------------------------------------

_NAME_LEN = struct.Struct("<H")
_SHAPE_DIM = struct.Struct("<I")


def _write_tensor(fh, name: str, arr: np.ndarray):
    b = name.encode("utf-8")
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(_NAME_LEN.pack(len(b)))
    fh.write(b)
    fh.write(struct.pack("<B", arr.ndim))
    for s in arr.shape:
        fh.write(_SHAPE_DIM.pack(s))
    fh.write(arr.astype("<f4").tobytes())


def save_checkpoint(path, tensors: dict[str, np.ndarray], config: dict | None = None):
    """Binary checkpoint: ``MMPO`` magic, u32 version, u32 tensor count, then tensors.

    Tensors are stored as float32. The run configuration travels as JSON bytes
    in a one-dimensional tensor named ``meta.config_json``.
    """
    items = dict(sorted(tensors.items()))
    if config is not None:
        raw = json.dumps(config, sort_keys=True).encode("utf-8")
        items[CONFIG_TENSOR] = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(items)))
        for name, arr in items.items():
            _write_tensor(fh, name, arr)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict | None]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = _NAME_LEN.unpack_from(data, off)
            off += 2
            name = data[off:off + n].decode("utf-8")
            off += n
            ndim = data[off]
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=off)
            off += 4 * size
            out[name] = arr.astype(np.float64).reshape(shape)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    config = None
    if CONFIG_TENSOR in out:
        config = json.loads(out.pop(CONFIG_TENSOR).astype(np.uint8).tobytes().decode("utf-8"))
    return out, config


def model_tensors(router, aligner, scorer, ref=None) -> dict[str, np.ndarray]:
    t = {f"router.{k}": v for k, v in router.state_dict().items()}
    t.update({f"align.{k}": v for k, v in aligner.state_dict().items()})
    t.update({f"rec.{k}": v for k, v in scorer.state_dict().items()})
    if ref is not None:
        t.update({f"ref.{k}": v for k, v in ref.state_dict().items()})
    return t


def load_model_tensors(tensors: dict, router, aligner, scorer, ref=None):
    for prefix, obj in (("router", router), ("align", aligner), ("rec", scorer), ("ref", ref)):
        if obj is None:
            continue
        state = {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
        if not state:
            if prefix == "ref":
                continue
            raise ValueError(f"checkpoint has no {prefix} parameters")
        obj.load_state_dict(state)


def config_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


__all__ = [
    "TrainConfig", "RouterPolicy", "Trajectory", "select_expert", "compute_gae",
    "normalize_advantages", "assign_advantages", "update_policies", "train",
    "save_checkpoint", "load_checkpoint", "metrics_to_csv",
]

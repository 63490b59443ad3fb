"""End-to-end training with validation-based choice of the number of rounds."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .attack import AttackConfig
from .certify import MultiClassModel, certified_margins
from .dataset import PreparedTask
from .loss import as_loss_kind
from .stumps import MODES, StumpBooster, StumpEnsemble
from .trees import TreeBooster, TreeEnsemble

log = logging.getLogger(__name__)

MODEL_KINDS = ("stumps", "trees")


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "trees"
    mode: str = "robust_bound"
    eps: float = 0.0
    n_rounds: int = 100
    max_depth: int = 4
    min_samples_leaf: int = 10
    w_max: float = 1.0
    shrinkage: float = 0.2
    loss_kind: str = "exponential"
    seed: int = 0
    val_frac: float = 0.2
    prune: bool = True
    adv_iters: int = 10
    adv_flip_prob: float = 0.5

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "robust_exact" and self.model_kind != "stumps":
            raise ValueError("robust_exact is only available for stumps")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("max_depth and min_samples_leaf must be >= 1")
        if not self.w_max > 0:
            raise ValueError("w_max must be > 0")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must be in (0, 1]")
        if not 0 <= self.val_frac < 1:
            raise ValueError("val_frac must be in [0, 1)")
        as_loss_kind(self.loss_kind)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    best_round: int
    val_curve: list = field(default_factory=list)  # (round, val_rte, val_te)
    objective_curve: list = field(default_factory=list)
    seconds: float = 0.0


def _make_booster(cfg: TrainConfig, X, y):
    attack_cfg = AttackConfig(n_iters=cfg.adv_iters, flip_prob=cfg.adv_flip_prob, seed=cfg.seed)
    if cfg.model_kind == "stumps":
        return StumpBooster(X, y, cfg.eps, mode=cfg.mode, loss_kind=cfg.loss_kind,
                            w_max=cfg.w_max, shrinkage=cfg.shrinkage, attack_cfg=attack_cfg)
    return TreeBooster(X, y, cfg.eps, mode=cfg.mode, loss_kind=cfg.loss_kind, w_max=cfg.w_max,
                       shrinkage=cfg.shrinkage, max_depth=cfg.max_depth,
                       min_samples_leaf=cfg.min_samples_leaf, attack_cfg=attack_cfg,
                       prune=cfg.prune)


def _val_scores(ens, X, y, eps):
    """(validation robust error from certification, validation clean error)."""
    if X.shape[0] == 0:
        return 0.0, 0.0
    clean = ens.functional_margin(X, y)
    cert = certified_margins(ens, X, y, eps) if len(ens) else clean
    return float(np.mean(cert <= 0)), float(np.mean(clean <= 0))


def train_binary(cfg: TrainConfig, X, y, X_val=None, y_val=None,
                 on_round: Optional[Callable] = None) -> TrainResult:
    """Boost for ``cfg.n_rounds`` and keep the prefix with the best validation RTE.

    Ties are broken by validation TE, then by the earlier round.  Without a
    validation set the full ensemble is returned.
    """
    t0 = time.perf_counter()
    booster = _make_booster(cfg, X, y)
    has_val = X_val is not None and len(X_val) > 0
    best = (np.inf, np.inf, 0)
    curve, objectives = [], [booster.objective()]
    if has_val:
        rte, te = _val_scores(booster.ensemble, X_val, y_val, cfg.eps)
        curve.append((0, rte, te))
        best = (rte, te, 0)
    for r in range(1, cfg.n_rounds + 1):
        info = booster.step()
        objectives.append(info.objective_after)
        if has_val:
            rte, te = _val_scores(booster.ensemble, X_val, y_val, cfg.eps)
            curve.append((r, rte, te))
            if (rte, te) < best[:2]:
                best = (rte, te, len(booster.ensemble))
        if on_round is not None:
            on_round(r, info)
        if not info.accepted and cfg.mode != "adversarial":
            log.info("round %d: no improving split, stopping", r)
            break
    ens = booster.ensemble
    n_keep = best[2] if has_val else len(ens)
    model = ens.truncate(n_keep)
    return TrainResult(model, n_keep, curve, objectives, time.perf_counter() - t0)


def train(cfg: TrainConfig, task: PreparedTask, on_round: Optional[Callable] = None):
    """Train on a prepared task; one-vs-all tasks give a MultiClassModel."""
    if not task.one_vs_all:
        return train_binary(cfg, task.X_train, task.y_train, task.X_val, task.y_val, on_round)
    members, rounds, curves, objs = [], [], [], []
    t0 = time.perf_counter()
    for c in range(len(task.classes)):
        res = train_binary(cfg, task.X_train, task.y_train[:, c], task.X_val,
                           task.y_val[:, c], on_round)
        members.append(res.model)
        rounds.append(res.best_round)
        curves.append(res.val_curve)
        objs.append(res.objective_curve)
    model = MultiClassModel(members, list(task.classes))
    return TrainResult(model, rounds, curves, objs, time.perf_counter() - t0)


def empty_model(cfg: TrainConfig, n_features: int):
    cls = StumpEnsemble if cfg.model_kind == "stumps" else TreeEnsemble
    return cls(n_features=n_features, loss_kind=cfg.loss_kind, eps_trained=cfg.eps,
               w_max=cfg.w_max, shrinkage=cfg.shrinkage)

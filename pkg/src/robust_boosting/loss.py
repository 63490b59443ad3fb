"""Margin losses and the convex leaf-weight solvers."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._backend import kernels

EXP_CLAMP = 700.0


class LossKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    LOGISTIC = "logistic"

    @property
    def code(self) -> int:
        return 0 if self is LossKind.EXPONENTIAL else 1


def as_loss_kind(kind) -> LossKind:
    return kind if isinstance(kind, LossKind) else LossKind(str(kind))


SIGN_DOMAINS = {"free": 0, "nonneg": 1, "neg": -1}


def margin_loss(kind, margin):
    """Loss of a functional margin y*F(x); works elementwise on arrays."""
    kind = as_loss_kind(kind)
    m = np.asarray(margin, dtype=float)
    if kind is LossKind.EXPONENTIAL:
        out = np.exp(-np.clip(m, -EXP_CLAMP, EXP_CLAMP))
    else:
        out = np.logaddexp(0.0, -m)
    return float(out) if out.ndim == 0 else out


def total_loss(kind, margins) -> float:
    """Sum of losses over points, accumulated in input order."""
    return float(np.add.reduce(np.atleast_1d(margin_loss(kind, margins)), dtype=float))


@dataclass(frozen=True)
class WeightedCase:
    gamma: float
    indicator: int
    label: int

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be finite and positive, got {self.gamma}")
        if self.indicator not in (0, 1):
            raise ValueError("indicator must be 0 or 1")
        if self.label not in (-1, 1):
            raise ValueError("label must be -1 or +1")


@dataclass(frozen=True)
class SigmaAggregates:
    sigma_11: float
    sigma_1m1: float
    sigma_01: float
    sigma_0m1: float


def sigma_aggregates(cases: Sequence[WeightedCase]) -> SigmaAggregates:
    s = {(i, l): 0.0 for i in (0, 1) for l in (-1, 1)}
    for c in cases:
        s[(c.indicator, c.label)] += c.gamma
    return SigmaAggregates(s[(1, 1)], s[(1, -1)], s[(0, 1)], s[(0, -1)])


class LeafFit(NamedTuple):
    w_l: float
    w_r: float
    loss: float


def _check_common(w_max, sign_domain):
    if not w_max > 0:
        raise ValueError("w_max must be positive")
    if sign_domain not in SIGN_DOMAINS:
        raise ValueError(f"sign_domain must be one of {sorted(SIGN_DOMAINS)}")


def fit_leaf_weights_offsets(left_offset, right_offset, labels, kind="exponential",
                             sign_domain="free", w_max=1.0, inner="closed_form") -> LeafFit:
    """Minimise sum_i L(min(a_i + y_i*w_l, b_i + y_i*(w_l + w_r))).

    ``a_i``/``b_i`` are the residual margins a point keeps when it ends up on
    the left/right side; ``inf`` marks a side the point cannot reach.  Both
    leaf values w_l and w_l + w_r are constrained to [-w_max, w_max] and the
    sign of w_r to ``sign_domain``.  ``inner`` picks how w_l is solved for a
    fixed w_r with the exponential loss: "closed_form" or "bisection".
    """
    kind = as_loss_kind(kind)
    _check_common(w_max, sign_domain)
    a = np.ascontiguousarray(left_offset, dtype=float)
    b = np.ascontiguousarray(right_offset, dtype=float)
    y = np.ascontiguousarray(labels, dtype=float)
    if not (a.shape == b.shape == y.shape) or a.ndim != 1 or a.size == 0:
        raise ValueError("offsets and labels must be equal-length nonempty vectors")
    if np.any(np.isinf(a) & np.isinf(b)):
        raise ValueError("every point needs at least one reachable side")
    finite = np.concatenate((a[np.isfinite(a)], b[np.isfinite(b)]))
    shift = float(finite.min())
    wl, wr, f = kernels().solve_pair(a, b, y, kind.code, SIGN_DOMAINS[sign_domain],
                                     float(w_max), shift, inner == "bisection")
    if kind is LossKind.EXPONENTIAL:
        f = f * np.exp(-np.clip(shift, -EXP_CLAMP, EXP_CLAMP))
    return LeafFit(float(wl), float(wr), float(f))


def fit_leaf_weights(cases: Sequence[WeightedCase], kind="exponential", sign_domain="free",
                     w_max=1.0, tol=1e-6, method="auto") -> LeafFit:
    """Fit (w_l, w_r) for cases whose side (indicator) is fixed.

    The objective is sum_i gamma_i * exp(-y_i*w_l - y_i*w_r*ind_i) for the
    exponential loss.  For the logistic loss gamma_i is read as
    exp(-residual margin), i.e. the objective is
    sum_i L(-ln gamma_i + y_i*w_l + y_i*w_r*ind_i).

    method: "auto" (closed form for exponential, profile search otherwise),
    "closed_form", "profile" or "bisection".  ``tol`` is accepted for API
    symmetry; the searches run to a fixed, much tighter precision.
    """
    kind = as_loss_kind(kind)
    _check_common(w_max, sign_domain)
    if not tol > 0:
        raise ValueError("tol must be positive")
    if len(cases) == 0:
        raise ValueError("cases must be nonempty")
    if method == "auto":
        method = "closed_form" if kind is LossKind.EXPONENTIAL else "profile"
    if method == "closed_form":
        if kind is not LossKind.EXPONENTIAL:
            raise ValueError("closed form is only available for the exponential loss")
        s = sigma_aggregates(cases)
        wl, wr, f = kernels().fixed_sides_exp(s.sigma_01, s.sigma_0m1, s.sigma_11,
                                              s.sigma_1m1, SIGN_DOMAINS[sign_domain],
                                              float(w_max))
        return LeafFit(float(wl), float(wr), float(f))
    off = np.array([-np.log(c.gamma) for c in cases])
    ind = np.array([c.indicator for c in cases])
    y = np.array([c.label for c in cases], dtype=float)
    a = np.where(ind == 0, off, np.inf)
    b = np.where(ind == 1, off, np.inf)
    return fit_leaf_weights_offsets(a, b, y, kind, sign_domain, w_max,
                                     inner="bisection" if method == "bisection" else "closed_form")


def fixed_case_objective(cases: Sequence[WeightedCase], kind, w_l, w_r) -> float:
    """Objective of ``fit_leaf_weights`` evaluated at given weights."""
    kind = as_loss_kind(kind)
    total = 0.0
    for c in cases:
        step = c.label * w_l + c.label * w_r * c.indicator
        if kind is LossKind.EXPONENTIAL:
            total += c.gamma * float(np.exp(-step))
        else:
            total += float(np.logaddexp(0.0, np.log(c.gamma) - step))
    return total

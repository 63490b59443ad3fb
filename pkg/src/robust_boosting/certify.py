"""Brute-force oracle, robustness metrics and multi-class certification."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig, cube_attack_batch
from .errors import TooManyCells, UnknownClass
from .stumps import StumpEnsemble, certify_stumps_batch
from .trees import TreeEnsemble

MAX_CELLS = 1_000_000


def _cell_representatives(x, eps, cuts):
    """Segment midpoints of [x-eps, x+eps] ∩ [0, 1] cut at the given thresholds.

    The model rule is x >= b, so a cut at b separates [.., b) from [b, ..).
    A cut sitting exactly on the right end of the interval leaves a single
    point cell {b}, which is represented by b itself.
    """
    lo = max(x - eps, 0.0)
    hi = min(x + eps, 1.0)
    if lo > hi:  # x outside [0, 1]; the feasible set is just the clipped end
        lo = hi = min(max(x, 0.0), 1.0)
    inner = np.unique(cuts[(cuts > lo) & (cuts <= hi)])
    if inner.size == 0:
        return np.array([0.5 * (lo + hi)])
    bounds = np.concatenate(([lo], inner, [hi]))
    reps = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            reps.append(0.5 * (a + b))
    if inner[-1] == hi:
        reps.append(hi)
    return np.array(reps)


def exact_margin_oracle(model, x, y, eps: float, max_cells: int = MAX_CELLS) -> float:
    """min of y*F over the eps-box ∩ [0,1]^d by evaluating every cell.

    ``model`` needs ``thresholds_by_coord()``, ``n_features`` and either
    ``functional_margin(X, y)`` or ``margin(X)``.
    """
    x = np.asarray(x, dtype=float)
    cuts = model.thresholds_by_coord()
    axes = []
    n_cells = 1
    for k in range(model.n_features):
        c = cuts.get(k)
        reps = _cell_representatives(x[k], eps, c) if c is not None else np.array([x[k]])
        n_cells *= reps.size
        if n_cells > max_cells:
            raise TooManyCells(f"more than {max_cells} cells")
        axes.append(reps)
    grid = np.array(list(itertools.product(*axes)), dtype=float)
    if hasattr(model, "functional_margin"):
        vals = model.functional_margin(grid, np.full(grid.shape[0], y))
    else:
        vals = y * model.margin(grid)
    return float(np.min(vals))


class MultiClassModel:
    """One ensemble per class; prediction is the argmax of the margins."""

    def __init__(self, per_class: Sequence, class_names: Sequence):
        if len(per_class) != len(class_names) or len(per_class) < 2:
            raise ValueError("need one ensemble per class and at least two classes")
        kinds = {m.model_kind for m in per_class}
        if len(kinds) != 1:
            raise ValueError("all member ensembles must be of the same kind")
        self.per_class = list(per_class)
        self.class_names = list(class_names)
        self.model_kind = kinds.pop()
        self.n_features = per_class[0].n_features

    def __len__(self):
        return len(self.class_names)

    def class_index(self, label) -> int:
        try:
            return self.class_names.index(label)
        except ValueError:
            raise UnknownClass(f"class {label!r} not in {self.class_names}") from None

    def margins(self, X) -> np.ndarray:
        return np.column_stack([m.margin(X) for m in self.per_class])

    def predict(self, X):
        idx = np.argmax(self.margins(X), axis=1)
        return np.array(self.class_names, dtype=object)[idx]

    def functional_margin(self, X, y) -> np.ndarray:
        """F_y(x) - max_{c != y} F_c(x); labels are class names."""
        F = self.margins(X)
        yi = np.array([self.class_index(v) for v in np.atleast_1d(y)])
        own = F[np.arange(F.shape[0]), yi]
        other = F.copy()
        other[np.arange(F.shape[0]), yi] = -np.inf
        return own - other.max(axis=1)

    def difference_ensemble(self, yi: int, c: int):
        a, b = self.per_class[yi], self.per_class[c]
        if isinstance(a, StumpEnsemble):
            return a.append(*b.negated().stumps)
        return a.append(*b.negated().trees)

    def thresholds_by_coord(self) -> dict:
        out = {}
        for m in self.per_class:
            for k, t in m.thresholds_by_coord().items():
                out[k] = np.union1d(out.get(k, np.array([])), t)
        return out


def certify_multiclass_batch(model: MultiClassModel, X, y, eps: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    yi = np.array([model.class_index(v) for v in y])
    out = np.full(X.shape[0], np.inf)
    for a in range(len(model)):
        rows = np.flatnonzero(yi == a)
        if rows.size == 0:
            continue
        for c in range(len(model)):
            if c == a:
                continue
            diff = model.difference_ensemble(a, c)
            ones = np.ones(rows.size)
            if isinstance(diff, StumpEnsemble):
                m, _ = certify_stumps_batch(diff, X[rows], ones, eps)
            else:
                m = diff.min_margins(X[rows], ones, eps)
            out[rows] = np.minimum(out[rows], m)
    return out


def certify_multiclass(model: MultiClassModel, x, y, eps: float):
    m = float(certify_multiclass_batch(model, np.asarray(x, dtype=float)[None, :], [y], eps)[0])
    return m > 0, m


def certified_margins(model, X, y, eps: float) -> np.ndarray:
    """Exact minimal margins for stumps, tree-wise lower bound for trees."""
    if isinstance(model, MultiClassModel):
        return certify_multiclass_batch(model, X, y, eps)
    if isinstance(model, StumpEnsemble):
        return certify_stumps_batch(model, X, y, eps)[0]
    return model.min_margins(X, y, eps)


@dataclass
class RobustnessReport:
    te: float
    lrte: float
    urte: float
    rte_exact: Optional[float]
    clean_margin: np.ndarray
    attack_margin: np.ndarray
    bound_margin: np.ndarray
    exact_margin: Optional[np.ndarray]
    labels: np.ndarray
    eps: float
    wall_times: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.clean_margin.size)

    def summary(self) -> dict:
        return {"n": self.n, "eps": self.eps, "te": self.te, "lrte": self.lrte,
                "rte_exact": self.rte_exact, "urte": self.urte}

    def per_point_rows(self):
        for i in range(self.n):
            yield (i, self.labels[i], self.clean_margin[i], self.attack_margin[i],
                   self.bound_margin[i],
                   None if self.exact_margin is None else self.exact_margin[i])


def _error_rate(margins) -> float:
    return float(np.mean(np.asarray(margins) <= 0)) if np.size(margins) else 0.0


def evaluate(model, X, y, eps: float, attack_cfg: AttackConfig = AttackConfig(),
             want_exact: bool = False, max_cells: int = MAX_CELLS) -> RobustnessReport:
    """TE, attack lower bound, certified upper bound and (when cheap) exact RTE."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y)
    times = {}
    t0 = time.perf_counter()
    clean = _functional(model, X, y)
    times["clean"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _, attacked, _ = cube_attack_batch(model, X, y, eps, attack_cfg)
    attacked = np.minimum(attacked, clean)
    times["attack"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    bound = certified_margins(model, X, y, eps)
    times["certify"] = time.perf_counter() - t0

    exact = None
    if isinstance(model, StumpEnsemble):
        exact = bound
    elif want_exact:
        t0 = time.perf_counter()
        try:
            exact = np.array([exact_margin_oracle(model, X[i], y[i], eps, max_cells)
                              for i in range(X.shape[0])])
        except TooManyCells:
            exact = None
        times["exact"] = time.perf_counter() - t0
    return RobustnessReport(
        te=_error_rate(clean), lrte=_error_rate(attacked), urte=_error_rate(bound),
        rte_exact=None if exact is None else _error_rate(exact),
        clean_margin=clean, attack_margin=attacked, bound_margin=bound, exact_margin=exact,
        labels=y, eps=float(eps), wall_times=times)


def _functional(model, X, y):
    return np.asarray(model.functional_margin(X, y), dtype=float)

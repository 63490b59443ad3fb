"""Boosted trees: evaluation, tree-wise certification bound and robust growing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ._backend import kernels
from ._split import CandidateSplit, choose_split
from .errors import EmptyReachableSet
from .loss import as_loss_kind, total_loss
from .stumps import MODES, NU, CertResult, RoundInfo, _as_matrix


@dataclass(frozen=True)
class TreeNode:
    """Split node; a missing child means that side ends in this node's value."""

    coord: int
    threshold: float
    w_l: float
    w_r: float
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf_node(self) -> bool:
        return self.left is None and self.right is None

    def value(self, x) -> float:
        if x[self.coord] >= self.threshold:
            return self.right.value(x) if self.right is not None else self.w_l + self.w_r
        return self.left.value(x) if self.left is not None else self.w_l

    def scaled(self, a: float) -> "TreeNode":
        return TreeNode(self.coord, self.threshold, a * self.w_l, a * self.w_r,
                        None if self.left is None else self.left.scaled(a),
                        None if self.right is None else self.right.scaled(a))

    def nodes(self):
        yield self
        if self.left is not None:
            yield from self.left.nodes()
        if self.right is not None:
            yield from self.right.nodes()


@dataclass(frozen=True)
class Tree:
    root: TreeNode

    @property
    def depth(self) -> int:
        def dep(node):
            if node is None:
                return 0
            return 1 + max(dep(node.left), dep(node.right))
        return dep(self.root)

    @property
    def n_leaves(self) -> int:
        # each node contributes one terminal region per missing child
        return sum((n.left is None) + (n.right is None) for n in self.root.nodes())

    @property
    def n_nodes(self) -> int:
        return sum(1 for _ in self.root.nodes())

    def predict(self, x) -> float:
        return self.root.value(np.asarray(x, dtype=float))

    def leaf_values(self):
        out = []
        for n in self.root.nodes():
            if n.left is None:
                out.append(n.w_l)
            if n.right is None:
                out.append(n.w_l + n.w_r)
        return out


def _flatten(trees):
    feat, thr, wl, wr, left, right, roots = [], [], [], [], [], [], []

    def add(node):
        idx = len(feat)
        feat.append(node.coord)
        thr.append(node.threshold)
        wl.append(node.w_l)
        wr.append(node.w_r)
        left.append(-1)
        right.append(-1)
        if node.left is not None:
            left[idx] = add(node.left)
        if node.right is not None:
            right[idx] = add(node.right)
        return idx

    for tree in trees:
        roots.append(add(tree.root))
    return (np.array(feat, dtype=np.int64), np.array(thr, dtype=float), np.array(wl, dtype=float),
            np.array(wr, dtype=float), np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64), np.array(roots, dtype=np.int64))


class TreeEnsemble:
    model_kind = "trees"

    def __init__(self, trees: Iterable[Tree] = (), n_features: Optional[int] = None,
                 loss_kind="exponential", eps_trained: float = 0.0, w_max: float = 1.0,
                 shrinkage: float = 1.0):
        self.trees = tuple(trees)
        if n_features is None:
            n_features = max((n.coord for t in self.trees for n in t.root.nodes()), default=0) + 1
        self.n_features = int(n_features)
        self.loss_kind = as_loss_kind(loss_kind)
        self.eps_trained = float(eps_trained)
        self.w_max = float(w_max)
        self.shrinkage = float(shrinkage)
        self.arrays = _flatten(self.trees)
        if self.arrays[0].size and self.arrays[0].max() >= self.n_features:
            raise ValueError("tree node coordinate outside the feature range")

    def __len__(self):
        return len(self.trees)

    def __eq__(self, other):
        return (isinstance(other, TreeEnsemble) and self.trees == other.trees
                and self.n_features == other.n_features)

    def __repr__(self):
        return f"TreeEnsemble(T={len(self)}, d={self.n_features})"

    def _meta(self):
        return dict(n_features=self.n_features, loss_kind=self.loss_kind,
                    eps_trained=self.eps_trained, w_max=self.w_max, shrinkage=self.shrinkage)

    def replace(self, trees=None, **meta) -> "TreeEnsemble":
        kw = self._meta()
        kw.update(meta)
        return TreeEnsemble(self.trees if trees is None else trees, **kw)

    def append(self, *trees: Tree) -> "TreeEnsemble":
        return self.replace(self.trees + tuple(trees))

    def truncate(self, n: int) -> "TreeEnsemble":
        return self.replace(self.trees[:n])

    def negated(self) -> "TreeEnsemble":
        return self.replace(tuple(Tree(t.root.scaled(-1.0)) for t in self.trees))

    def margin(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return kernels().tree_margins(X, *self.arrays)

    decision_function = margin

    def functional_margin(self, X, y) -> np.ndarray:
        return np.asarray(y, dtype=float) * self.margin(X)

    def min_margins(self, X, y, eps: float) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        y = np.asarray(y, dtype=float).reshape(X.shape[0])
        return kernels().tree_min_margins(X, y, float(eps), *self.arrays)

    def thresholds_by_coord(self) -> dict:
        out = {}
        for k, b in self.split_points():
            out.setdefault(k, set()).add(b)
        return {k: np.array(sorted(v)) for k, v in sorted(out.items())}

    def split_points(self):
        return [(n.coord, n.threshold) for t in self.trees for n in t.root.nodes()]

    def leaf_values(self) -> np.ndarray:
        return np.array([v for t in self.trees for v in t.leaf_values()])


def tree_min_margin(tree: Tree, x, y: int, eps: float) -> float:
    """Minimum of y*f(x') over leaves reachable from the eps-box around x."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = np.asarray(x, dtype=float)
    best = np.inf
    stack = [tree.root]
    while stack:
        node = stack.pop()
        xj, b = x[node.coord], node.threshold
        if xj <= b + eps:
            if node.left is not None:
                stack.append(node.left)
            else:
                best = min(best, y * node.w_l)
        if xj >= b - eps:
            if node.right is not None:
                stack.append(node.right)
            else:
                best = min(best, y * (node.w_l + node.w_r))
    return float(best)


def certify_trees_bound(ens: TreeEnsemble, x, y: int, eps: float) -> CertResult:
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    m = float(ens.min_margins(x, [y], eps)[0]) if len(ens) else 0.0
    return CertResult(m, m > 0, None, False)


def certify_trees_batch(ens: TreeEnsemble, X, y, eps: float) -> np.ndarray:
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return ens.min_margins(X, y, eps)


class _NodeData:
    """Read-only training arrays shared by every node of a tree build."""

    def __init__(self, X, y, g, eps, loss_kind, w_max, min_leaf, nu):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.XT = np.ascontiguousarray(self.X.T)
        self.order = np.ascontiguousarray(np.argsort(self.X, axis=0, kind="stable").T)
        self.y = np.ascontiguousarray(y, dtype=float)
        self.g = np.ascontiguousarray(g, dtype=float)
        self.eps = float(eps)
        self.code = as_loss_kind(loss_kind).code
        self.w_max = float(w_max)
        self.min_leaf = int(min_leaf)
        self.nu = float(nu)

    def evaluate(self, mask, j, thresholds, min_leaf=None):
        shift = float(self.g[mask].min())
        return kernels().bound_threshold_losses(
            self.XT, self.order, mask, self.g, self.y, shift, self.eps,
            self.min_leaf if min_leaf is None else min_leaf, self.w_max, self.code, j,
            np.ascontiguousarray(thresholds, dtype=float))

    def best_split(self, mask, lo, hi) -> Optional[CandidateSplit]:
        shift = float(self.g[mask].min())
        summary = kernels().bound_split_search(
            self.XT, self.order, mask, self.g, self.y, shift, self.eps, self.nu, lo, hi,
            self.min_leaf, self.w_max, self.code)
        return choose_split(summary, lambda j, ts: self.evaluate(mask, j, ts))


def fit_robust_split(X, y, residuals, I, coord: int, b: float, eps: float,
                     loss_kind="exponential", w_max: float = 1.0, tol: float = 1e-6):
    """Leaf weights and loss of one split for the reachable points I.

    Returns (w_l, w_r, loss) with the loss in absolute units.
    """
    X = np.asarray(X, dtype=float)
    mask = np.zeros(X.shape[0], dtype=bool)
    mask[np.asarray(I, dtype=np.int64)] = True
    if not mask.any():
        raise EmptyReachableSet("no reachable points")
    data = _NodeData(X, y, residuals, eps, loss_kind, w_max, 1, NU)
    f, wl, wr = data.evaluate(mask, coord, [b], min_leaf=0)[0]
    if as_loss_kind(loss_kind).code == 0:
        f *= np.exp(-np.clip(data.g[mask].min(), -700, 700))
    return float(wl), float(wr), float(f)


def build_robust_tree(X, y, residuals, eps: float, max_depth: int = 4, min_samples_leaf: int = 10,
                      loss_kind="exponential", w_max: float = 1.0, nu: float = NU,
                      _data: Optional[_NodeData] = None) -> Optional[Tree]:
    """Greedy top-down tree minimising the tree-wise robust loss bound.

    A point joins every child whose region its eps-box intersects.  Returns
    None when the root has no admissible split.
    """
    if max_depth < 1 or min_samples_leaf < 1 or eps < 0:
        raise ValueError("need max_depth >= 1, min_samples_leaf >= 1, eps >= 0")
    data = _data or _NodeData(X, y, residuals, eps, loss_kind, w_max, min_samples_leaf, nu)
    d = data.X.shape[1]

    def grow(mask, depth, lo, hi):
        split = data.best_split(mask, lo, hi)
        if split is None:
            return None
        j, b = split.coord, split.threshold
        left = right = None
        if depth < max_depth:
            col = data.X[:, j]
            lhi = hi.copy()
            lhi[j] = min(hi[j], b)
            rlo = lo.copy()
            rlo[j] = max(lo[j], b)
            left = grow(mask & (col <= b + data.eps), depth + 1, lo, lhi)
            right = grow(mask & (col >= b - data.eps), depth + 1, rlo, hi)
        return TreeNode(j, b, split.w_l, split.w_r, left, right)

    root = grow(np.ones(data.X.shape[0], dtype=bool), 1, np.zeros(d), np.ones(d))
    return None if root is None else Tree(root)


def tree_bound_objective(tree: Optional[Tree], X, y, residuals, eps: float, loss_kind) -> float:
    """Training bound sum_i L(residual_i + min-margin of this tree)."""
    if tree is None:
        return total_loss(loss_kind, residuals)
    single = TreeEnsemble([tree], n_features=np.asarray(X).shape[1])
    return total_loss(loss_kind, np.asarray(residuals) + single.min_margins(X, y, eps))


def _replace_at(node: TreeNode, path, new: TreeNode) -> TreeNode:
    if not path:
        return new
    if path[0] == "L":
        return TreeNode(node.coord, node.threshold, node.w_l, node.w_r,
                        _replace_at(node.left, path[1:], new), node.right)
    return TreeNode(node.coord, node.threshold, node.w_l, node.w_r, node.left,
                    _replace_at(node.right, path[1:], new))


def _node_at(node, path):
    for step in path:
        node = node.left if step == "L" else node.right
    return node


def prune_tree(tree: Tree, X, y, residuals, eps: float, loss_kind="exponential") -> Tree:
    """Bottom-up pruning on the training bound; a prune is kept when it does not hurt."""
    paths = []

    def post(node, path):
        if node.left is not None:
            post(node.left, path + ("L",))
        if node.right is not None:
            post(node.right, path + ("R",))
        if not node.is_leaf_node:
            paths.append(path)

    post(tree.root, ())
    current = tree
    best = tree_bound_objective(current, X, y, residuals, eps, loss_kind)
    for path in paths:
        node = _node_at(current.root, path)
        if node is None or node.is_leaf_node:
            continue
        leaf = TreeNode(node.coord, node.threshold, node.w_l, node.w_r)
        cand = Tree(_replace_at(current.root, path, leaf))
        val = tree_bound_objective(cand, X, y, residuals, eps, loss_kind)
        if val <= best:
            current, best = cand, val
    return current


@dataclass
class TreeBooster:
    X: np.ndarray
    y: np.ndarray
    eps: float
    mode: str = "robust_bound"
    loss_kind: str = "exponential"
    w_max: float = 1.0
    shrinkage: float = 0.2
    max_depth: int = 4
    min_samples_leaf: int = 10
    ensemble: Optional[TreeEnsemble] = None
    attack_cfg: object = None
    nu: float = NU
    prune: bool = True
    _warm: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES or self.mode == "robust_exact":
            raise ValueError(f"mode {self.mode!r} is not available for trees")
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        self.loss_kind = as_loss_kind(self.loss_kind)
        if self.ensemble is None:
            self.ensemble = TreeEnsemble(n_features=self.X.shape[1], loss_kind=self.loss_kind,
                                         eps_trained=self.eps, w_max=self.w_max,
                                         shrinkage=self.shrinkage)
        self._bound_eps = self.eps if self.mode == "robust_bound" else 0.0
        self.g = self._tree_margins(self.ensemble)
        self._data = None
        if self.mode != "adversarial":
            self._data = _NodeData(self.X, self.y, self.g, self._bound_eps, self.loss_kind,
                                   self.w_max, self.min_samples_leaf, self.nu)

    def _tree_margins(self, ens):
        if not len(ens):
            return np.zeros(self.X.shape[0])
        if self.mode == "robust_bound":
            return ens.min_margins(self.X, self.y, self._bound_eps)
        return ens.functional_margin(self.X, self.y)

    def objective(self) -> float:
        return total_loss(self.loss_kind, self.g)

    def _new_tree(self):
        if self.mode == "adversarial":
            from .attack import AttackConfig, make_adversarial_batch

            cfg = self.attack_cfg or AttackConfig(n_iters=10, flip_prob=0.5, seed=0)
            Xa, ya, self._warm = make_adversarial_batch(self.ensemble, self.X, self.y, self.eps,
                                                        cfg, warm_start=self._warm)
            ga = self.ensemble.functional_margin(Xa, ya)
            return build_robust_tree(Xa, ya, ga, 0.0, self.max_depth, self.min_samples_leaf,
                                     self.loss_kind, self.w_max, self.nu)
        self._data.g = self.g
        tree = build_robust_tree(self.X, self.y, self.g, self._bound_eps, self.max_depth,
                                 self.min_samples_leaf, self.loss_kind, self.w_max, self.nu,
                                 _data=self._data)
        if tree is not None and self.prune:
            tree = prune_tree(tree, self.X, self.y, self.g, self._bound_eps, self.loss_kind)
        return tree

    def _gain(self, tree):
        g_new = self.g + self._tree_margins(TreeEnsemble([tree], n_features=self.X.shape[1]))
        return g_new, total_loss(self.loss_kind, g_new)

    def step(self) -> RoundInfo:
        before = self.objective()
        tree = self._new_tree()
        if tree is None:
            return RoundInfo(None, False, before, before)
        tree = Tree(tree.root.scaled(self.shrinkage))
        g_new, after = self._gain(tree)
        root = tree.root
        info = CandidateSplit(root.coord, root.threshold, root.w_l, root.w_r, after)
        if self.mode != "adversarial" and after > before:
            # fall back to the root stump, which can only fail through rounding
            tree = Tree(TreeNode(root.coord, root.threshold, root.w_l, root.w_r))
            g_new, after = self._gain(tree)
            if after > before:
                return RoundInfo(info, False, before, before)
        self.ensemble = self.ensemble.append(tree)
        self.g = g_new
        return RoundInfo(info, True, before, after)


def boost_round_trees(X, y, ens: TreeEnsemble, eps: float, mode: str = "robust_bound",
                      shrinkage: float = 0.2, max_depth: int = 4, min_samples_leaf: int = 10,
                      w_max: float = 1.0, loss_kind="exponential", attack_cfg=None) -> TreeEnsemble:
    booster = TreeBooster(X, y, eps, mode=mode, loss_kind=loss_kind, w_max=w_max,
                          shrinkage=shrinkage, max_depth=max_depth,
                          min_samples_leaf=min_samples_leaf, ensemble=ens, attack_cfg=attack_cfg)
    booster.step()
    return booster.ensemble

"""Multi-output CART regression forest with impurity-based feature importances.

Node impurity is the sum over outputs of the per-output variance. A split on
feature v adds ``(n_node / n_root) * (impurity decrease)`` to importance[v];
this equals ``(SSE_node - SSE_left - SSE_right) / n_root``. Importances are
normalized per tree and averaged over trees that made at least one split.

Feature subsampling draws, at every node, a hash key per feature from
(tree seed, node number, feature id) and keeps the smallest keys. Because keys
depend on feature ids rather than column positions, permuting the columns of X
together with ``feature_ids`` permutes the fitted importances exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * _M1
        x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _feature_keys(tree_seed: int, node: int, feature_ids: np.ndarray) -> np.ndarray:
    base = _splitmix(np.array([tree_seed * 1_000_003 + node], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return _splitmix(feature_ids.astype(np.uint64) ^ base)


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int = 2
    max_features: float = 1.0 / 3.0   # fraction of features tried per node
    bootstrap: bool = True
    seed: int = 0
    n_jobs: int = 1


class RegressionTree:
    def __init__(self, max_depth: int | None = None, min_leaf: int = 2, max_features: float = 1.0,
                 seed: int = 0):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.seed = seed

    def _best_split(self, x: np.ndarray, yc: np.ndarray, fids: np.ndarray):
        """Best (gain, column, threshold) over the columns of ``x`` for centered targets ``yc``."""
        n = x.shape[0]
        order = np.argsort(x, axis=0, kind="stable")
        xs = np.take_along_axis(x, order, axis=0)
        ys = yc[order]                                   # (n, m, c)
        s1 = np.cumsum(ys, axis=0)[:-1]                  # left sums for k = 1..n-1
        s2 = np.cumsum(ys * ys, axis=0)[:-1]
        tot1 = s1[-1] + ys[-1]
        tot2 = s2[-1] + ys[-1] ** 2
        k = np.arange(1, n, dtype=np.float64)[:, None]
        sse_l = (s2 - s1 ** 2 / k[..., None]).sum(axis=-1)
        r1, r2 = tot1 - s1, tot2 - s2
        sse_r = (r2 - r1 ** 2 / (n - k)[..., None]).sum(axis=-1)
        sse = (tot2 - tot1 ** 2 / n).sum(axis=-1)
        gain = sse[None, :] - sse_l - sse_r               # (n-1, m)
        valid = xs[1:] > xs[:-1]
        pos = np.arange(1, n)[:, None]
        valid &= (pos >= self.min_leaf) & (n - pos >= self.min_leaf)
        gain = np.where(valid, gain, -np.inf)
        best_k = gain.argmax(axis=0)
        best_gain = gain[best_k, np.arange(x.shape[1])]
        if not np.isfinite(best_gain).any():
            return None
        top = best_gain.max()
        cand = np.flatnonzero(best_gain == top)
        col = cand[np.argmin(fids[cand])]
        kk = best_k[col]
        thr = 0.5 * (xs[kk, col] + xs[kk + 1, col])
        if not xs[kk, col] < thr <= xs[kk + 1, col]:
            thr = xs[kk, col]
        return top, col, thr

    def fit(self, X: np.ndarray, Y: np.ndarray, sample_idx: np.ndarray | None = None,
            feature_ids: np.ndarray | None = None) -> "RegressionTree":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        n_all, p = X.shape
        fids = np.arange(p) if feature_ids is None else np.asarray(feature_ids)
        idx_root = np.arange(n_all) if sample_idx is None else np.asarray(sample_idx)
        n_root = len(idx_root)
        m = max(1, int(p * self.max_features)) if self.max_features < 1.0 else p

        feature, threshold, left, right, value = [], [], [], [], []
        imp = np.zeros(p)
        counter = 0
        # (node slot, sample indices, depth)
        stack = [(self._new_node(feature, threshold, left, right, value), idx_root, 0)]
        while stack:
            node, idx, depth = stack.pop()
            yn = Y[idx]
            mean = yn.mean(axis=0)
            value[node] = mean
            nid = counter
            counter += 1
            n = len(idx)
            if n < 2 * self.min_leaf or (self.max_depth is not None and depth >= self.max_depth):
                continue
            yc = yn - mean
            if not np.any(yc):
                continue
            if m < p:
                cols = np.sort(np.argsort(_feature_keys(self.seed, nid, fids), kind="stable")[:m])
            else:
                cols = np.arange(p)
            found = self._best_split(X[np.ix_(idx, cols)], yc, fids[cols])
            if found is None or not found[0] > 0:
                continue
            gain, c, thr = found
            f = cols[c]
            go_left = X[idx, f] <= thr
            feature[node], threshold[node] = f, thr
            imp[f] += gain / n_root
            l_node = self._new_node(feature, threshold, left, right, value)
            r_node = self._new_node(feature, threshold, left, right, value)
            left[node], right[node] = l_node, r_node
            # right pushed first so the left subtree is numbered first
            stack.append((r_node, idx[~go_left], depth + 1))
            stack.append((l_node, idx[go_left], depth + 1))

        self.feature_ = np.array(feature)
        self.threshold_ = np.array(threshold, dtype=np.float64)
        self.left_ = np.array(left)
        self.right_ = np.array(right)
        self.value_ = np.array(value)
        self.n_splits_ = int(np.sum(self.feature_ >= 0))
        total = imp.sum()
        self.raw_importances_ = imp
        self.feature_importances_ = imp / total if total > 0 else imp
        return self

    @staticmethod
    def _new_node(feature, threshold, left, right, value) -> int:
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(None)
        return len(feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature_[node]
            inner = f >= 0
            if not inner.any():
                break
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold_[node[rows]]
            node[rows] = np.where(go_left, self.left_[node[rows]], self.right_[node[rows]])
        return self.value_[node]


class RegressionForest:
    def __init__(self, params: ForestParams | None = None, **kw):
        self.params = params or ForestParams(**kw)

    def _fit_tree(self, t: int, X, Y, fids) -> RegressionTree:
        prm = self.params
        tree_seed = int(np.random.SeedSequence([prm.seed, t]).generate_state(1)[0])
        n = len(X)
        if prm.bootstrap:
            idx = np.random.default_rng([prm.seed, t]).integers(0, n, n)
        else:
            idx = np.arange(n)
        tree = RegressionTree(prm.max_depth, prm.min_leaf, prm.max_features, seed=tree_seed)
        return tree.fit(X, Y, idx, fids)

    def fit(self, X, Y, feature_ids=None) -> "RegressionForest":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or len(X) != len(Y):
            raise ValueError(f"X {X.shape} and Y {Y.shape} do not align")
        if len(X) < 2 * self.params.min_leaf:
            raise ValueError(f"need at least {2 * self.params.min_leaf} samples, got {len(X)}")
        fids = np.arange(X.shape[1]) if feature_ids is None else np.asarray(feature_ids)
        if self.params.n_jobs > 1:
            with ThreadPoolExecutor(self.params.n_jobs) as ex:
                self.trees = list(ex.map(lambda t: self._fit_tree(t, X, Y, fids), range(self.params.n_trees)))
        else:
            self.trees = [self._fit_tree(t, X, Y, fids) for t in range(self.params.n_trees)]
        split_trees = [t.feature_importances_ for t in self.trees if t.n_splits_ > 0]
        self.degenerate = not split_trees
        if self.degenerate:
            self.feature_importances_ = np.zeros(X.shape[1])
        else:
            self.feature_importances_ = np.mean(split_trees, axis=0)
        return self

    def predict(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)


def fit_forest(X, Y, params: ForestParams | None = None, feature_ids=None) -> RegressionForest:
    return RegressionForest(params).fit(X, Y, feature_ids)

"""CART regression trees used by the forest and boosting models.

Plain variance-reduction splits, optional per-split feature subsampling,
deterministic tie-breaking (lowest candidate-feature slot, then lowest
split position).  Nodes are stored in flat arrays; `apply` returns leaf
ids so callers can do their own leaf aggregation.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RegressionTree"]

_LEAF = -1


class RegressionTree:
    """Binary regression tree grown by recursive variance reduction."""

    def __init__(self, max_depth: int | None = None, min_leaf: int = 1,
                 mtry: int | None = None):
        if min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        # filled by fit()
        self.feature: np.ndarray | None = None
        self.threshold: np.ndarray | None = None
        self.left: np.ndarray | None = None
        self.right: np.ndarray | None = None
        self.value: np.ndarray | None = None

    def fit(self, X: np.ndarray, y: np.ndarray,
            rng: np.random.Generator | None = None) -> "RegressionTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        if y.shape[0] != n:
            raise ValueError("X and y row counts differ")
        mtry = self.mtry if self.mtry is not None else p
        mtry = min(max(1, mtry), p)
        max_depth = self.max_depth if self.max_depth is not None else 10**9

        feature, threshold, left, right, value = [], [], [], [], []

        def new_node():
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            value.append(0.0)
            return len(feature) - 1

        root = new_node()
        stack = [(root, np.arange(n), 0)]
        while stack:
            node, idx, depth = stack.pop()
            y_node = y[idx]
            value[node] = float(y_node.mean())
            if (depth >= max_depth or idx.size < 2 * self.min_leaf
                    or np.ptp(y_node) == 0.0):
                continue
            if mtry < p:
                feats = np.sort(rng.choice(p, size=mtry, replace=False))
            else:
                feats = np.arange(p)
            split = _best_split(X[np.ix_(idx, feats)], y_node, self.min_leaf)
            if split is None:
                continue
            f_slot, thr = split
            f = int(feats[f_slot])
            mask = X[idx, f] <= thr
            l_node, r_node = new_node(), new_node()
            feature[node] = f
            threshold[node] = thr
            left[node] = l_node
            right[node] = r_node
            stack.append((r_node, idx[~mask], depth + 1))
            stack.append((l_node, idx[mask], depth + 1))

        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        return self

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node id for every row of X."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0], dtype=np.int64)
        active = np.arange(X.shape[0])
        node_of = np.zeros(X.shape[0], dtype=np.int64)
        while active.size:
            nodes = node_of[active]
            is_leaf = self.feature[nodes] == _LEAF
            out[active[is_leaf]] = nodes[is_leaf]
            active = active[~is_leaf]
            if not active.size:
                break
            nodes = node_of[active]
            go_left = X[active, self.feature[nodes]] <= self.threshold[nodes]
            node_of[active] = np.where(go_left, self.left[nodes],
                                       self.right[nodes])
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def set_leaf_values(self, leaf_ids: np.ndarray,
                        new_values: np.ndarray) -> None:
        """Overwrite the prediction of selected leaves (boosting refit)."""
        self.value = self.value.copy()
        self.value[leaf_ids] = new_values

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.feature == _LEAF)


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (feature slot, threshold) by total child SSE, or None.

    Vectorized over all candidate features at once.  Tie-break: first
    feature slot, then earliest split position, via argmin order.
    """
    n, m = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    tot_sum = csum[-1]
    tot_sq = csq[-1]

    k = np.arange(1, n, dtype=float)[:, None]          # left sizes
    ls, lq = csum[:-1], csq[:-1]
    sse_left = lq - ls * ls / k
    rs = tot_sum - ls
    rq = tot_sq - lq
    sse_right = rq - rs * rs / (n - k)
    score = sse_left + sse_right

    valid = (xs[:-1] < xs[1:]) & (k >= min_leaf) & (n - k >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score.T))                      # feature-major
    f_slot, pos = divmod(flat, n - 1)
    thr = 0.5 * (xs[pos, f_slot] + xs[pos + 1, f_slot])
    # midpoint can collapse onto the upper value for adjacent floats
    if not xs[pos, f_slot] <= thr < xs[pos + 1, f_slot]:
        thr = xs[pos, f_slot]
    return f_slot, float(thr)

"""CART trees stored as flat node arrays.

Internal nodes send ``x[feature] <= threshold`` left. Leaves have
``feature == -1`` and carry ``value`` (class distribution for
classification trees, a scalar score for gradient-boosting trees).
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def apply(self, X):
        """Leaf index reached by every row."""
        X = np.asarray(X, dtype=np.float64)
        rows = np.arange(len(X))
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            go_left = X[rows, np.where(internal, feat, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(internal, nxt, node)

    def predict_value(self, X):
        return self.value[self.apply(X)]

    def arrays(self, prefix=""):
        return {f"{prefix}feature": self.feature, f"{prefix}threshold": self.threshold,
                f"{prefix}left": self.left, f"{prefix}right": self.right, f"{prefix}value": self.value}

    @classmethod
    def from_arrays(cls, arrays, prefix=""):
        return cls(*(np.asarray(arrays[prefix + k]) for k in ("feature", "threshold", "left", "right", "value")))


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(np.asarray(value, dtype=np.float64))
        return len(self.feature) - 1

    def tree(self):
        return Tree(np.array(self.feature, dtype=np.int64), np.array(self.threshold, dtype=np.float64),
                    np.array(self.left, dtype=np.int64), np.array(self.right, dtype=np.int64),
                    np.array(self.value, dtype=np.float64).reshape(len(self.value), -1))


def _candidate_splits(x):
    """Sort order and positions i where a cut between sorted i and i+1 is possible."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    pos = np.flatnonzero(xs[:-1] < xs[1:])
    return order, xs, pos


def _gini_split(x, y, w, min_leaf):
    order, xs, pos = _candidate_splits(x)
    if len(pos) == 0:
        return None
    ws = w[order]
    w1 = np.cumsum(ws * (y[order] == 1))
    wl = np.cumsum(ws)
    total, total1 = wl[-1], w1[-1]
    counts = np.arange(1, len(x) + 1)
    pos = pos[(counts[pos] >= min_leaf) & (len(x) - counts[pos] >= min_leaf)]
    if len(pos) == 0:
        return None
    l_w, l_1 = wl[pos], w1[pos]
    r_w, r_1 = total - l_w, total1 - l_1
    with np.errstate(invalid="ignore", divide="ignore"):
        pl = np.where(l_w > 0, l_1 / l_w, 0.0)
        pr = np.where(r_w > 0, r_1 / r_w, 0.0)
    impurity = l_w * 2 * pl * (1 - pl) + r_w * 2 * pr * (1 - pr)
    best = int(np.argmin(impurity))
    i = pos[best]
    return float(impurity[best]), 0.5 * (xs[i] + xs[i + 1])


def _class_dist(y, w):
    total = w.sum()
    p1 = (w * (y == 1)).sum() / total if total > 0 else 0.5
    return [1.0 - p1, p1]


def build_classification_tree(X, y, sample_weight=None, max_depth=None, max_features=None,
                              rng=None, min_samples_leaf=1):
    """Gini CART for binary labels; ``max_features`` features are drawn per node."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    n_features = X.shape[1]
    k = n_features if max_features is None else min(max_features, n_features)
    builder = _Builder()
    root = builder.add(_class_dist(y, w))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn, wn = y[idx], w[idx]
        dist = builder.value[node]
        parent_impurity = wn.sum() * 2 * dist[1] * (1 - dist[1])
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 or parent_impurity <= 1e-12:
            continue
        feats = np.arange(n_features) if k == n_features else np.sort(rng.choice(n_features, k, replace=False))
        best = None
        for f in feats:
            found = _gini_split(X[idx, f], yn, wn, min_samples_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], found[1], f)
        if best is None or best[0] >= parent_impurity - 1e-12:
            continue
        _, thr, f = best
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        lnode = builder.add(_class_dist(y[li], w[li]))
        rnode = builder.add(_class_dist(y[ri], w[ri]))
        builder.feature[node], builder.threshold[node] = int(f), float(thr)
        builder.left[node], builder.right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return builder.tree()


def build_gradient_tree(X, grad, hess, max_depth=3, lam=1.0, min_child_weight=1e-3):
    """Second-order regression tree: split gain from (G, H) sums, leaf = -G/(H+lam)."""
    X = np.asarray(X, dtype=np.float64)
    builder = _Builder()

    def leaf_value(idx):
        return [-grad[idx].sum() / (hess[idx].sum() + lam)]

    root = builder.add(leaf_value(np.arange(len(grad))))
    stack = [(root, np.arange(len(grad)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < 2:
            continue
        g, h = grad[idx], hess[idx]
        G, H = g.sum(), h.sum()
        base = G * G / (H + lam)
        best = None
        for f in range(X.shape[1]):
            order, xs, pos = _candidate_splits(X[idx, f])
            if len(pos) == 0:
                continue
            gl = np.cumsum(g[order])[pos]
            hl = np.cumsum(h[order])[pos]
            gr, hr = G - gl, H - hl
            ok = (hl >= min_child_weight) & (hr >= min_child_weight)
            if not ok.any():
                continue
            gain = np.where(ok, gl * gl / (hl + lam) + gr * gr / (hr + lam) - base, -np.inf)
            i = int(np.argmax(gain))
            if best is None or gain[i] > best[0]:
                best = (float(gain[i]), 0.5 * (xs[pos[i]] + xs[pos[i] + 1]), f)
        if best is None or best[0] <= 1e-12:
            continue
        _, thr, f = best
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        lnode, rnode = builder.add(leaf_value(li)), builder.add(leaf_value(ri))
        builder.feature[node], builder.threshold[node] = int(f), float(thr)
        builder.left[node], builder.right[node] = lnode, rnode
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return builder.tree()

"""CART trees, random forest (Gini, bootstrap) and gradient boosting (binomial deviance)."""
from __future__ import annotations

import numpy as np

GINI, MSE = "gini", "mse"
LEAF = -1


class Tree:
    """Array-backed binary tree; ``feature == -1`` marks a leaf."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.n: list[float] = []
        self.depth: list[int] = []

    def _add(self, value, n, depth) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        self.n.append(float(n))
        self.depth.append(int(depth))
        return len(self.feature) - 1

    def freeze(self) -> "Tree":
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=float)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=float)
        self.n = np.asarray(self.n, dtype=float)
        self.depth = np.asarray(self.depth, dtype=np.int64)
        return self

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return int(np.max(self.depth))

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(len(X), dtype=np.int64)
        live = np.arange(len(X))
        while live.size:
            f = self.feature[node[live]]
            inner = f != LEAF
            live = live[inner]
            if not live.size:
                break
            nd = node[live]
            go_left = X[live, self.feature[nd]] <= self.threshold[nd]
            node[live] = np.where(go_left, self.left[nd], self.right[nd])
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "n", "depth")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        t = cls()
        for k in ("feature", "threshold", "left", "right", "value", "n", "depth"):
            setattr(t, k, list(d[k]))
        return t.freeze()


def _split_scores(kind, ys, ws, tot_y, tot_w):
    """Score (higher is better) of every cut after position i in sorted order."""
    wl = np.cumsum(ws)[:-1]
    sl = np.cumsum(ys * ws)[:-1]
    wr = tot_w - wl
    sr = tot_y - sl
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == GINI:
            return wl, wr, -(2 * sl * (wl - sl) / wl + 2 * sr * (wr - sr) / wr)
        return wl, wr, sl * sl / wl + sr * sr / wr


def _parent_score(kind, tot_y, tot_w):
    if kind == GINI:
        return -2 * tot_y * (tot_w - tot_y) / tot_w
    return tot_y * tot_y / tot_w


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray | None,
    kind: str,
    max_depth: int,
    min_split: float,
    min_leaf: float,
    max_features: int,
    rng: np.random.Generator,
    presort: list | None = None,
) -> Tree:
    """Greedy CART growth.  Sample counts are weighted (bootstrap multiplicities).

    ``presort`` (per-feature stable argsort of X) lets large nodes skip sorting.
    """
    n, d = X.shape
    if w is None:
        w = np.ones(n)
    rows = np.flatnonzero(w > 0)
    member = np.zeros(n, dtype=bool) if presort is not None else None
    pos = np.zeros(n, dtype=np.int64) if presort is not None else None
    tree = Tree()
    stack = [(rows, 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        wi = w[idx]
        yi = y[idx]
        tot_w = wi.sum()
        tot_y = (yi * wi).sum()
        node = tree._add(tot_y / tot_w, tot_w, depth)
        if parent >= 0:
            (tree.right if is_right else tree.left)[parent] = node
        if depth >= max_depth or tot_w < min_split or tot_w < 2 * min_leaf:
            continue
        if kind == GINI:
            if tot_y <= 0 or tot_y >= tot_w:
                continue
        elif np.ptp(yi) == 0:
            continue
        parent_score = _parent_score(kind, tot_y, tot_w)
        best = (parent_score + 1e-12 * max(1.0, abs(parent_score)), -1, 0.0, None)
        visited = 0
        for f in rng.permutation(d):
            if visited >= max_features:
                break
            if presort is not None and len(idx) * 16 > n:
                member[idx] = True
                srt = presort[f][member[presort[f]]]
                member[idx] = False
                pos[idx] = np.arange(len(idx))
                order = pos[srt]
                xs = X[srt, f]
            else:
                xf = X[idx, f]
                order = np.argsort(xf, kind="stable")
                xs = xf[order]
            if xs[0] == xs[-1]:
                continue  # constant here; does not count towards max_features
            visited += 1
            wl, wr, sc = _split_scores(kind, yi[order], wi[order], tot_y, tot_w)
            ok = (xs[:-1] < xs[1:]) & (wl >= min_leaf) & (wr >= min_leaf)
            if not ok.any():
                continue
            sc = np.where(ok, sc, -np.inf)
            i = int(np.argmax(sc))
            if sc[i] > best[0]:
                thr = 0.5 * (xs[i] + xs[i + 1])
                if thr == xs[i + 1]:  # midpoint rounded up onto the right value
                    thr = xs[i]
                best = (sc[i], int(f), thr, idx[order[: i + 1]])
        if best[1] < 0:
            continue
        _, f, thr, left_idx = best
        tree.feature[node] = f
        tree.threshold[node] = thr
        right_mask = X[idx, f] > thr
        stack.append((idx[right_mask], depth + 1, node, True))
        stack.append((np.sort(left_idx), depth + 1, node, False))
    return tree.freeze()


def presort(X: np.ndarray) -> list[np.ndarray]:
    return [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]


class RandomForest:
    def __init__(self, n_trees=100, max_depth=100, max_features=3, min_leaf=3, min_split=12):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_leaf = min_leaf
        self.min_split = min_split
        self.trees: list[Tree] = []

    def fit(self, X, y, seed=0) -> "RandomForest":
        rng = np.random.default_rng(seed)
        n, d = X.shape
        y = y.astype(float)
        mf = min(self.max_features, d)
        self.trees = []
        ps = presort(X)
        for _ in range(self.n_trees):
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
            self.trees.append(
                grow_tree(X, y, counts, GINI, self.max_depth, self.min_split, self.min_leaf, mf, rng, ps)
            )
        return self

    def score(self, X) -> np.ndarray:
        """Fraction of trees voting attack (leaf majority, ties to normal)."""
        votes = np.zeros(len(X))
        for t in self.trees:
            votes += t.predict(X) > 0.5
        return votes / len(self.trees)

    def to_dict(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    def load(self, d):
        self.trees = [Tree.from_dict(t) for t in d["trees"]]
        return self


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class GradientBoosting:
    """Binomial deviance boosting with Newton leaf values."""

    def __init__(self, learning_rate=0.01, max_depth=4, max_features=None, n_estimators=1750,
                 subsample=1.0, seed=10, min_leaf=1, min_split=2):
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.max_features = max_features
        self.n_estimators = n_estimators
        self.subsample = subsample
        self.seed = seed
        self.min_leaf = min_leaf
        self.min_split = min_split
        self.init = 0.0
        self.trees: list[Tree] = []

    def fit(self, X, y) -> "GradientBoosting":
        rng = np.random.default_rng(self.seed)
        n, d = X.shape
        y = y.astype(float)
        mf = self.max_features or max(1, int(np.sqrt(d)))
        p = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        self.init = float(np.log(p / (1 - p)))
        F = np.full(n, self.init)
        self.trees = []
        ps = presort(X)
        for _ in range(self.n_estimators):
            prob = _sigmoid(F)
            resid = y - prob
            w = None
            if self.subsample < 1.0:
                w = (rng.random(n) < self.subsample).astype(float)
            t = grow_tree(X, resid, w, MSE, self.max_depth, self.min_split, self.min_leaf, mf, rng, ps)
            leaf = t.apply(X)
            mask = np.ones(n) if w is None else w
            num = np.bincount(leaf, weights=resid * mask, minlength=t.node_count)
            den = np.bincount(leaf, weights=prob * (1 - prob) * mask, minlength=t.node_count)
            val = np.where(np.abs(den) < 1e-150, 0.0, num / np.where(den == 0, 1.0, den))
            t.value = np.where(t.feature == LEAF, val, t.value)
            F += self.learning_rate * t.value[leaf]
            self.trees.append(t)
        return self

    def decision(self, X) -> np.ndarray:
        F = np.full(len(X), self.init)
        for t in self.trees:
            F += self.learning_rate * t.predict(X)
        return F

    def score(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))

    def to_dict(self):
        return {"init": self.init, "trees": [t.to_dict() for t in self.trees]}

    def load(self, d):
        self.init = float(d["init"])
        self.trees = [Tree.from_dict(t) for t in d["trees"]]
        return self

"""Linear/ridge regression and a compact random-forest regressor.

The forest is hand-rolled so split tie-breaking and per-tree seeding are
fully pinned down: candidate thresholds are midpoints between sorted
unique values, ties go to the lowest feature index, and tree i draws its
bootstrap from a seed derived from (seed, i) — so construction order
never changes the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, SingularSystem
from .fit_engine import CVStats, derive_seed


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    ridge_alpha: float

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.weights + self.intercept

    def to_json(self):
        return json.dumps({"weights": self.weights.tolist(),
                           "intercept": self.intercept,
                           "ridge_alpha": self.ridge_alpha}, sort_keys=True)


def fit_linear(X, y, alpha=0.0):
    """Least squares with optional L2 penalty on the weights.

    Solved by normal equations on centered data, which leaves the
    intercept unpenalized. alpha=0 on a rank-deficient design raises
    SingularSystem; any alpha>0 is always solvable.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyInput("need a non-empty 2-D design matrix")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    A = Xc.T @ Xc + alpha * np.eye(X.shape[1])
    b = Xc.T @ (y - y_mean)
    if alpha == 0.0 and np.linalg.matrix_rank(Xc) < X.shape[1]:
        raise SingularSystem("rank-deficient design with no ridge penalty")
    w = np.linalg.solve(A, b)
    return LinearModel(weights=w, intercept=y_mean - float(x_mean @ w),
                       ridge_alpha=float(alpha))


# --- regression trees --------------------------------------------------

@dataclass
class _Tree:
    # Flat array representation; children index -1 marks a leaf.
    feature: list
    threshold: list
    left: list
    right: list
    value: list

    def predict_one(self, x):
        i = 0
        while self.left[i] != -1:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] \
                else self.right[i]
        return self.value[i]


def _best_split(X, y, feat_idx):
    """Max impurity-decrease split among candidate features.

    Returns (gain, feature, threshold) or None. Thresholds are midpoints
    between consecutive sorted unique values; equal gains keep the
    lowest feature index (feat_idx is scanned ascending).
    """
    n = len(y)
    parent_sse = float(np.sum((y - y.mean()) ** 2))
    best = None
    for f in np.sort(feat_idx):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cuts = np.nonzero(np.diff(xs) > 0)[0]
        if len(cuts) == 0:
            continue
        csum = np.cumsum(ys)
        csum2 = np.cumsum(ys**2)
        nl = cuts + 1
        nr = n - nl
        sl, sr = csum[cuts], csum[-1] - csum[cuts]
        s2l, s2r = csum2[cuts], csum2[-1] - csum2[cuts]
        sse = (s2l - sl**2 / nl) + (s2r - sr**2 / nr)
        j = int(np.argmin(sse))
        gain = parent_sse - float(sse[j])
        if best is None or gain > best[0] + 1e-12:
            thr = 0.5 * (xs[cuts[j]] + xs[cuts[j] + 1])
            best = (gain, int(f), float(thr))
    return best


def _grow_tree(X, y, max_depth, rng, importances):
    n, d = X.shape
    m = max(1, int(np.sqrt(d)))
    tree = _Tree([], [], [], [], [])

    def new_node():
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(0.0)
        return len(tree.value) - 1

    def build(idx, depth):
        node = new_node()
        yv = y[idx]
        tree.value[node] = float(yv.mean())
        if depth >= max_depth or len(idx) < 2 or np.ptp(yv) == 0.0:
            return node
        feats = rng.choice(d, size=m, replace=False)
        split = _best_split(X[idx], yv, feats)
        if split is None or split[0] <= 0.0:
            return node
        gain, f, thr = split
        importances[f] += gain
        mask = X[idx, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = build(idx[mask], depth + 1)
        tree.right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(n), 0)
    return tree


@dataclass
class ForestModel:
    trees: list
    n_estimators: int
    max_depth: int
    seed: int
    importances: np.ndarray = field(default=None)

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros(len(X))
        for tree in self.trees:
            out += np.array([tree.predict_one(x) for x in X])
        return out / len(self.trees)

    def to_json(self):
        return json.dumps(
            {
                "n_estimators": self.n_estimators,
                "max_depth": self.max_depth,
                "seed": self.seed,
                "importances": self.importances.tolist(),
                "trees": [
                    {"feature": t.feature, "threshold": t.threshold,
                     "left": t.left, "right": t.right, "value": t.value}
                    for t in self.trees
                ],
            },
            sort_keys=True,
        )


def fit_forest(X, y, n_estimators=50, max_depth=5, seed=42):
    """Bagged regression trees with sqrt(d) feature subsampling."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) < 2:
        raise EmptyInput("forest fitting needs at least 2 rows")
    n, d = X.shape
    importances = np.zeros(d)
    trees = []
    for i in range(n_estimators):
        rng = np.random.default_rng(derive_seed(seed, "tree", i))
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], max_depth, rng, importances))
    total = importances.sum()
    if total > 0:
        importances = importances / total
    return ForestModel(trees=trees, n_estimators=n_estimators,
                       max_depth=max_depth, seed=seed, importances=importances)


def cross_validate(fit_fn, X, y, k=5, seed=42):
    """k-fold CV over feature rows; fit_fn(X, y) -> model with .predict."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(X)
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), k)
    r2s, rmses = [], []
    for fold in folds:
        train = np.setdiff1d(np.arange(n), fold)
        model = fit_fn(X[train], y[train])
        pred = model.predict(X[fold])
        sse = float(np.sum((y[fold] - pred) ** 2))
        tss = float(np.sum((y[fold] - y[fold].mean()) ** 2))
        r2s.append(1.0 - sse / tss if tss > 0 else 0.0)
        rmses.append(np.sqrt(sse / len(fold)))
    return CVStats(mean_r2=float(np.mean(r2s)), std_r2=float(np.std(r2s)),
                   mean_rmse=float(np.mean(rmses)),
                   std_rmse=float(np.std(rmses)), k=k)

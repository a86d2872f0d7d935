"""Discrete AdaBoost over depth-limited decision trees with a soft cascade.

Trees are stored in heap order and are always complete up to ``max_depth``:
a node that cannot be split gets a pass-through split (threshold +inf, all
samples go left) so both children inherit its leaf value.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

# the bundled TBB is too old for numba; skip it instead of warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

N_BINS = 256
MAGIC = "FRIFB01"


class TrainingError(ValueError):
    pass


# --- quantisation ---------------------------------------------------------

@dataclass(frozen=True)
class Quantizer:
    lo: np.ndarray
    step: np.ndarray  # (hi - lo) / N_BINS, 0 for constant features

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        return cls(lo, (hi - lo) / N_BINS)

    def transform(self, X) -> np.ndarray:
        """Bin indices in feature-major layout, shape (F, N), uint8."""
        X = np.asarray(X, dtype=np.float64)
        safe = np.where(self.step > 0, self.step, 1.0)
        q = np.floor((X - self.lo) / safe)
        q = np.clip(q, 0, N_BINS - 1)
        q[:, self.step <= 0] = 0
        return np.ascontiguousarray(q.T.astype(np.uint8))

    def threshold(self, feature, k):
        """Real threshold equivalent to 'bin <= k goes left'."""
        return float(self.lo[feature] + (k + 1) * self.step[feature])


@numba.njit(parallel=True, cache=True)
def _best_splits(Q, idx, wpos, wneg):
    """Per feature: best Gini score sum_children (wp^2 + wn^2) / W and the
    bin k (left = bin <= k).  Score -1 when no valid split exists."""
    n_feat = Q.shape[0]
    best_score = np.full(n_feat, -1.0)
    best_bin = np.zeros(n_feat, dtype=np.int64)
    tot_p = 0.0
    tot_n = 0.0
    for t in range(idx.shape[0]):
        tot_p += wpos[idx[t]]
        tot_n += wneg[idx[t]]
    for f in numba.prange(n_feat):
        hp = np.zeros(N_BINS)
        hn = np.zeros(N_BINS)
        row = Q[f]
        for t in range(idx.shape[0]):
            i = idx[t]
            b = row[i]
            hp[b] += wpos[i]
            hn[b] += wneg[i]
        lp = 0.0
        ln = 0.0
        bs = -1.0
        bk = 0
        for k in range(N_BINS - 1):
            lp += hp[k]
            ln += hn[k]
            lw = lp + ln
            rp = tot_p - lp
            rn = tot_n - ln
            rw = rp + rn
            if lw <= 0.0 or rw <= 0.0:
                continue
            s = (lp * lp + ln * ln) / lw + (rp * rp + rn * rn) / rw
            if s > bs:
                bs = s
                bk = k
        best_score[f] = bs
        best_bin[f] = bk
    return best_score, best_bin


# --- trees ----------------------------------------------------------------

@dataclass(frozen=True)
class DecisionTree:
    max_depth: int
    features: np.ndarray  # (2^d - 1,) int
    thresholds: np.ndarray  # (2^d - 1,) float, x < threshold goes left
    leaves: np.ndarray  # (2^d,) float in {-1, +1}

    def leaf_index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth):
            go_left = X[rows, self.features[node]] < self.thresholds[node]
            node = 2 * node + np.where(go_left, 1, 2)
        return node - (2 ** self.max_depth - 1)

    def predict(self, X) -> np.ndarray:
        return self.leaves[self.leaf_index(X)]

    def to_dict(self):
        return {
            "max_depth": int(self.max_depth),
            "features": [int(f) for f in self.features],
            "thresholds": [float(t) for t in self.thresholds],
            "leaves": [float(v) for v in self.leaves],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["max_depth"]), np.array(d["features"], dtype=np.int64),
                   np.array(d["thresholds"], dtype=np.float64), np.array(d["leaves"], dtype=np.float64))


def _check_labels(y):
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise TrainingError("labels must be +1 or -1")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise TrainingError("training data must contain both labels")
    return y.astype(np.float64)


def _majority(wp, wn, fallback):
    if wp + wn <= 0:
        return fallback
    return 1.0 if wp > wn else -1.0


def fit_tree(Q, quantizer: Quantizer, y, weights, max_depth=2) -> DecisionTree:
    """Greedy weighted-Gini tree on pre-quantised features ``Q`` (F, N)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    wpos = np.where(y > 0, w, 0.0)
    wneg = np.where(y < 0, w, 0.0)
    n_internal = 2 ** max_depth - 1
    features = np.zeros(n_internal, dtype=np.int64)
    thresholds = np.full(n_internal, np.inf)
    leaves = np.zeros(2 ** max_depth)
    root_val = _majority(wpos.sum(), wneg.sum(), 1.0)
    # (node, sample indices, value of the parent majority)
    frontier = [(0, np.arange(Q.shape[1], dtype=np.int64), root_val)]
    for depth in range(max_depth + 1):
        nxt = []
        for node, idx, parent_val in frontier:
            wp = float(wpos[idx].sum())
            wn = float(wneg[idx].sum())
            val = _majority(wp, wn, parent_val)
            if depth == max_depth:
                leaves[node - n_internal] = val
                continue
            left, right = idx, idx[:0]
            if wp > 0 and wn > 0:
                scores, bins = _best_splits(Q, idx, wpos, wneg)
                f = int(np.argmax(scores))
                if scores[f] > 0:
                    k = int(bins[f])
                    goes_left = Q[f, idx] <= k
                    features[node] = f
                    thresholds[node] = quantizer.threshold(f, k)
                    left, right = idx[goes_left], idx[~goes_left]
            nxt.append((2 * node + 1, left, val))
            nxt.append((2 * node + 2, right, val))
        frontier = nxt
    return DecisionTree(max_depth, features, thresholds, leaves)


def weighted_error(pred, y, w) -> float:
    w = np.asarray(w, dtype=np.float64)
    return float(np.sum(w[pred != y]) / np.sum(w))


def train_tree(X, y, weights, max_depth=2, quantizer=None, Q=None):
    """Fit one tree and return ``(tree, weighted_error)``; error < 0.5 unless
    the data admit nothing better than chance (then exactly 0.5)."""
    y = _check_labels(y)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not w.sum() > 0:
        raise TrainingError("weights must be non-negative with positive sum")
    if quantizer is None:
        quantizer = Quantizer.fit(X)
    if Q is None:
        Q = quantizer.transform(X)
    tree = fit_tree(Q, quantizer, y, w, max_depth)
    eps = weighted_error(tree.predict(X), y, w)
    if eps > 0.5:
        tree = DecisionTree(tree.max_depth, tree.features, tree.thresholds, -tree.leaves)
        eps = weighted_error(tree.predict(X), y, w)
    return tree, eps


# --- AdaBoost -------------------------------------------------------------

EPS_MIN = 1e-10


def alpha_from_error(eps, mode="standard"):
    """Tree weight.  ``standard``: 0.5 ln((1-e)/e).  ``literal``: e / (1-e),
    kept only for comparison runs."""
    eps = min(max(eps, EPS_MIN), 0.5 - EPS_MIN)
    if mode == "standard":
        return 0.5 * math.log((1.0 - eps) / eps)
    if mode == "literal":
        return eps / (1.0 - eps)
    raise ValueError(f"unknown alpha mode {mode!r}")


@dataclass
class BoostState:
    X: np.ndarray
    y: np.ndarray
    quantizer: Quantizer
    Q: np.ndarray
    weights: np.ndarray
    margins: np.ndarray
    max_depth: int = 2
    alpha_mode: str = "standard"
    trees: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    @classmethod
    def start(cls, X, y, max_depth=2, alpha_mode="standard"):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = _check_labels(y)
        q = Quantizer.fit(X)
        n = len(y)
        return cls(X, y, q, q.transform(X), np.full(n, 1.0 / n), np.zeros(n), max_depth, alpha_mode)

    def exp_loss(self):
        return float(np.sum(np.exp(-self.y * self.margins)))


def adaboost_round(state: BoostState, weights=None) -> BoostState:
    if weights is not None:
        state.weights = np.asarray(weights, dtype=np.float64)
    tree, eps = train_tree(state.X, state.y, state.weights, state.max_depth, state.quantizer, state.Q)
    h = tree.predict(state.X)
    alpha = alpha_from_error(eps, state.alpha_mode)
    w = state.weights * np.exp(-alpha * state.y * h)
    state.weights = w / w.sum()
    state.margins = state.margins + alpha * h
    state.trees.append(tree)
    state.alphas.append(alpha)
    state.errors.append(eps)
    state.losses.append(state.exp_loss())
    return state


# --- ensembles ------------------------------------------------------------

@dataclass
class BoostedEnsemble:
    trees: list
    alphas: np.ndarray
    cascade_thresholds: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        self.cascade_thresholds = np.asarray(self.cascade_thresholds, dtype=np.float64)
        if not self.trees:
            raise ValueError("ensemble needs at least one tree")
        if len(self.alphas) != len(self.trees) or len(self.cascade_thresholds) != len(self.trees):
            raise ValueError("alphas / thresholds must match the tree count")
        if np.any(self.alphas < 0):
            raise ValueError("tree weights must be non-negative")

    @property
    def n_features(self):
        return self.metadata.get("n_features")

    def prefix_scores(self, X) -> np.ndarray:
        """Running sums (N, T) without any rejection."""
        X = np.asarray(X, dtype=np.float64)
        contrib = np.stack([a * t.predict(X) for t, a in zip(self.trees, self.alphas)], axis=1)
        return np.cumsum(contrib, axis=1)

    def score_batch(self, X, use_cascade=True):
        """Scores (``-inf`` when rejected) and number of trees evaluated."""
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise ValueError(f"feature length {X.shape[1]} != model's {self.n_features}")
        total = np.zeros(n)
        evaluated = np.zeros(n, dtype=np.int64)
        alive = np.arange(n)
        for t, (tree, a, theta) in enumerate(zip(self.trees, self.alphas, self.cascade_thresholds)):
            if alive.size == 0:
                break
            total[alive] += a * tree.predict(X[alive])
            evaluated[alive] = t + 1
            if use_cascade:
                dead = total[alive] < theta
                if np.any(dead):
                    total[alive[dead]] = -np.inf
                    alive = alive[~dead]
        return total, evaluated

    def to_dict(self):
        meta = dict(self.metadata)
        return {
            "trees": [t.to_dict() for t in self.trees],
            "alphas": [float(a) for a in self.alphas],
            "cascade_thresholds": [float(t) for t in self.cascade_thresholds],
            "metadata": meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], d["alphas"], d["cascade_thresholds"],
                   d.get("metadata", {}))


def ensemble_score(e: BoostedEnsemble, x, use_cascade=True):
    """Score one feature vector: ``(score, trees_evaluated)``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    s, n = e.score_batch(x, use_cascade)
    return float(s[0]), int(n[0])


def cascade_thresholds(prefix, keep_fraction=0.995):
    """Rejection thresholds from positives' running sums ``prefix`` (P, T).

    The ``floor((1 - keep) P)`` positives with the lowest worst-prefix score
    are given up; every threshold is the minimum running sum of the rest, so
    all kept positives survive every prefix.
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    p = prefix.shape[0]
    n_drop = int(math.floor((1.0 - keep_fraction) * p + 1e-9))
    worst = prefix.min(axis=1)
    order = np.lexsort((np.arange(p), worst))
    kept = np.sort(order[n_drop:])
    return prefix[kept].min(axis=0)


def boost(X, y, n_trees, max_depth=2, alpha_mode="standard", check_loss=False, stop_when_perfect=True):
    """Run ``n_trees`` AdaBoost rounds; returns the final state.

    Stops early once a tree separates the (reweighted) data perfectly, since
    further rounds would only repeat it.
    """
    state = BoostState.start(X, y, max_depth, alpha_mode)
    for _ in range(int(n_trees)):
        prev = state.exp_loss()
        adaboost_round(state)
        if check_loss and state.losses[-1] > prev * (1 + 1e-12):
            raise AssertionError("exponential loss increased")
        if stop_when_perfect and state.errors[-1] == 0.0:
            break
    return state


def ensemble_from_state(state: BoostState, keep_fraction=0.995, metadata=None) -> BoostedEnsemble:
    e = BoostedEnsemble(list(state.trees), np.array(state.alphas), np.full(len(state.trees), -np.inf),
                        dict(metadata or {}))
    pos = state.X[state.y > 0]
    e.cascade_thresholds = cascade_thresholds(e.prefix_scores(pos), keep_fraction)
    e.metadata.setdefault("n_features", int(state.X.shape[1]))
    return e


# --- model container ------------------------------------------------------

def dumps_model(e: BoostedEnsemble) -> str:
    body = json.dumps(e.to_dict(), sort_keys=True, separators=(",", ":"))
    return f"{MAGIC}\n{body}\n"


def loads_model(text: str) -> BoostedEnsemble:
    head, _, body = text.partition("\n")
    if head.strip() != MAGIC:
        raise ValueError(f"not a {MAGIC} model file (header {head[:16]!r})")
    return BoostedEnsemble.from_dict(json.loads(body))


def save_model(path, e: BoostedEnsemble) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps_model(e))


def load_model(path) -> BoostedEnsemble:
    with open(path) as fh:
        return loads_model(fh.read())

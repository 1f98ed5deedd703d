"""CART trees and random forests over category indices.

Splits are one-category-vs-rest (``x_f == c`` goes left) chosen by Gini
gain.  Trees grow breadth first: every node of a level is evaluated with a
single ``bincount`` over ``(node, feature, category, class)``, which is what
keeps a 100-tree forest on tens of thousands of rows fast in pure numpy.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .schema import DataTable, SchemaError

_MIN_GAIN = 1e-12


def _gini(counts, totals):
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = counts / totals[..., None]
    return np.where(totals > 0, 1.0 - np.nansum(frac * frac, axis=-1), 0.0)


def _n_features(max_features, d: int) -> int:
    if max_features is None:
        return d
    if max_features == "sqrt":
        return max(1, int(np.ceil(np.sqrt(d))))
    if isinstance(max_features, float):
        return max(1, min(d, int(np.ceil(max_features * d))))
    return max(1, min(d, int(max_features)))


class CategoricalDecisionTree(ClassifierMixin, BaseEstimator):
    """Greedy Gini tree with one-vs-rest categorical splits.

    Parameters
    ----------
    max_depth : int
    min_samples_leaf : int
        Both children of a split must hold at least this many samples.
    max_features : None, "sqrt", int or float
        Features examined per node (drawn at random when fewer than all).
    random_state : int or None
    """

    def __init__(self, max_depth=12, min_samples_leaf=5, max_features=None, random_state=None):
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y, n_categories=None):
        X = check_array(X, dtype=np.int64)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different lengths")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        cards = X.max(axis=0) + 1 if n_categories is None else np.asarray(n_categories)
        self._grow(X, y_enc, len(self.classes_), np.asarray(cards, dtype=np.int64))
        return self

    def _grow(self, X, y, n_classes, cards):
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        n, d = X.shape
        self.n_features_in_ = d
        self.n_categories_ = cards
        rng = np.random.default_rng(self.random_state)
        m = _n_features(self.max_features, d)
        C = n_classes
        offsets = np.r_[0, np.cumsum(cards)[:-1]]
        B = int(cards.sum())
        bin_feature = np.repeat(np.arange(d), cards)
        bin_category = np.concatenate([np.arange(c) for c in cards])
        Xoff = X + offsets

        feature, category, left, right = [-1], [-1], [-1], [-1]
        counts = [np.bincount(y, minlength=C)]
        node_of = np.zeros(n, dtype=np.int64)
        frontier = np.array([0])
        depth = 0
        while frontier.size and depth < self.max_depth:
            F = frontier.size
            node_counts = np.array([counts[i] for i in frontier], dtype=np.float64)
            n_node = node_counts.sum(axis=1)
            pos_of = np.full(len(feature), -1)
            pos_of[frontier] = np.arange(F)
            pos = pos_of[node_of]
            idx = np.flatnonzero(pos >= 0)
            p = pos[idx]
            keys = ((p[:, None] * B + Xoff[idx]) * C + y[idx, None]).ravel()
            lc = np.bincount(keys, minlength=F * B * C).reshape(F, B, C).astype(np.float64)
            nl = lc.sum(axis=2)
            nr = n_node[:, None] - nl
            rc = node_counts[:, None, :] - lc
            weighted = nl * _gini(lc, nl) + nr * _gini(rc, nr)
            gain = _gini(node_counts, n_node)[:, None] - weighted / n_node[:, None]
            ok = (nl >= self.min_samples_leaf) & (nr >= self.min_samples_leaf)
            if m < d:
                chosen = np.argsort(rng.random((F, d)), axis=1)[:, :m]
                fmask = np.zeros((F, d), dtype=bool)
                np.put_along_axis(fmask, chosen, True, axis=1)
                ok &= fmask[:, bin_feature]
            gain = np.where(ok, gain, -np.inf)
            best = np.argmax(gain, axis=1)
            best_gain = gain[np.arange(F), best]
            splits = np.flatnonzero(best_gain > _MIN_GAIN)
            if splits.size == 0:
                break
            first_child = len(feature)
            child_of = np.full((F, 2), -1)
            for r, s in enumerate(splits):
                node = frontier[s]
                b = best[s]
                lid, rid = first_child + 2 * r, first_child + 2 * r + 1
                feature[node], category[node] = int(bin_feature[b]), int(bin_category[b])
                left[node], right[node] = lid, rid
                child_of[s] = (lid, rid)
                for _ in range(2):
                    feature.append(-1)
                    category.append(-1)
                    left.append(-1)
                    right.append(-1)
                counts.append(lc[s, b].astype(np.int64))
                counts.append(rc[s, b].astype(np.int64))
            moving = child_of[p, 0] >= 0
            mi, mp = idx[moving], p[moving]
            f = np.asarray(feature)[frontier[mp]]
            c = np.asarray(category)[frontier[mp]]
            goes_left = X[mi, f] == c
            node_of[mi] = np.where(goes_left, child_of[mp, 0], child_of[mp, 1])
            frontier = child_of[splits].ravel()
            depth += 1

        self.feature_ = np.asarray(feature, dtype=np.int64)
        self.category_ = np.asarray(category, dtype=np.int64)
        self.left_ = np.asarray(left, dtype=np.int64)
        self.right_ = np.asarray(right, dtype=np.int64)
        self.value_ = np.asarray(counts, dtype=np.int64).reshape(-1, C)
        self.depth_ = depth
        return self

    @property
    def node_count(self) -> int:
        return len(self.feature_)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        check_is_fitted(self, "feature_")
        X = check_array(X, dtype=np.int64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature_[node]
            inner = np.flatnonzero(f >= 0)
            if inner.size == 0:
                return node
            nd = node[inner]
            goes_left = X[inner, f[inner]] == self.category_[nd]
            node[inner] = np.where(goes_left, self.left_[nd], self.right_[nd])

    def predict_proba(self, X) -> np.ndarray:
        v = self.value_[self.apply(X)].astype(np.float64)
        return v / v.sum(axis=1, keepdims=True)

    def _predict_index(self, X) -> np.ndarray:
        return np.argmax(self.value_[self.apply(X)], axis=1)

    def predict(self, X) -> np.ndarray:
        return self.classes_[self._predict_index(X)]

    def to_dict(self) -> dict:
        check_is_fitted(self, "feature_")
        return {
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_categories": self.n_categories_.tolist(),
            "feature": self.feature_.tolist(),
            "category": self.category_.tolist(),
            "left": self.left_.tolist(),
            "right": self.right_.tolist(),
            "value": self.value_.tolist(),
            "feature_attrs": list(getattr(self, "feature_attrs_", ())),
            "label_attr": getattr(self, "label_attr_", None),
        }

    @classmethod
    def from_dict(cls, d) -> "CategoricalDecisionTree":
        tree = cls(**d["params"])
        tree.classes_ = np.asarray(d["classes"])
        tree.n_categories_ = np.asarray(d["n_categories"], dtype=np.int64)
        tree.n_features_in_ = len(tree.n_categories_)
        for k in ("feature", "category", "left", "right"):
            setattr(tree, k + "_", np.asarray(d[k], dtype=np.int64))
        tree.value_ = np.asarray(d["value"], dtype=np.int64).reshape(len(tree.feature_), -1)
        if d.get("feature_attrs"):
            tree.feature_attrs_ = tuple(d["feature_attrs"])
            tree.label_attr_ = d.get("label_attr")
        return tree


class CategoricalRandomForest(ClassifierMixin, BaseEstimator):
    """Bagged :class:`CategoricalDecisionTree` ensemble with majority vote.

    Tree ``t`` draws its bootstrap sample and node feature subsets from the
    ``t``-th child of ``numpy.random.SeedSequence(random_state)``.  Vote ties
    go to the lowest class index.
    """

    def __init__(self, n_trees=100, max_depth=12, min_samples_leaf=5, max_features="sqrt",
                 bootstrap=True, random_state=None):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y, n_categories=None):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        X = check_array(X, dtype=np.int64)
        self.classes_, y_enc = np.unique(np.asarray(y), return_inverse=True)
        cards = X.max(axis=0) + 1 if n_categories is None else np.asarray(n_categories)
        cards = np.asarray(cards, dtype=np.int64)
        n = X.shape[0]
        self.estimators_ = []
        for child in np.random.SeedSequence(self.random_state).spawn(self.n_trees):
            rng = np.random.default_rng(child)
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            tree = CategoricalDecisionTree(
                max_depth=self.max_depth, min_samples_leaf=self.min_samples_leaf,
                max_features=self.max_features, random_state=int(rng.integers(2**32)))
            tree.classes_ = self.classes_
            tree._grow(X[rows], y_enc[rows], len(self.classes_), cards)
            self.estimators_.append(tree)
        self.n_features_in_ = X.shape[1]
        return self

    def _votes(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        X = check_array(X, dtype=np.int64)
        votes = np.zeros((X.shape[0], len(self.classes_)), dtype=np.int64)
        rows = np.arange(X.shape[0])
        for tree in self.estimators_:
            np.add.at(votes, (rows, tree._predict_index(X)), 1)
        return votes

    def predict_proba(self, X) -> np.ndarray:
        votes = self._votes(X)
        return votes / votes.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self._votes(X), axis=1)]

    def to_dict(self) -> dict:
        return {
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "trees": [t.to_dict() for t in self.estimators_],
            "feature_attrs": list(getattr(self, "feature_attrs_", ())),
            "label_attr": getattr(self, "label_attr_", None),
        }

    @classmethod
    def from_dict(cls, d) -> "CategoricalRandomForest":
        forest = cls(**d["params"])
        forest.classes_ = np.asarray(d["classes"])
        forest.estimators_ = [CategoricalDecisionTree.from_dict(t) for t in d["trees"]]
        forest.n_features_in_ = forest.estimators_[0].n_features_in_
        if d.get("feature_attrs"):
            forest.feature_attrs_ = tuple(d["feature_attrs"])
            forest.label_attr_ = d.get("label_attr")
        return forest


def _check_features(table: DataTable, features, label):
    features = tuple(features)
    if label in features:
        raise SchemaError("the label cannot be a feature")
    return features


def train_tree(train: DataTable, features, label: str, exclude_protected: bool = True,
               **config) -> CategoricalDecisionTree:
    """Fit a tree on ``train``'s ``features`` to predict ``label``.

    With ``exclude_protected`` (the audit setting) protected attributes are
    refused as features.
    """
    features = _check_features(train, features, label)
    if exclude_protected:
        leaked = [f for f in features if train.schema[f].protected]
        if leaked:
            raise SchemaError(f"protected attributes {leaked} cannot be classifier features")
    tree = CategoricalDecisionTree(**config)
    tree.fit(train.columns(features), train.column(label),
             n_categories=train.schema.cardinalities(features))
    tree.feature_attrs_, tree.label_attr_ = features, label
    return tree


def train_forest(train: DataTable, features, label: str, **config) -> CategoricalRandomForest:
    features = _check_features(train, features, label)
    forest = CategoricalRandomForest(**config)
    forest.fit(train.columns(features), train.column(label),
               n_categories=train.schema.cardinalities(features))
    forest.feature_attrs_, forest.label_attr_ = features, label
    return forest


def predict(model, table: DataTable) -> np.ndarray:
    """Label indices predicted for every row of ``table``."""
    return model.predict(table.columns(model.feature_attrs_))

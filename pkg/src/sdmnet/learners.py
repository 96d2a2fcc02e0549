"""The eight classical learners fitted on probability-table features.

Every learner follows the same small protocol: ``fit(X, y)`` returns self,
``predict_proba(X)`` returns an [n, 2] array whose rows sum to 1, and
``get_state()``/``set_state()`` expose hyperparameters plus arrays for the
binary container.
"""

import math

import numpy as np

from . import tensor as T
from .rng import stream
from .trees import Tree, build_classification_tree, build_gradient_tree

# canonical learner order; also the tie-break order
KINDS = ("MLP", "LDA", "XGB", "RF", "LR", "SVM", "ADA", "GB")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"X {X.shape} and y {y.shape} disagree")
    if np.isnan(X).any():
        raise ValueError("features contain NaN")
    if len(np.unique(y)) < 2:
        raise ValueError("need both classes present to fit")
    return X, y


def _check_x(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got shape {X.shape}")
    if np.isnan(X).any():
        raise ValueError("features contain NaN")
    return X


def _two_col(p1):
    p1 = np.clip(p1, 0.0, 1.0)
    return np.column_stack([1.0 - p1, p1])


class Learner:
    kind = ""
    hyper = ()

    def predict(self, X):
        """Class labels; exact 0.5 goes to class 0."""
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def get_state(self):
        params = {name: getattr(self, name) for name in self.hyper}
        params["n_features"] = self.n_features
        return params, self._arrays()

    def set_state(self, params, arrays):
        for name in self.hyper:
            default = getattr(self, name)
            value = params[name]
            if isinstance(default, bool):
                value = str(value) in ("True", "true", "1")
            setattr(self, name, type(default)(value))
        self.n_features = int(params["n_features"])
        self._load_arrays(arrays)
        return self


class LogisticRegression(Learner):
    """L2-regularized logistic loss minimized by gradient descent with backtracking."""

    kind = "LR"
    hyper = ("l2", "tol", "max_iter")

    def __init__(self, l2=1e-4, tol=1e-8, max_iter=5000):
        self.l2, self.tol, self.max_iter = l2, tol, max_iter

    def _objective(self, X, y, w, b):
        z = X @ w + b
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * self.l2 * w @ w
        r = _sigmoid(z) - y
        return loss, X.T @ r / len(y) + self.l2 * w, r.mean()

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        w, b = np.zeros(X.shape[1]), 0.0
        step = 1.0
        loss, gw, gb = self._objective(X, y, w, b)
        self.n_iter = 0
        for it in range(self.max_iter):
            gnorm2 = gw @ gw + gb * gb
            if math.sqrt(gnorm2) < self.tol:
                break
            step = min(step * 2.0, 1e6)
            while True:
                nw, nb = w - step * gw, b - step * gb
                nloss, ngw, ngb = self._objective(X, y, nw, nb)
                if nloss <= loss - 0.5 * step * gnorm2 or step < 1e-12:
                    break
                step *= 0.5
            w, b, loss, gw, gb = nw, nb, nloss, ngw, ngb
            self.n_iter = it + 1
        self.coef, self.intercept = w, b
        return self

    def decision_function(self, X):
        return _check_x(X, self.n_features) @ self.coef + self.intercept

    def predict_proba(self, X):
        return _two_col(_sigmoid(self.decision_function(X)))

    def _arrays(self):
        return {"coef": self.coef, "intercept": np.array([self.intercept])}

    def _load_arrays(self, arrays):
        self.coef, self.intercept = arrays["coef"], float(arrays["intercept"][0])


class LDA(Learner):
    """Gaussian classes with a shared (pooled, ridge-stabilized) covariance."""

    kind = "LDA"
    hyper = ("ridge",)

    def __init__(self, ridge=1e-6):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        self.means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
        centered = X - self.means[y]
        self.covariance = centered.T @ centered / (len(X) - 2) + self.ridge * np.eye(X.shape[1])
        self.priors = np.array([(y == c).mean() for c in (0, 1)])
        return self

    def decision_scores(self, X):
        X = _check_x(X, self.n_features)
        sol = np.linalg.solve(self.covariance, self.means.T)  # d x 2
        return X @ sol - 0.5 * np.sum(self.means.T * sol, axis=0) + np.log(self.priors)

    def predict_proba(self, X):
        return T.softmax(self.decision_scores(X))

    def _arrays(self):
        return {"means": self.means, "covariance": self.covariance, "priors": self.priors}

    def _load_arrays(self, arrays):
        self.means, self.covariance, self.priors = arrays["means"], arrays["covariance"], arrays["priors"]


class RandomForest(Learner):
    """Bagged Gini trees; probability is the fraction of trees voting class 1."""

    kind = "RF"
    hyper = ("n_trees", "max_depth", "max_features", "bootstrap", "seed")

    def __init__(self, n_trees=100, max_depth=12, max_features=-1, bootstrap=True, seed=0):
        # max_features: -1 -> floor(sqrt(d)), 0 -> all features
        self.n_trees, self.max_depth, self.max_features = n_trees, max_depth, max_features
        self.bootstrap, self.seed = bootstrap, seed

    def _n_split_features(self, d):
        if self.max_features == -1:
            return max(1, int(math.isqrt(d)))
        if self.max_features == 0:
            return d
        return min(self.max_features, d)

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        k = self._n_split_features(X.shape[1])
        self.trees = []
        for t in range(self.n_trees):
            rng = stream(self.seed, "forest", t)
            idx = rng.integers(0, len(X), len(X)) if self.bootstrap else np.arange(len(X))
            self.trees.append(build_classification_tree(
                X[idx], y[idx], max_depth=self.max_depth, max_features=k, rng=rng))
        return self

    def votes(self, X):
        X = _check_x(X, self.n_features)
        # a tree votes for class 1 only on a strict majority in its leaf
        return np.stack([(tree.predict_value(X)[:, 1] > 0.5).astype(np.int64) for tree in self.trees])

    def predict_proba(self, X):
        return _two_col(self.votes(X).mean(axis=0))

    def _arrays(self):
        out = {}
        for i, tree in enumerate(self.trees):
            out.update(tree.arrays(f"tree{i}."))
        return out

    def _load_arrays(self, arrays):
        self.trees = [Tree.from_arrays(arrays, f"tree{i}.") for i in range(self.n_trees)]


class AdaBoost(Learner):
    """SAMME boosting of depth-1 stumps (binary case)."""

    kind = "ADA"
    hyper = ("n_rounds",)

    def __init__(self, n_rounds=100):
        self.n_rounds = n_rounds

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        w = np.full(len(y), 1.0 / len(y))
        self.stumps, self.alphas = [], []
        for _ in range(self.n_rounds):
            stump = build_classification_tree(X, y, sample_weight=w, max_depth=1)
            pred = (stump.predict_value(X)[:, 1] > 0.5).astype(np.int64)
            miss = pred != y
            err = float(w[miss].sum() / w.sum())
            if err >= 0.5:
                break
            alpha = math.log((1.0 - err) / err) if err > 0 else 10.0
            self.stumps.append(stump)
            self.alphas.append(alpha)
            if err == 0:
                break
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        if not self.stumps:
            # nothing beat chance: fall back to the weighted prior
            self.stumps.append(build_classification_tree(X, y, max_depth=0))
            self.alphas.append(1.0)
        return self

    def predict_proba(self, X):
        X = _check_x(X, self.n_features)
        alphas = np.asarray(self.alphas)
        votes = np.stack([(s.predict_value(X)[:, 1] > 0.5) for s in self.stumps]).astype(np.float64)
        return _two_col(alphas @ votes / alphas.sum())

    def _arrays(self):
        out = {"alphas": np.asarray(self.alphas, dtype=np.float64)}
        for i, s in enumerate(self.stumps):
            out.update(s.arrays(f"stump{i}."))
        return out

    def _load_arrays(self, arrays):
        self.alphas = list(arrays["alphas"])
        self.stumps = [Tree.from_arrays(arrays, f"stump{i}.") for i in range(len(self.alphas))]


class _Boosted(Learner):
    def _init_score(self, y):
        p = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        return math.log(p / (1 - p))

    def raw_score(self, X):
        X = _check_x(X, self.n_features)
        score = np.full(len(X), self.base_score)
        for tree in self.trees:
            score += self.learning_rate * tree.predict_value(X)[:, 0]
        return score

    def predict_proba(self, X):
        return _two_col(_sigmoid(self.raw_score(X)))

    def _arrays(self):
        out = {"base_score": np.array([self.base_score])}
        for i, tree in enumerate(self.trees):
            out.update(tree.arrays(f"tree{i}."))
        return out

    def _load_arrays(self, arrays):
        self.base_score = float(arrays["base_score"][0])
        n = len({k.split(".")[0] for k in arrays if k.startswith("tree")})
        self.trees = [Tree.from_arrays(arrays, f"tree{i}.") for i in range(n)]


class GradientBoosting(_Boosted):
    """Friedman log-loss boosting: least-squares trees on residuals, Newton leaf values."""

    kind = "GB"
    hyper = ("n_trees", "max_depth", "learning_rate")

    def __init__(self, n_trees=100, max_depth=3, learning_rate=0.1):
        self.n_trees, self.max_depth, self.learning_rate = n_trees, max_depth, learning_rate

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        self.base_score = self._init_score(y)
        score = np.full(len(y), self.base_score)
        self.trees = []
        ones = np.ones(len(y))
        for _ in range(self.n_trees):
            p = _sigmoid(score)
            residual = y - p
            # squared-error structure (unit hessian, no penalty)
            tree = build_gradient_tree(X, -residual, ones, self.max_depth, lam=0.0, min_child_weight=1.0)
            leaves = tree.apply(X)
            hess = p * (1 - p)
            for leaf in np.unique(leaves):
                m = leaves == leaf
                tree.value[leaf, 0] = residual[m].sum() / max(hess[m].sum(), 1e-12)
            score += self.learning_rate * tree.value[leaves, 0]
            self.trees.append(tree)
        return self


class XGBoost(_Boosted):
    """Second-order boosting with an L2 leaf penalty."""

    kind = "XGB"
    hyper = ("n_trees", "max_depth", "learning_rate", "reg_lambda", "min_child_weight")

    def __init__(self, n_trees=100, max_depth=3, learning_rate=0.3, reg_lambda=1.0, min_child_weight=1.0):
        self.n_trees, self.max_depth, self.learning_rate = n_trees, max_depth, learning_rate
        self.reg_lambda, self.min_child_weight = reg_lambda, min_child_weight

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        self.base_score = 0.0
        score = np.zeros(len(y))
        self.trees = []
        for _ in range(self.n_trees):
            p = _sigmoid(score)
            tree = build_gradient_tree(X, p - y, np.maximum(p * (1 - p), 1e-16), self.max_depth,
                                       lam=self.reg_lambda, min_child_weight=self.min_child_weight)
            score += self.learning_rate * tree.predict_value(X)[:, 0]
            self.trees.append(tree)
        return self


class MLP(Learner):
    """One tanh hidden layer trained with Adam on the autodiff engine."""

    kind = "MLP"
    hyper = ("hidden", "lr", "epochs", "seed")

    def __init__(self, hidden=16, lr=1e-2, epochs=300, seed=0):
        self.hidden, self.lr, self.epochs, self.seed = hidden, lr, epochs, seed

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = d = X.shape[1]
        rng = stream(self.seed, "mlp-init")
        with T.precision(np.float64):
            w1 = T.parameter(rng.uniform(-1, 1, (self.hidden, d)) / math.sqrt(d))
            b1 = T.parameter(np.zeros(self.hidden))
            w2 = T.parameter(rng.uniform(-1, 1, (2, self.hidden)) / math.sqrt(self.hidden))
            b2 = T.parameter(np.zeros(2))
            opt = T.Adam([w1, b1, w2, b2], lr=self.lr)
            xt = T.Tensor(X)
            for _ in range(self.epochs):
                h = T.tanh_activation(T.affine(xt, w1, b1))
                loss = T.softmax_cross_entropy(T.affine(h, w2, b2), y)
                loss.backward()
                opt.step()
                opt.zero_grad()
        self.w1, self.b1, self.w2, self.b2 = w1.data, b1.data, w2.data, b2.data
        return self

    def predict_proba(self, X):
        X = _check_x(X, self.n_features)
        h = np.tanh(X @ self.w1.T + self.b1)
        return T.softmax(h @ self.w2.T + self.b2)

    def _arrays(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def _load_arrays(self, arrays):
        self.w1, self.b1, self.w2, self.b2 = (arrays[k] for k in ("w1", "b1", "w2", "b2"))


class LinearSVM(Learner):
    """Hinge loss by Pegasos SGD; probabilities from a logistic fit on margins."""

    kind = "SVM"
    hyper = ("lam", "epochs", "seed")

    def __init__(self, lam=1e-4, epochs=20, seed=0):
        self.lam, self.epochs, self.seed = lam, epochs, seed

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        s = 2.0 * y - 1.0
        w, b = np.zeros(X.shape[1]), 0.0
        t = 0
        for epoch in range(self.epochs):
            for i in stream(self.seed, "svm", epoch).permutation(len(X)):
                t += 1
                eta = 1.0 / (self.lam * (t + 100))
                margin = s[i] * (X[i] @ w + b)
                w *= 1.0 - eta * self.lam
                if margin < 1.0:
                    w += eta * s[i] * X[i]
                    b += eta * s[i]
        self.coef, self.intercept = w, b
        calib = LogisticRegression(l2=1e-6, max_iter=500).fit(self.decision_function(X)[:, None], y)
        self.calib_a, self.calib_b = float(calib.coef[0]), float(calib.intercept)
        return self

    def decision_function(self, X):
        return _check_x(X, self.n_features) @ self.coef + self.intercept

    def predict_proba(self, X):
        return _two_col(_sigmoid(self.calib_a * self.decision_function(X) + self.calib_b))

    def _arrays(self):
        return {"coef": self.coef, "intercept": np.array([self.intercept]),
                "calibration": np.array([self.calib_a, self.calib_b])}

    def _load_arrays(self, arrays):
        self.coef, self.intercept = arrays["coef"], float(arrays["intercept"][0])
        self.calib_a, self.calib_b = (float(v) for v in arrays["calibration"])


REGISTRY = {cls.kind: cls for cls in
            (LogisticRegression, LDA, RandomForest, AdaBoost, GradientBoosting, XGBoost, MLP, LinearSVM)}


def make_learner(kind, seed=0, **overrides):
    if kind not in REGISTRY:
        raise ValueError(f"unknown learner kind {kind!r}; expected one of {KINDS}")
    cls = REGISTRY[kind]
    if "seed" in cls.hyper:
        overrides.setdefault("seed", seed)
    return cls(**overrides)


def train_base_learner(kind, X, y, seed=0, **overrides):
    return make_learner(kind, seed, **overrides).fit(X, y)

"""Probability table, base-learner selection and the meta random forest."""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container
from .container import ContainerError
from .dataset import stratified_kfold
from .learners import KINDS, REGISTRY, RandomForest, make_learner

COLUMNS = ("p_gray", "p_gamma", "p_invert", "p_3ch")
VARIANT_COLUMNS = dict(zip(("gray", "gamma", "invert", "chan3"), COLUMNS))


@dataclass
class ProbabilityTable:
    ids: list
    probs: np.ndarray  # [m, 4] in COLUMNS order
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.shape != (len(self.ids), len(COLUMNS)) or len(self.labels) != len(self.ids):
            raise ValueError("probability table rows disagree in length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("probability table ids must be unique")
        if ((self.probs < 0) | (self.probs > 1)).any():
            raise ValueError("probabilities must lie in [0, 1]")

    def __len__(self):
        return len(self.ids)

    def rows(self, ids):
        index = {sid: i for i, sid in enumerate(self.ids)}
        sel = [index[s] for s in ids]
        return self.probs[sel], self.labels[sel]

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", *COLUMNS, "label"])
            for sid, row, label in zip(self.ids, self.probs, self.labels):
                writer.writerow([sid, *(repr(float(v)) for v in row), int(label)])

    @classmethod
    def from_csv(cls, path):
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["id", *COLUMNS, "label"]:
                raise ValueError(f"{path}: unexpected header {header}")
            ids, probs, labels = [], [], []
            for row in reader:
                if row:
                    ids.append(row[0])
                    probs.append([float(v) for v in row[1:5]])
                    labels.append(int(row[5]))
        return cls(ids, np.array(probs).reshape(-1, len(COLUMNS)), np.array(labels))


def build_probability_table(variant_probs, ids, labels):
    """Assemble the table from ``{variant: {id: nodule probability}}``."""
    missing = [v for v in VARIANT_COLUMNS if v not in variant_probs]
    if missing:
        raise KeyError(f"missing variant model(s): {missing}")
    probs = np.array([[variant_probs[v][sid] for v in VARIANT_COLUMNS] for sid in ids], dtype=np.float64)
    return ProbabilityTable(list(ids), probs.reshape(len(ids), len(COLUMNS)), labels)


def accuracy(pred, labels):
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))


def select_top3(accuracies, order=KINDS):
    """Three best kinds by accuracy; ties keep ``order``."""
    ranked = sorted((k for k in order if k in accuracies), key=lambda k: (-accuracies[k], order.index(k)))
    if len(ranked) < 3:
        raise ValueError(f"need accuracies for at least three learners, got {ranked}")
    return ranked[:3]


def cross_validated_accuracy(table, foldplan, kinds=KINDS, seed=0, learner_params=None):
    """Mean test-fold accuracy of each learner kind (fit on train+val)."""
    learner_params = learner_params or {}
    scores = {k: [] for k in kinds}
    for fold in foldplan.folds:
        Xtr, ytr = table.rows(fold.train + fold.val)
        Xte, yte = table.rows(fold.test)
        for kind in kinds:
            model = make_learner(kind, seed, **learner_params.get(kind, {})).fit(Xtr, ytr)
            scores[kind].append(accuracy(model.predict(Xte), yte))
    return {k: float(np.mean(v)) for k, v in scores.items()}


def evaluate_and_select_top3(table, foldplan, kinds=KINDS, seed=0, learner_params=None):
    accs = cross_validated_accuracy(table, foldplan, kinds, seed, learner_params)
    return select_top3(accs), accs


@dataclass
class StackModel:
    kinds: list
    bases: list
    meta: RandomForest
    oof_audit: list = field(default_factory=list)

    def base_features(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.column_stack([b.predict_proba(X)[:, 1] for b in self.bases])


def _factory(base, seed, learner_params):
    if isinstance(base, str):
        return lambda: make_learner(base, seed, **learner_params.get(base, {}))
    return base


def train_meta_rf(bases, X, y, seed=0, inner_k=5, meta_trees=100, meta_depth=8, learner_params=None):
    """Stack three base learners under a random forest.

    Meta features are out-of-fold base probabilities from an inner
    stratified ``inner_k``-fold split; the bases are then refit on all rows.
    ``bases`` holds learner kinds or zero-argument learner factories.
    """
    if len(bases) != 3:
        raise ValueError(f"stacking needs exactly three base learners, got {len(bases)}")
    learner_params = learner_params or {}
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    factories = [_factory(b, seed, learner_params) for b in bases]
    rows = [str(i) for i in range(len(y))]
    plan = stratified_kfold(rows, y, k=inner_k, seed=seed)
    oof = np.full((len(y), 3), np.nan)
    audit = []
    for fold in plan.folds:
        tr = np.array([int(r) for r in fold.train + fold.val])
        te = np.array([int(r) for r in fold.test])
        if len(np.unique(y[tr])) < 2:
            raise ValueError("an inner fold has a single class; cannot stack")
        for j, make in enumerate(factories):
            oof[te, j] = make().fit(X[tr], y[tr]).predict_proba(X[te])[:, 1]
        audit.append((set(tr.tolist()), set(te.tolist())))
    meta = RandomForest(n_trees=meta_trees, max_depth=meta_depth, seed=seed).fit(oof, y)
    fitted = [make().fit(X, y) for make in factories]
    kinds = [b if isinstance(b, str) else getattr(f, "kind", "custom") for b, f in zip(bases, fitted)]
    return StackModel(kinds, fitted, meta, audit)


def predict_stack(stack, X):
    """Labels and class-1 probabilities (meta-forest vote fraction; ties -> 0)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != stack.bases[0].n_features:
        raise ValueError(f"expected {stack.bases[0].n_features} features, got shape {X.shape}")
    prob = stack.meta.predict_proba(stack.base_features(X))[:, 1]
    return (prob > 0.5).astype(np.int64), prob


# -- serialization ----------------------------------------------------------------

def _put_learner(config, tensors, prefix, learner):
    params, arrays = learner.get_state()
    config[f"{prefix}.kind"] = learner.kind
    for key, value in params.items():
        config[f"{prefix}.{key}"] = repr(value) if isinstance(value, float) else str(value)
    for key, arr in arrays.items():
        tensors[f"{prefix}.{key}"] = np.asarray(arr)


def _get_learner(config, tensors, prefix):
    kind = config.get(f"{prefix}.kind")
    if kind not in REGISTRY:
        raise ContainerError(f"unknown learner kind {kind!r} under {prefix}")
    params = {k[len(prefix) + 1:]: v for k, v in config.items() if k.startswith(prefix + ".")}
    arrays = {k[len(prefix) + 1:]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
    return REGISTRY[kind]().set_state(params, arrays)


def save_stack(stack, path, meta=None):
    config, tensors = {"kind": "stack"}, {}
    for i, base in enumerate(stack.bases):
        if base.kind not in REGISTRY:
            raise ContainerError("only registered learner kinds can be serialized")
        _put_learner(config, tensors, f"base{i}", base)
    _put_learner(config, tensors, "meta", stack.meta)
    for key, value in (meta or {}).items():
        config[f"info.{key}"] = str(value)
    container.save(path, config, tensors)


def load_stack(path):
    config, tensors = container.load(path)
    if config.get("kind") != "stack":
        raise ContainerError(f"{path}: not a stack model (kind={config.get('kind')!r})")
    bases = [_get_learner(config, tensors, f"base{i}") for i in range(3)]
    meta = _get_learner(config, tensors, "meta")
    return StackModel([b.kind for b in bases], bases, meta)

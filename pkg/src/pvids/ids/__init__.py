"""Supervised attack classifiers written on numpy, with metrics and data splitting."""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .knn import KNeighbors
from .linear import L1Logistic
from .metrics import METRICS, EvalReport, evaluate, from_counts, pr_auc, roc_auc
from .mlp import MLP
from .trees import GradientBoosting, RandomForest

ALGORITHMS = ("lr", "knn", "rf", "gbt", "mlp")
SCALED = {"lr", "knn", "mlp"}
MODEL_FORMAT = "pvids-model"
MODEL_VERSION = 1


class Standardizer:
    def __init__(self, mean=None, std=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=float)
        self.std = None if std is None else np.asarray(std, dtype=float)

    def fit(self, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        if (std == 0).any():
            warnings.warn("constant feature(s); std set to 1", stacklevel=2)
            std = np.where(std == 0, 1.0, std)
        self.std = std
        return self

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def fit_transform(self, X) -> np.ndarray:
        return self.fit(X).transform(X)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass(frozen=True)
class LRParams:
    C: float = 100.0
    penalty: str = "l1"
    max_iter: int = 1000
    tol: float = 1e-6


@dataclass(frozen=True)
class KNNParams:
    k: int = 2
    p: float = 2.0  # Minkowski exponent


@dataclass(frozen=True)
class RFParams:
    n_trees: int = 100
    max_depth: int = 100
    max_features: int = 3
    min_leaf: int = 3
    min_split: int = 12


@dataclass(frozen=True)
class GBTParams:
    learning_rate: float = 0.01
    max_depth: int = 4
    max_features: str | int = "sqrt"
    n_estimators: int = 1750
    subsample: float = 1.0
    seed: int = 10


@dataclass(frozen=True)
class MLPParams:
    hidden: tuple = (50, 100, 50)
    activation: str = "tanh"
    alpha: float = 1e-4
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 200
    max_iter: int = 1000
    tol: float = 1e-4
    halve_after: int = 2
    stop_after: int = 10


@dataclass(frozen=True)
class Hyperparams:
    lr: LRParams = field(default_factory=LRParams)
    knn: KNNParams = field(default_factory=KNNParams)
    rf: RFParams = field(default_factory=RFParams)
    gbt: GBTParams = field(default_factory=GBTParams)
    mlp: MLPParams = field(default_factory=MLPParams)

    def for_algo(self, algo: str):
        if algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algo!r}; expected one of {', '.join(ALGORITHMS)}")
        return getattr(self, algo)


_PARAM_TYPES = {"lr": LRParams, "knn": KNNParams, "rf": RFParams, "gbt": GBTParams, "mlp": MLPParams}


def _build(algo: str, hp, d: int):
    if algo == "lr":
        if hp.penalty != "l1":
            raise ValueError("only the l1 penalty is implemented")
        return L1Logistic(hp.C, hp.max_iter, hp.tol)
    if algo == "knn":
        return KNeighbors(hp.k, hp.p)
    if algo == "rf":
        return RandomForest(hp.n_trees, hp.max_depth, hp.max_features, hp.min_leaf, hp.min_split)
    if algo == "gbt":
        mf = max(1, int(np.sqrt(d))) if hp.max_features == "sqrt" else int(hp.max_features)
        return GradientBoosting(hp.learning_rate, hp.max_depth, mf, hp.n_estimators, hp.subsample, hp.seed)
    if algo == "mlp":
        if hp.activation != "tanh":
            raise ValueError("only tanh hidden units are implemented")
        return MLP(hp.hidden, hp.alpha, hp.lr, hp.beta1, hp.beta2, hp.eps, hp.batch_size, hp.max_iter,
                   hp.tol, hp.halve_after, hp.stop_after)
    raise ValueError(f"unknown algorithm {algo!r}; expected one of {', '.join(ALGORITHMS)}")


@dataclass
class TrainedModel:
    algorithm: str
    hyperparams: object
    estimator: object
    scaler: Standardizer | None
    meta: dict = field(default_factory=dict)

    def _prep(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.scaler.transform(X) if self.scaler is not None else X


def train(algorithm: str, X, y, hp: Hyperparams | None = None, seed: int = 0, meta: dict | None = None) -> TrainedModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise ValueError("training set holds a single class")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    hp = hp or Hyperparams()
    params = hp.for_algo(algorithm) if isinstance(hp, Hyperparams) else hp
    est = _build(algorithm, params, X.shape[1])
    scaler = Standardizer().fit(X) if algorithm in SCALED else None
    Xt = scaler.transform(X) if scaler is not None else X
    y = y.astype(int)
    if algorithm in ("rf", "mlp"):
        est.fit(Xt, y, seed=seed)
    else:
        est.fit(Xt, y)
    info = {"seed": int(seed), "standardized": scaler is not None, "n_train": int(len(y))}
    info.update(meta or {})
    return TrainedModel(algorithm, params, est, scaler, info)


def predict_score(model: TrainedModel, X) -> np.ndarray:
    """Attack score in [0, 1] for each row (a single row gives a length-1 array)."""
    if model is None or model.estimator is None:
        raise ValueError("model is not trained")
    return model.estimator.score(model._prep(X))


def predict_label(model: TrainedModel, X) -> np.ndarray:
    if model.algorithm == "knn":
        return model.estimator.predict(model._prep(X))
    return (predict_score(model, X) >= 0.5).astype(int)


def evaluate_model(model: TrainedModel, X, y) -> EvalReport:
    Xp = model._prep(X)
    scores = model.estimator.score(Xp)
    pred = model.estimator.predict(Xp) if model.algorithm == "knn" else None
    return evaluate(scores, y, pred)


# ---------------------------------------------------------------- splitting


def train_test_split(y, test_frac: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified (train_idx, test_idx), both sorted."""
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must lie in (0, 1)")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    test = []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        test.append(idx[: int(round(test_frac * len(idx)))])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(y)), test)
    return train, test


def stratified_folds(y, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold id (0..k-1) per row; classes dealt round-robin so fold sizes differ by at most one."""
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(y) < k:
        raise ValueError("fewer rows than folds")
    classes, counts = np.unique(y, return_counts=True)
    if (counts < k).any():
        raise ValueError("a class has fewer members than folds")
    rng = np.random.default_rng(seed)
    dealt = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in classes])
    fold = np.empty(len(y), dtype=int)
    fold[dealt] = np.arange(len(y)) % k
    return fold


def kfold_cv(X, y, k: int = 5, algorithm: str = "rf", hp: Hyperparams | None = None, seed: int = 0) -> list[EvalReport]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    fold = stratified_folds(y, k, seed)
    out = []
    for f in range(k):
        tr = fold != f
        model = train(algorithm, X[tr], y[tr], hp, seed)
        out.append(evaluate_model(model, X[~tr], y[~tr]))
    return out


# -------------------------------------------------------------- persistence


def save_model(model: TrainedModel, path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "algorithm": model.algorithm,
        "hyperparams": asdict(model.hyperparams),
        "standardizer": model.scaler.to_dict() if model.scaler is not None else None,
        "params": model.estimator.to_dict(),
        "meta": model.meta,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: model version {doc.get('version')} != {MODEL_VERSION}")
    algo = doc["algorithm"]
    cls = _PARAM_TYPES[algo]
    raw = doc["hyperparams"]
    if algo == "mlp":
        raw = {**raw, "hidden": tuple(raw["hidden"])}
    params = cls(**{f.name: raw[f.name] for f in fields(cls)})
    est = _build(algo, params, 1).load(doc["params"])
    sc = doc["standardizer"]
    scaler = Standardizer(sc["mean"], sc["std"]) if sc is not None else None
    return TrainedModel(algo, params, est, scaler, doc.get("meta", {}))


__all__ = [
    "ALGORITHMS", "METRICS", "EvalReport", "Hyperparams", "LRParams", "KNNParams", "RFParams", "GBTParams",
    "MLPParams", "Standardizer", "TrainedModel", "train", "predict_score", "predict_label", "evaluate",
    "evaluate_model", "from_counts", "roc_auc", "pr_auc", "train_test_split", "stratified_folds", "kfold_cv",
    "save_model", "load_model",
]

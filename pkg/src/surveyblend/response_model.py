"""Predictive response model for the unknown-bias pathway.

Fits gradient-boosted trees to the binomial deviance on probability-sample
respondents, stacked one row per (respondent, question) with the question id
dummy-coded alongside the demographic dummies, then scores nonprobability
units with predicted probabilities of answering yes.

The booster is deliberately self-contained and deterministic: all features
are 0/1 dummies, so each stage greedily searches every feature exactly
(squared-error criterion on the gradient residuals y - p), leaf values take
a single Newton step sum(y - p) / sum(p(1-p)), and the tree contribution is
scaled by the shrinkage. Identical data, config, and seed reproduce the
model bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .estimators import PredictedProbabilities

_LEAF_VALUE_BOUND = 15.0   # raw Newton step cap; never binds off degenerate leaves
_MIN_HESSIAN = 1e-12


class SchemaMismatchError(ValueError):
    """Rows to score do not follow the model's training column layout."""


@dataclass(frozen=True)
class GBMConfig:
    """Boosting tuning values; the defaults are the selected production tuning."""

    n_trees: int = 1000
    max_depth: int = 3
    shrinkage: float = 0.05
    min_node: int = 10

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.shrinkage <= 0 or self.min_node < 1:
            raise ValueError(f"invalid boosting config {self}")


@dataclass(frozen=True)
class StackedTrainingSet:
    """Question-by-respondent rows: question dummies, demographics, 0/1 label."""

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    questions: tuple[str, ...]
    respondent_index: np.ndarray
    question_index: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def take(self, indices: np.ndarray) -> "StackedTrainingSet":
        indices = np.asarray(indices)
        return StackedTrainingSet(
            self.X[indices], self.y[indices], self.columns, self.questions,
            self.respondent_index[indices], self.question_index[indices],
        )


def build_training_set(sample, questions: tuple[str, ...] | None = None) -> StackedTrainingSet:
    """Stack one row per non-missing (respondent, question) answer.

    Refusals (NaN cells) are dropped row-wise; the row order is
    respondent-major and deterministic.
    """
    questions = tuple(questions) if questions is not None else sample.questions
    q_cols = [sample.question_index(q) for q in questions]
    y_mat = sample.y[:, q_cols]
    observed = ~np.isnan(y_mat)
    if not observed.any():
        raise ValueError("no non-missing answers to stack")
    resp_idx, q_idx = np.nonzero(observed)
    demo = sample.X[:, 1:]  # drop the intercept column; trees have no use for it
    if sample.schema is not None:
        demo_names = sample.schema.column_names()[1:]
    else:
        demo_names = tuple(f"x{j}" for j in range(1, demo.shape[1] + 1))
    X = np.hstack([np.eye(len(questions))[q_idx], demo[resp_idx]])
    columns = tuple(f"question:{q}" for q in questions) + tuple(demo_names)
    return StackedTrainingSet(
        X=X,
        y=y_mat[resp_idx, q_idx].astype(float),
        columns=columns,
        questions=questions,
        respondent_index=resp_idx,
        question_index=q_idx,
    )


def split_training_set(
    train: StackedTrainingSet, test_fraction: float = 0.2, seed: int = 0
) -> tuple[StackedTrainingSet, StackedTrainingSet]:
    """80/20-style split, stratified by label, deterministic per seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5417)))
    test_parts = []
    for label in (0.0, 1.0):
        members = np.flatnonzero(train.y == label)
        members = members[rng.permutation(len(members))]
        n_test = int(round(test_fraction * len(members)))
        test_parts.append(members[:n_test])
    test_idx = np.sort(np.concatenate(test_parts))
    train_mask = np.ones(train.n_rows, dtype=bool)
    train_mask[test_idx] = False
    return train.take(np.flatnonzero(train_mask)), train.take(test_idx)


def log_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _build_tree(X, idx, residual, hess, depth_left, min_node):
    """Exact greedy CART on 0/1 features; returns a nested-dict node."""
    r = residual[idx]
    n = len(idx)
    if depth_left > 0 and n >= 2 * min_node:
        Xn = X[idx]
        left_sum = r @ Xn                     # residual total where feature == 1
        left_cnt = Xn.sum(axis=0)
        total = r.sum()
        right_sum = total - left_sum
        right_cnt = n - left_cnt
        valid = (left_cnt >= min_node) & (right_cnt >= min_node)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(
                valid,
                left_sum**2 / left_cnt + right_sum**2 / right_cnt - total**2 / n,
                -np.inf,
            )
        best = int(np.argmax(gain))
        if gain[best] > 1e-12:
            ones = Xn[:, best] > 0.5
            return {
                "feature": best,
                "zero": _build_tree(X, idx[~ones], residual, hess, depth_left - 1, min_node),
                "one": _build_tree(X, idx[ones], residual, hess, depth_left - 1, min_node),
            }
    value = r.sum() / max(hess[idx].sum(), _MIN_HESSIAN)
    value = float(np.clip(value, -_LEAF_VALUE_BOUND, _LEAF_VALUE_BOUND))
    return {"value": value, "index": idx}


def _strip_indices(node):
    if "value" in node:
        return {"value": node["value"]}
    return {
        "feature": node["feature"],
        "zero": _strip_indices(node["zero"]),
        "one": _strip_indices(node["one"]),
    }


def _apply_to_train(node, scores, shrinkage):
    if "value" in node:
        scores[node["index"]] += shrinkage * node["value"]
    else:
        _apply_to_train(node["zero"], scores, shrinkage)
        _apply_to_train(node["one"], scores, shrinkage)


def _tree_scores(node, X, idx, out):
    if "value" in node:
        out[idx] = node["value"]
        return
    ones = X[idx, node["feature"]] > 0.5
    _tree_scores(node["zero"], X, idx[~ones], out)
    _tree_scores(node["one"], X, idx[ones], out)


@dataclass(frozen=True)
class BoostedModel:
    """A fitted boosting ensemble plus everything needed to rescore safely."""

    init_score: float
    shrinkage: float
    trees: tuple[dict, ...]
    columns: tuple[str, ...]
    questions: tuple[str, ...]
    config: GBMConfig
    train_logloss: tuple[float, ...]

    def decision_function(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise SchemaMismatchError(
                f"rows have {rows.shape[1] if rows.ndim == 2 else 'wrong'} columns; "
                f"model was trained on {len(self.columns)}"
            )
        scores = np.full(len(rows), self.init_score)
        idx = np.arange(len(rows))
        buffer = np.empty(len(rows))
        for tree in self.trees:
            _tree_scores(tree, rows, idx, buffer)
            scores += self.shrinkage * buffer
        return scores


def fit_gbm(train: StackedTrainingSet, config: GBMConfig = GBMConfig()) -> BoostedModel:
    """Gradient boosting on the binomial deviance.

    Initializes at the log-odds of the label mean, then per stage fits a
    depth-limited tree to the residual y - p with Newton leaf values and
    adds it scaled by the shrinkage. The per-stage training log-loss trace
    is recorded on the model.
    """
    y = train.y
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0.0, 1.0))):
        raise ValueError("labels must be 0/1")
    if len(classes) < 2:
        raise ValueError("training set has a single class; nothing to model")
    X = train.X
    p_bar = float(y.mean())
    init = float(np.log(p_bar / (1.0 - p_bar)))
    scores = np.full(len(y), init)
    trace = [log_loss(y, expit(scores))]
    trees = []
    all_idx = np.arange(len(y))
    for _ in range(config.n_trees):
        p = expit(scores)
        residual = y - p
        hess = p * (1.0 - p)
        root = _build_tree(X, all_idx, residual, hess, config.max_depth, config.min_node)
        _apply_to_train(root, scores, config.shrinkage)
        trees.append(_strip_indices(root))
        trace.append(log_loss(y, expit(scores)))
    return BoostedModel(
        init_score=init,
        shrinkage=config.shrinkage,
        trees=tuple(trees),
        columns=train.columns,
        questions=train.questions,
        config=config,
        train_logloss=tuple(trace),
    )


def predict_probability(model: BoostedModel, rows: np.ndarray) -> np.ndarray:
    """Probabilities of answering yes for rows in the training column layout."""
    return expit(model.decision_function(rows))


def scoring_rows(model: BoostedModel, sample, question: str) -> np.ndarray:
    """Rows for scoring every unit of ``sample`` at one question."""
    if question not in model.questions:
        raise SchemaMismatchError(f"question {question!r} was not in the training block")
    demo = sample.X[:, 1:]
    expected_demo = len(model.columns) - len(model.questions)
    if demo.shape[1] != expected_demo:
        raise SchemaMismatchError(
            f"sample has {demo.shape[1]} demographic dummies; model expects {expected_demo}"
        )
    onehot = np.zeros(len(model.questions))
    onehot[model.questions.index(question)] = 1.0
    return np.hstack([np.tile(onehot, (sample.n, 1)), demo])


def predict_for_sample(model: BoostedModel, sample, question: str) -> PredictedProbabilities:
    """Predicted probabilities for one question over a sample's units."""
    return PredictedProbabilities(
        question, predict_probability(model, scoring_rows(model, sample, question))
    )


# ---------------------------------------------------------------------------
# classifier evaluation

@dataclass(frozen=True)
class ClassifierEval:
    accuracy: float
    auc: float
    log_loss: float
    roc: np.ndarray  # (k, 3) columns fpr, tpr, threshold


def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic; ties count half."""
    labels = np.asarray(labels, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n_pos = int((labels == 1.0).sum())
    n_neg = int((labels == 0.0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    rank_sum = float(ranks[labels == 1.0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_points(labels: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """ROC curve points from (0,0) to (1,1), one per distinct score threshold."""
    labels = np.asarray(labels, dtype=float)
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    scores = scores[order]
    n_pos = labels.sum()
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    tp = np.cumsum(labels)
    fp = np.cumsum(1.0 - labels)
    last_of_threshold = np.flatnonzero(np.diff(scores, append=-np.inf) != 0.0)
    points = [(0.0, 0.0, np.inf)]
    for i in last_of_threshold:
        points.append((fp[i] / n_neg, tp[i] / n_pos, scores[i]))
    return np.asarray(points)


def evaluate_classifier(model: BoostedModel, test: StackedTrainingSet) -> ClassifierEval:
    """Accuracy at the 0.5 threshold, rank-statistic AUC, log-loss, ROC points."""
    if test.n_rows == 0:
        raise ValueError("empty test set")
    p = predict_probability(model, test.X)
    return ClassifierEval(
        accuracy=float(np.mean((p >= 0.5) == (test.y == 1.0))),
        auc=auc_score(test.y, p),
        log_loss=log_loss(test.y, p),
        roc=roc_points(test.y, p),
    )


@dataclass(frozen=True)
class CVResult:
    best_config: GBMConfig
    best_index: int
    mean_losses: tuple[float, ...]
    fold_losses: tuple[tuple[float, ...], ...]


def cross_validate(
    train: StackedTrainingSet,
    n_folds: int,
    grid: tuple[GBMConfig, ...],
    seed: int = 0,
) -> CVResult:
    """Pick the grid config with the smallest mean validation log-loss.

    Fold assignment is a seeded permutation; ties go to the earliest grid
    entry so reruns are reproducible.
    """
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    if not grid:
        raise ValueError("empty config grid")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xCF)))
    folds = np.array_split(rng.permutation(train.n_rows), n_folds)
    fold_losses = []
    for config in grid:
        losses = []
        for fold in folds:
            held = np.zeros(train.n_rows, dtype=bool)
            held[fold] = True
            model = fit_gbm(train.take(np.flatnonzero(~held)), config)
            p = predict_probability(model, train.X[fold])
            losses.append(log_loss(train.y[fold], p))
        fold_losses.append(tuple(losses))
    means = tuple(float(np.mean(l)) for l in fold_losses)
    best = 0
    for i, m in enumerate(means):
        if m < means[best]:
            best = i
    return CVResult(grid[best], best, means, tuple(fold_losses))


# ---------------------------------------------------------------------------
# portable serialization so fit and predict can run as separate processes

_FORMAT = "surveyblend-gbm"
_VERSION = 1


def save_model(model: BoostedModel, path) -> None:
    payload = {
        "format": _FORMAT,
        "version": _VERSION,
        "init_score": model.init_score,
        "shrinkage": model.shrinkage,
        "columns": list(model.columns),
        "questions": list(model.questions),
        "config": asdict(model.config),
        "train_logloss": list(model.train_logloss),
        "trees": list(model.trees),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> BoostedModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != _FORMAT or payload.get("version") != _VERSION:
        raise ValueError(
            f"unsupported model file {path}: format={payload.get('format')!r} "
            f"version={payload.get('version')!r}"
        )
    return BoostedModel(
        init_score=float(payload["init_score"]),
        shrinkage=float(payload["shrinkage"]),
        trees=tuple(payload["trees"]),
        columns=tuple(payload["columns"]),
        questions=tuple(payload["questions"]),
        config=GBMConfig(**payload["config"]),
        train_logloss=tuple(payload["train_logloss"]),
    )

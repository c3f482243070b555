"""Baseline trainers and the sentinel result-block emission.

Two fixed baselines stand behind the request interface: regularized least
squares for regression and a regularized logistic model for (binary)
classification.  The train/test split is a pure function of the seed and
the row index, so the same request always produces the same block, byte
for byte.
"""

from __future__ import annotations

import hashlib
import json
import re
import sys
from pathlib import Path

import numpy as np

from .recipes import RecipeContext, UnknownColumnError, YEAR_RE, derive_feature
from .request import ToolkitError, TrainerRequest, load_request, load_table

RESULT_BEGIN = "ALEKS_RESULT_BEGIN"
RESULT_END = "ALEKS_RESULT_END"

RIDGE_ALPHA = 1.0
LOGISTIC_L2 = 1e-3
LOGISTIC_LR = 0.5
LOGISTIC_STEPS = 800

PREDICTIONS_FILE = "predictions.csv"


class TrainingError(ToolkitError):
    pass


def split_mask(n_rows: int, seed: int, test_fraction: float) -> np.ndarray:
    """Deterministic hash-based test mask, stable across platforms."""
    mask = np.zeros(n_rows, dtype=bool)
    for i in range(n_rows):
        digest = hashlib.sha256(f"{seed}:{i}".encode()).digest()
        mask[i] = int.from_bytes(digest[:8], "big") / 2**64 < test_fraction
    return mask


def _standardize(train: np.ndarray):
    mu = train.mean(axis=0)
    sigma = train.std(axis=0)
    sigma[sigma == 0] = 1.0
    return mu, sigma


def fit_ridge(X: np.ndarray, y: np.ndarray, alpha: float = RIDGE_ALPHA):
    mu, sigma = _standardize(X)
    Xs = (X - mu) / sigma
    A = np.hstack([np.ones((len(Xs), 1)), Xs])
    penalty = alpha * np.eye(A.shape[1])
    penalty[0, 0] = 0.0  # intercept unpenalized
    beta = np.linalg.solve(A.T @ A + penalty, A.T @ y)

    def predict(Xnew: np.ndarray) -> np.ndarray:
        As = np.hstack([np.ones((len(Xnew), 1)), (Xnew - mu) / sigma])
        return As @ beta

    return predict


def fit_logistic(
    X: np.ndarray,
    y01: np.ndarray,
    l2: float = LOGISTIC_L2,
    lr: float = LOGISTIC_LR,
    steps: int = LOGISTIC_STEPS,
):
    mu, sigma = _standardize(X)
    A = np.hstack([np.ones((len(X), 1)), (X - mu) / sigma])
    w = np.zeros(A.shape[1])
    mask = np.ones_like(w)
    mask[0] = 0.0  # intercept unpenalized
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(A @ w)))
        grad = A.T @ (p - y01) / len(A) + l2 * w * mask
        w -= lr * grad

    def predict(Xnew: np.ndarray) -> np.ndarray:
        As = np.hstack([np.ones((len(Xnew), 1)), (Xnew - mu) / sigma])
        return (1.0 / (1.0 + np.exp(-(As @ w))) >= 0.5).astype(float)

    return predict


# toolkit-side metric formulas, kept local so the emitting side never
# depends on the engine that re-verifies them


def _r_square(y, yhat) -> float:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        raise TrainingError("label has zero variance on the test split")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def _rmse(y, yhat) -> float:
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def _confusion(y, yhat, classes) -> list[list[int]]:
    index = {c: i for i, c in enumerate(classes)}
    matrix = [[0] * len(classes) for _ in classes]
    for true, pred in zip(y, yhat):
        matrix[index[true]][index[pred]] += 1
    return matrix


def _accuracy(matrix) -> float:
    total = sum(map(sum, matrix))
    return sum(matrix[i][i] for i in range(len(matrix))) / total


def _weighted_f1(matrix) -> float:
    total = sum(map(sum, matrix))
    value = 0.0
    for c in range(len(matrix)):
        support = sum(matrix[c])
        if support == 0:
            continue
        tp = matrix[c][c]
        predicted = sum(row[c] for row in matrix)
        precision = tp / predicted if predicted else 0.0
        recall = tp / support
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        value += (support / total) * f1
    return value


def _target_year(label: str) -> int | None:
    m = YEAR_RE.match(label)
    return int(m.group(2)) if m else None


def train_and_report(request: TrainerRequest, workdir: str | Path = ".") -> dict:
    """Train the requested baseline and return the result payload.

    Also writes ``predictions.csv`` (row_index, y_true, y_pred over the
    test split) into ``workdir`` so the emitted metrics can be recomputed
    independently.
    """
    table = dict(load_table(request.resolve_dataset()))
    ctx = RecipeContext(coordinates=request.coordinates, target_year=_target_year(request.label))

    for name in request.features + (request.label,):
        if name not in table:
            raise UnknownColumnError(f"column {name!r} not found")
    for name, recipe in request.derived:
        table[name] = derive_feature(recipe, table, ctx)

    feature_names = list(request.features) + [name for name, _ in request.derived]
    X = np.column_stack([table[name] for name in feature_names])
    y = table[request.label]

    keep = ~np.isnan(y)
    if X.size:
        keep &= ~np.isnan(X).any(axis=1)
    dropped = int(len(y) - keep.sum())
    X, y = X[keep], y[keep]
    row_index = np.flatnonzero(keep)
    if len(y) < 4:
        raise TrainingError(f"only {len(y)} usable rows after dropping missing values")

    test = split_mask(len(y), request.seed, request.test_fraction)
    if not test.any() or test.all():
        raise TrainingError("split left an empty train or test side")
    notes = [f"rows={len(y)}", f"train={int((~test).sum())}", f"test={int(test.sum())}"]
    if dropped:
        notes.append(f"dropped={dropped}")

    if request.formulation == "regression":
        predict = fit_ridge(X[~test], y[~test])
        yhat = predict(X[test])
        metrics = {
            "r_square": _r_square(y[test], yhat),
            "rmse": _rmse(y[test], yhat),
            "split": "test",
        }
        y_true_out, y_pred_out = y[test], yhat
    else:
        classes = sorted(set(y.tolist()))
        if len(classes) < 2:
            raise TrainingError("classification needs at least two label values")
        if len(classes) > 2:
            y = (y > 0).astype(float)
            classes = [0.0, 1.0]
            notes.append("binarized label as count > 0")
        mapping = {c: float(i) for i, c in enumerate(classes)}
        y01 = np.vectorize(mapping.get)(y)
        predict = fit_logistic(X[~test], y01[~test])
        yhat01 = predict(X[test])
        matrix = _confusion(y01[test].tolist(), yhat01.tolist(), [0.0, 1.0])
        metrics = {
            "accuracy": _accuracy(matrix),
            "weighted_f1": _weighted_f1(matrix),
            "confusion": matrix,
            "split": "test",
        }
        y_true_out, y_pred_out = y01[test], yhat01

    _write_predictions(Path(workdir) / PREDICTIONS_FILE, row_index[test], y_true_out, y_pred_out)
    return {
        "formulation": request.formulation,
        "metrics": metrics,
        "features_used": feature_names,
        "notes": "; ".join(notes),
    }


def _write_predictions(path: Path, rows: np.ndarray, y_true: np.ndarray, y_pred: np.ndarray) -> None:
    lines = ["row_index,y_true,y_pred"]
    for r, t, p in zip(rows, y_true, y_pred):
        lines.append(f"{int(r)},{float(t)!r},{float(p)!r}")
    path.write_text("\n".join(lines) + "\n")


def format_result_block(payload: dict) -> str:
    return f"{RESULT_BEGIN}\n{json.dumps(payload, sort_keys=True)}\n{RESULT_END}"


def run_request(request: TrainerRequest, workdir: str | Path = ".", out=None) -> dict:
    """Train and print the sentinel result block; returns the payload."""
    payload = train_and_report(request, workdir)
    print(format_result_block(payload), file=out or sys.stdout)
    return payload


def run_request_file(path: str | Path = "request.json", workdir: str | Path = ".", out=None) -> dict:
    return run_request(load_request(path), workdir=workdir, out=out)

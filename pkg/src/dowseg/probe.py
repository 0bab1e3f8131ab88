"""Masked-pooling linear probe for region classification.

Feature maps come from an external frozen encoder; this module upsamples
them, pools them under binary region masks, and fits a multinomial logistic
regression with L2 regularization (full-batch gradient descent with
backtracking line search) or a kNN baseline, with stratified k-fold
cross-validation scored by macro F1.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "ProbeModel",
    "CVResult",
    "bilinear_upsample",
    "masked_pool",
    "pooled_features",
    "fit_logreg",
    "predict_proba",
    "predict",
    "knn_predict",
    "macro_f1",
    "stratified_folds",
    "cross_validate",
    "default_grid",
    "save_model",
    "load_model",
]

GRAD_TOL = 1e-6
MAX_ITER = 10_000


@dataclass
class ProbeModel:
    weights: np.ndarray  # (channels, classes) float64
    bias: np.ndarray  # (classes,) float64
    lam: float
    classes: np.ndarray  # class ids, ascending, fixed at fit time


@dataclass
class CVResult:
    best: dict
    best_mean_f1: float
    table: list[tuple[dict, float, list[float]]]  # (config, mean, per-fold)


def bilinear_upsample(f: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-channel bilinear interpolation (align-corners-false convention).

    Output pixel centers sample the input at ((i+0.5)*H/out_h - 0.5,
    (j+0.5)*W/out_w - 0.5), clamped to the grid.
    """
    f = np.asarray(f)
    if f.ndim != 3:
        raise ValidationError("feature map must be (H, W, C)")
    h, w, _ = f.shape
    if out_h < h or out_w < w:
        raise ValidationError("output size must be >= input size")
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = f[y0][:, x0] * (1 - wx) + f[y0][:, x1] * wx
    bot = f[y1][:, x0] * (1 - wx) + f[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(f.dtype)


def masked_pool(f: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Per-channel mean of the feature vectors under a nonempty binary mask."""
    f = np.asarray(f)
    mask = np.asarray(mask).astype(bool)
    if f.ndim != 3:
        raise ValidationError("feature map must be (H, W, C)")
    if mask.shape != f.shape[:2]:
        raise ValidationError("mask shape must match the feature spatial shape")
    if not mask.any():
        raise ValidationError("mask selects no pixels")
    return f[mask].mean(axis=0, dtype=np.float64)


def _nearest_downsample_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape
    ys = np.clip(np.rint((np.arange(out_h) + 0.5) * h / out_h - 0.5).astype(int), 0, h - 1)
    xs = np.clip(np.rint((np.arange(out_w) + 0.5) * w / out_w - 0.5).astype(int), 0, w - 1)
    return mask[np.ix_(ys, xs)]


def pooled_features(f: np.ndarray, mask: np.ndarray, mode: str = "upsample") -> np.ndarray:
    """Pool a feature map under a region mask at full or feature resolution.

    "upsample" interpolates the features to the mask size before pooling
    (the default pipeline); "mask-downsample" instead shrinks the mask to
    the feature grid (ablation); "no-mask" averages the whole map.
    """
    f = np.asarray(f)
    mask = np.asarray(mask).astype(bool)
    if mode == "upsample":
        return masked_pool(bilinear_upsample(f, *mask.shape), mask)
    if mode == "mask-downsample":
        return masked_pool(f, _nearest_downsample_mask(mask, f.shape[0], f.shape[1]))
    if mode == "no-mask":
        return masked_pool(f, np.ones(f.shape[:2], dtype=bool))
    raise ValidationError(f"unknown pooling mode {mode!r}")


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logreg_objective(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y_onehot: np.ndarray, lam: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + (lam/2)*||W||^2 with its analytic gradient.

    The bias is unregularized.
    """
    n = x.shape[0]
    p = _softmax(x @ weights + bias)
    eps = np.finfo(np.float64).tiny
    loss = -np.sum(y_onehot * np.log(np.maximum(p, eps))) / n
    loss += 0.5 * lam * float(np.sum(weights * weights))
    diff = (p - y_onehot) / n
    grad_w = x.T @ diff + lam * weights
    grad_b = diff.sum(axis=0)
    return float(loss), grad_w, grad_b


def fit_logreg(
    x: np.ndarray, y: np.ndarray, lam: float = 1e-4, history: list | None = None
) -> ProbeModel:
    """Deterministic full-batch descent from zero initialization.

    First-order method with Armijo backtracking; the weight block's descent
    direction is scaled by 1/(1+lam) so strongly regularized problems stay
    well conditioned while the unregularized bias keeps full-size steps.
    The objective decreases at every accepted step; the run stops at
    gradient norm <= 1e-6 or 10,000 iterations. ``history``, if given,
    collects the accepted objective values.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("x must be (N, D) with matching labels")
    if lam < 0:
        raise ValidationError("lam must be >= 0")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValidationError("need at least two classes")
    onehot = (y[:, None] == classes[None, :]).astype(np.float64)

    w = np.zeros((x.shape[1], classes.size))
    b = np.zeros(classes.size)
    scale_w = 1.0 / (1.0 + lam)
    step = 1.0
    f0, gw, gb = logreg_objective(w, b, x, onehot, lam)
    if history is not None:
        history.append(f0)
    for _ in range(MAX_ITER):
        if np.sqrt(float(np.sum(gw * gw) + np.sum(gb * gb))) <= GRAD_TOL:
            break
        # directional derivative along the preconditioned direction
        slope = float(scale_w * np.sum(gw * gw) + np.sum(gb * gb))
        while True:
            w_try = w - step * scale_w * gw
            b_try = b - step * gb
            f1, gw1, gb1 = logreg_objective(w_try, b_try, x, onehot, lam)
            if f1 <= f0 - 1e-4 * step * slope:
                w, b, f0, gw, gb = w_try, b_try, f1, gw1, gb1
                if history is not None:
                    history.append(f0)
                step *= 2.0
                break
            step *= 0.5
            if step < 1e-20:
                return ProbeModel(w, b, lam, classes)
    return ProbeModel(w, b, lam, classes)


def predict_proba(model: ProbeModel, x: np.ndarray) -> np.ndarray:
    """Class distribution per row; rows sum to one."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return _softmax(x @ model.weights + model.bias)


def predict(model: ProbeModel, x: np.ndarray) -> np.ndarray:
    """Most probable class per row (ties go to the lowest class id)."""
    p = predict_proba(model, x)
    return model.classes[np.argmax(p, axis=1)]


def knn_predict(train_x: np.ndarray, train_y: np.ndarray, query: np.ndarray, k: int):
    """Euclidean k-nearest-neighbour vote; ties take the nearest tied class."""
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = np.asarray(train_y)
    if k < 1:
        raise ValidationError("k must be >= 1")
    q = np.atleast_2d(np.asarray(query, dtype=np.float64))
    k = min(k, train_x.shape[0])
    d2 = ((q[:, None, :] - train_x[None, :, :]) ** 2).sum(axis=2)
    out = []
    for row in d2:
        nearest = np.argsort(row, kind="stable")[:k]
        votes: dict = {}
        for idx in nearest:
            votes[train_y[idx]] = votes.get(train_y[idx], 0) + 1
        top = max(votes.values())
        tied = {c for c, v in votes.items() if v == top}
        for idx in nearest:  # first (= nearest) hit among tied classes wins
            if train_y[idx] in tied:
                out.append(train_y[idx])
                break
    result = np.asarray(out)
    return result if np.asarray(query).ndim > 1 else result[0]


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def macro_f1(y_true, y_pred, classes=None) -> float:
    """Unweighted mean F1 over classes (0 for a class never predicted/hit)."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if classes is None:
        classes = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    scores = []
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def stratified_folds(y: np.ndarray, k_folds: int, seed: int = 0) -> list[np.ndarray]:
    """Index folds with per-class sizes differing by at most one."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValidationError("empty data")
    if k_folds < 2:
        raise ValidationError("need at least two folds")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k_folds)]
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            folds[(offset + pos) % k_folds].append(int(i))
        offset += idx.size  # stagger so small classes spread over folds
    return [np.array(sorted(f), dtype=int) for f in folds]


def default_grid() -> list[dict]:
    lams = [10.0 ** e for e in range(-4, 3)]
    return [{"model": "logreg", "lam": lam} for lam in lams] + [
        {"model": "knn", "k": k} for k in (1, 3, 5, 7, 11)
    ]


def _fit_predict(config: dict, xtr, ytr, xte) -> np.ndarray:
    if config["model"] == "logreg":
        return predict(fit_logreg(xtr, ytr, lam=config["lam"]), xte)
    if config["model"] == "knn":
        return knn_predict(xtr, ytr, xte, k=config["k"])
    raise ValidationError(f"unknown model {config['model']!r}")


def cross_validate(
    x: np.ndarray,
    y: np.ndarray,
    k_folds: int = 10,
    grid: list[dict] | None = None,
    seed: int = 0,
) -> CVResult:
    """Stratified k-fold model selection by mean macro F1.

    Deterministic under a fixed seed. The best configuration is the highest
    mean; ties keep the earlier grid entry, and the default grid is ordered
    by ascending lambda and ascending k so ties prefer smaller values.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.size == 0 or y.size == 0:
        raise ValidationError("empty data")
    if grid is None:
        grid = default_grid()
    folds = stratified_folds(y, k_folds, seed=seed)
    table = []
    best_idx, best_mean = None, -1.0
    for gi, config in enumerate(grid):
        scores = []
        for f in range(k_folds):
            test_idx = folds[f]
            if test_idx.size == 0:
                continue
            train_idx = np.concatenate([folds[g] for g in range(k_folds) if g != f])
            y_pred = _fit_predict(config, x[train_idx], y[train_idx], x[test_idx])
            scores.append(macro_f1(y[test_idx], y_pred))
        mean = float(np.mean(scores))
        table.append((dict(config), mean, scores))
        if mean > best_mean:
            best_idx, best_mean = gi, mean
    return CVResult(best=dict(grid[best_idx]), best_mean_f1=best_mean, table=table)


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------


def save_model(model: ProbeModel, path) -> None:
    payload = {
        "classes": [int(c) for c in model.classes],
        "lambda": float(model.lam),
        "weights": base64.b64encode(
            model.weights.astype(np.float32).tobytes()
        ).decode("ascii"),
        "bias": [float(v) for v in model.bias],
        "channels": int(model.weights.shape[0]),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(payload, fp, indent=2, sort_keys=True)
        fp.write("\n")


def load_model(path) -> ProbeModel:
    with open(path, encoding="utf-8") as fp:
        d = json.load(fp)
    classes = np.asarray(d["classes"])
    raw = np.frombuffer(base64.b64decode(d["weights"]), dtype=np.float32)
    weights = raw.reshape(d["channels"], classes.size).astype(np.float64)
    return ProbeModel(weights, np.asarray(d["bias"], dtype=np.float64), float(d["lambda"]), classes)

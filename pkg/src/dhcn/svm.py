"""One-vs-rest linear hinge-loss SVMs.

Each class ``k`` minimizes::

    1/2 ||w_k||^2 + C_k sum_p s_pk max(0, 1 - Y_pk (w_k' phi_p + b_k))

where ``s_pk`` is ``c_pos[k]`` for positive examples and 1 otherwise. The
bias is stored as the last weight coordinate (it multiplies a constant 1
appended to every map) and is not regularized. The dual carries the
equality constraint ``sum_p alpha_p Y_p = 0``, so coordinates are updated in
maximal-violating pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import NumericalError, ShapeError, ValidationError


@dataclass
class SvmModel:
    weights: np.ndarray  # (K, d + 1), bias last
    c_k: np.ndarray  # (K,)
    c_pos: np.ndarray  # (K,)

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def width(self):
        return self.weights.shape[1] - 1


@dataclass
class SvmFitInfo:
    dual_history: list = field(default_factory=list)  # per class: dual value after each pass
    passes: list = field(default_factory=list)
    alphas: np.ndarray | None = None  # (K, P)


def _check_labels(labels, n):
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != n:
        raise ShapeError(f"labels have {y.shape[0]} rows, maps have {n}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("labels must be -1 or +1")
    return y


def example_weights(labels, c_k, c_pos):
    """Per-example hinge multipliers ``C_k * s_pk`` as a ``(P, K)`` array."""
    y = np.asarray(labels, dtype=np.float64)
    return np.asarray(c_k, dtype=np.float64)[None, :] * np.where(y > 0, np.asarray(c_pos)[None, :], 1.0)


def balanced_c_pos(labels):
    """Positive-example multiplier ``#neg / #pos`` per class (1 if a side is empty)."""
    y = np.asarray(labels)
    pos = (y > 0).sum(axis=0)
    neg = (y < 0).sum(axis=0)
    return np.where((pos > 0) & (neg > 0), neg / np.maximum(pos, 1), 1.0).astype(np.float64)


def margins(model, maps, labels):
    """``Y_pk * f_k(phi_p)`` for every image and class."""
    return _check_labels(labels, len(maps)) * score(model, maps)


def hinge_objective(model, maps, labels):
    maps = np.asarray(maps, dtype=np.float64)
    y = _check_labels(labels, maps.shape[0])
    if y.shape[1] != model.n_classes:
        raise ShapeError(f"labels have {y.shape[1]} classes, model has {model.n_classes}")
    u = example_weights(y, model.c_k, model.c_pos)
    hinge = np.maximum(0.0, 1.0 - y * score(model, maps))
    return float(0.5 * np.sum(model.weights[:, :-1] ** 2) + np.sum(u * hinge))


def score(model, maps):
    """Raw scores ``w_k' [phi; 1]`` of shape ``(P, K)``."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 2 or maps.shape[1] != model.width:
        raise ShapeError(f"maps have width {maps.shape[-1]}, model expects {model.width}")
    return maps @ model.weights[:, :-1].T + model.weights[:, -1]


def decide(scores):
    """A keyword is assigned when its score is strictly positive."""
    return np.asarray(scores) > 0


def best_bias(f, y, u):
    """Exact minimizer over ``b`` of ``sum_i u_i max(0, 1 - y_i (f_i + b))``.

    The loss is convex and piecewise linear with kinks at ``y_i - f_i``; a
    flat bottom resolves to its midpoint.
    """
    kinks = y - f
    if kinks.size == 0:
        return 0.0
    loss = (u[None, :] * np.maximum(0.0, 1.0 - y[None, :] * (f[None, :] + kinks[:, None]))).sum(axis=1)
    low = loss.min()
    best = kinks[loss <= low + 1e-12 * (1.0 + abs(low))]
    return float(0.5 * (best.min() + best.max()))


@njit(cache=True)
def _smo_passes(gram, y, upper, alpha, grad, epochs, tol, history):
    n = y.size
    passes = 0
    for _ in range(epochs):
        passes += 1
        max_change = 0.0
        converged = False
        for _ in range(n):
            # i: most violating index in the "up" set
            i = -1
            vi = -np.inf
            vmin = np.inf
            for t in range(n):
                v = -y[t] * grad[t]
                if (y[t] > 0 and alpha[t] < upper[t]) or (y[t] < 0 and alpha[t] > 0):
                    if v > vi:
                        vi = v
                        i = t
                if (y[t] < 0 and alpha[t] < upper[t]) or (y[t] > 0 and alpha[t] > 0):
                    if v < vmin:
                        vmin = v
            if i < 0 or vmin == np.inf or vi - vmin <= 1e-12 * max(1.0, abs(vi)):
                converged = True
                break
            # j: partner with the largest second-order gain
            j = -1
            best = -np.inf
            for t in range(n):
                if (y[t] < 0 and alpha[t] < upper[t]) or (y[t] > 0 and alpha[t] > 0):
                    v = -y[t] * grad[t]
                    if v < vi:
                        curv = max(gram[i, i] + gram[t, t] - 2.0 * gram[t, i], 1e-12)
                        gain = (vi - v) * (vi - v) / curv
                        if gain > best:
                            best = gain
                            j = t
            vj = -y[j] * grad[j]
            curv = max(gram[i, i] + gram[j, j] - 2.0 * gram[i, j], 1e-12)
            room_i = upper[i] - alpha[i] if y[i] > 0 else alpha[i]
            room_j = alpha[j] if y[j] > 0 else upper[j] - alpha[j]
            step = min((vi - vj) / curv, room_i, room_j)
            if step <= 0.0:
                converged = True
                break
            alpha[i] += y[i] * step
            alpha[j] -= y[j] * step
            for t in range(n):
                grad[t] += y[t] * step * (gram[t, i] - gram[t, j])
            max_change = max(max_change, step)
        dual = 0.0
        for t in range(n):
            # dual = sum(alpha) - 1/2 alpha'Q alpha = sum(alpha) - 1/2 alpha'(grad + 1)
            dual += alpha[t] - 0.5 * alpha[t] * (grad[t] + 1.0)
        history[passes - 1] = dual
        if converged or max_change < tol:
            break
    return passes


def _smo(gram, y, upper, epochs, tol, alpha=None):
    """Pairwise dual coordinate descent for one binary problem.

    Each step takes the most violating coordinate ``i`` and pairs it with
    the coordinate ``j`` of largest second-order gain; a pass is ``P`` such
    steps. Returns ``(alpha, dual value after each pass, passes)``.
    """
    n = y.size
    alpha = np.zeros(n) if alpha is None else np.clip(alpha, 0.0, upper)
    # a warm start must stay on the equality constraint
    if alpha.any() and abs(np.dot(alpha, y)) > 1e-12 * max(1.0, alpha.sum()):
        alpha = np.zeros(n)
    grad = (gram * np.outer(y, y)) @ alpha - 1.0
    history = np.zeros(max(epochs, 1))
    passes = _smo_passes(np.ascontiguousarray(gram), np.ascontiguousarray(y, dtype=np.float64),
                         np.ascontiguousarray(upper, dtype=np.float64), alpha, grad, epochs, tol, history)
    return alpha, [float(h) for h in history[:passes]], passes


def train_svms(maps, labels, c_k=1.0, epochs=500, tol=1e-10, c_pos=None, warm_alphas=None):
    """Fit one binary hinge-loss SVM per label column.

    Parameters
    ----------
    maps : ndarray, shape (P, d)
    labels : ndarray, shape (P, K) with entries in {-1, +1}
    c_k : float or sequence of K floats
    epochs : int
        Maximum number of passes; a pass is ``P`` pairwise updates.
    tol : float
        Stop once the largest dual-variable change within a pass is below it.
    c_pos : sequence of K floats, optional
        Positive-example multiplier (1 when omitted).
    warm_alphas : ndarray (K, P), optional
        Starting dual variables, e.g. from a previous fit on nearby maps.

    Returns
    -------
    (SvmModel, SvmFitInfo)
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 2:
        raise ShapeError(f"maps must be 2-d, got shape {maps.shape}")
    if not np.all(np.isfinite(maps)):
        raise NumericalError("SVM features contain non-finite values")
    n = maps.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 training images")
    y = _check_labels(labels, n)
    k = y.shape[1]
    c_k = np.broadcast_to(np.asarray(c_k, dtype=np.float64), (k,)).copy()
    c_pos = np.ones(k) if c_pos is None else np.broadcast_to(np.asarray(c_pos, dtype=np.float64), (k,)).copy()
    upper = example_weights(y, c_k, c_pos)
    with np.errstate(over="ignore", invalid="ignore"):
        gram = maps @ maps.T
    if not np.all(np.isfinite(gram)):
        raise NumericalError("SVM Gram matrix overflowed")
    weights = np.zeros((k, maps.shape[1] + 1))
    info = SvmFitInfo(alphas=np.zeros((k, n)))
    for c in range(k):
        start = None if warm_alphas is None else warm_alphas[c].copy()
        alpha, history, passes = _smo(gram, y[:, c], upper[:, c], epochs, tol, start)
        w = maps.T @ (alpha * y[:, c])
        weights[c, :-1] = w
        weights[c, -1] = best_bias(maps @ w, y[:, c], upper[:, c])
        info.dual_history.append(history)
        info.passes.append(passes)
        info.alphas[c] = alpha
    return SvmModel(weights, c_k, c_pos), info


def dual_objective(alpha, maps, labels):
    """Dual value ``sum(alpha) - 1/2 ||sum_p alpha_p y_p phi_p||^2`` for one class."""
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(maps, dtype=np.float64).T @ (alpha * y)
    return float(alpha.sum() - 0.5 * w @ w)

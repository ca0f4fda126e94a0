"""Loss-perturbed L2-regularized linear classifiers trained by Newton's method.

The objective for one binary model with labels ``y_i`` in {-1, +1} is::

    sum_i s_i * loss(<w, z_i>, y_i) + (lam / 2) |w|^2 + <b, w>

where ``s_i`` are sample weights. ``loss`` is the logistic loss by default;
``"ridge"`` selects the squared loss ``0.5 (y - <w, z>)^2``, whose Newton
removal step is exact. Multiclass problems train one-vs-rest models, each
with its own perturbation vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

from .errors import ConvergenceError, InputError

logger = logging.getLogger(__name__)

LOSSES = ("logistic", "ridge")


@dataclass(frozen=True)
class TrainConfig:
    max_iters: int = 100
    grad_tol: float = 1e-8
    perturb_std: float = 1.0
    seed: int = 0
    delta: float = 1e-3
    loss: str = "logistic"

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise InputError("grad_tol must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be positive")
        if self.perturb_std < 0:
            raise InputError("perturb_std must be nonnegative")
        if not 0 < self.delta < 1:
            raise InputError("delta must lie in (0, 1)")
        if self.loss not in LOSSES:
            raise InputError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Classifier rows ``w_clf`` (one per binary problem) and their perturbations.

    ``classes`` lists the class labels; a single row means a binary model that
    scores ``classes[1]`` positive. ``hessian_inv`` optionally caches the
    inverse of the full-data Hessian at ``w_clf`` (one matrix per row) so a
    removal only needs a low-rank correction.
    """

    w_clf: np.ndarray
    lam: float
    b_perturb: np.ndarray
    classes: tuple = (0, 1)
    loss: str = "logistic"
    perturb_std: float = 1.0
    delta: float = 1e-3
    feature_map_id: str = ""
    hessian_inv: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        w = np.atleast_2d(np.array(self.w_clf, dtype=np.float64))
        b = np.atleast_2d(np.array(self.b_perturb, dtype=np.float64))
        if w.shape != b.shape:
            raise InputError(f"w_clf {w.shape} and b_perturb {b.shape} differ in shape")
        if not self.lam > 0:
            raise InputError("regularization strength lambda must be > 0")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("model parameters must be finite")
        if self.loss not in LOSSES:
            raise InputError(f"unknown loss {self.loss!r}")
        expected_rows = 1 if len(self.classes) <= 2 else len(self.classes)
        if w.shape[0] != expected_rows:
            raise InputError(f"{len(self.classes)} classes need {expected_rows} weight rows")
        object.__setattr__(self, "w_clf", w)
        object.__setattr__(self, "b_perturb", b)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if self.hessian_inv is not None:
            hinv = np.asarray(self.hessian_inv, dtype=np.float64)
            if hinv.shape != (w.shape[0], w.shape[1], w.shape[1]):
                raise InputError(f"hessian_inv has shape {hinv.shape}, expected "
                                 f"{(w.shape[0], w.shape[1], w.shape[1])}")
            object.__setattr__(self, "hessian_inv", hinv)

    @property
    def dim(self):
        return self.w_clf.shape[1]

    def decision_function(self, Z):
        return np.asarray(Z, dtype=np.float64) @ self.w_clf.T

    def predict(self, Z):
        scores = self.decision_function(Z)
        if scores.shape[1] == 1:
            return np.where(scores[:, 0] > 0, self.classes[1], self.classes[0])
        return np.asarray(self.classes)[np.argmax(scores, axis=1)]

    def sample_losses(self, Z, labels):
        """Unweighted per-sample data loss, summed over one-vs-rest rows."""
        out = np.zeros(np.asarray(Z).shape[0])
        for k in range(self.w_clf.shape[0]):
            y = signed_labels(labels, self.classes, k)
            out += _pointwise_loss(self.loss, np.asarray(Z) @ self.w_clf[k], y)
        return out


def signed_labels(labels, classes, row):
    """Map class labels to {-1, +1} for one-vs-rest row ``row``."""
    labels = np.asarray(labels)
    unknown = np.setdiff1d(np.unique(labels), classes)
    if unknown.size:
        raise InputError(f"labels {unknown.tolist()} are outside the class set {list(classes)}")
    positive = classes[1] if len(classes) <= 2 else classes[row]
    return np.where(labels == positive, 1.0, -1.0)


def _pointwise_loss(loss, margin_in, y):
    if loss == "logistic":
        return -log_expit(y * margin_in)
    return 0.5 * (y - margin_in) ** 2


def _pointwise_grad(loss, scores, y):
    # derivative of the pointwise loss w.r.t. the score <w, z>
    if loss == "logistic":
        return -y * expit(-y * scores)
    return scores - y


def _pointwise_curv(loss, scores):
    if loss == "logistic":
        s = expit(scores)
        return s * (1.0 - s)
    return np.ones_like(scores)


def _check(w, Z, y, weights):
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    Z = np.asarray(Z, dtype=np.float64).reshape(-1, w.size)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    s = np.ones(Z.shape[0]) if weights is None else np.asarray(
        getattr(weights, "w", weights), dtype=np.float64).reshape(-1)
    if y.shape[0] != Z.shape[0] or s.shape[0] != Z.shape[0]:
        raise InputError(f"shape mismatch: Z {Z.shape}, y {y.shape}, weights {s.shape}")
    if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
        raise InputError("binary labels must be -1 or +1")
    return w, Z, y, s


def sample_perturbation(dim, std, seed):
    if dim < 1:
        raise InputError("perturbation dimension must be >= 1")
    if std < 0:
        raise InputError("std must be nonnegative")
    if std == 0:
        return np.zeros(dim)
    return std * np.random.default_rng(seed).standard_normal(dim)


def perturbed_loss(w, Z, y, weights, b, lam, loss="logistic"):
    """Weighted data loss plus ``lam/2 |w|^2 + <b, w>`` for one binary row."""
    w, Z, y, s = _check(w, Z, y, weights)
    data = float(np.dot(s, _pointwise_loss(loss, Z @ w, y))) if y.size else 0.0
    return data + 0.5 * lam * float(w @ w) + float(np.dot(b, w))


def loss_gradient(w, Z, y, weights, b, lam, loss="logistic"):
    w, Z, y, s = _check(w, Z, y, weights)
    g = Z.T @ (s * _pointwise_grad(loss, Z @ w, y))
    return g + lam * w + np.asarray(b, dtype=np.float64)


def loss_hessian(w, Z, y, weights, lam, loss="logistic"):
    """Hessian of the weighted objective; the perturbation never enters."""
    w, Z, y, s = _check(w, Z, y, weights)
    c = s * _pointwise_curv(loss, Z @ w)
    H = (Z * c[:, None]).T @ Z
    H[np.diag_indices_from(H)] += lam
    return H


def per_sample_gradients(w, Z, y, loss="logistic"):
    """Rows are the unweighted data-loss gradients of individual samples."""
    w, Z, y, _ = _check(w, Z, y, None)
    return _pointwise_grad(loss, Z @ w, y)[:, None] * Z


def minimize_perturbed(Z, y, weights, b, lam, config, w0=None):
    """Damped Newton iterations from ``w0`` (zeros by default) to ``grad_tol``."""
    w = np.zeros(np.asarray(Z).shape[1]) if w0 is None else np.array(w0, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    loss = config.loss
    f = perturbed_loss(w, Z, y, weights, b, lam, loss)
    g = loss_gradient(w, Z, y, weights, b, lam, loss)
    gnorm = float(np.linalg.norm(g))
    for it in range(config.max_iters):
        if gnorm <= config.grad_tol:
            break
        H = loss_hessian(w, Z, y, weights, lam, loss)
        step = linalg.solve(H, g, assume_a="pos")
        decrease = float(g @ step)
        roundoff = decrease <= 1e-10 * max(1.0, abs(f))
        t = 1.0
        while True:
            w_new = w - t * step
            f_new = perturbed_loss(w_new, Z, y, weights, b, lam, loss)
            g_new = loss_gradient(w_new, Z, y, weights, b, lam, loss)
            gn = float(np.linalg.norm(g_new))
            # once f only changes at roundoff level, a smaller gradient is progress
            if (f_new <= f - 1e-4 * t * decrease or (roundoff and gn < gnorm)
                    or t < 1e-10):
                break
            t *= 0.5
        if t < 1e-10 and gn >= gnorm:
            break
        w, f, g, gnorm = w_new, f_new, g_new, gn
    if gnorm > config.grad_tol:
        raise ConvergenceError("Newton solver did not reach grad_tol", gnorm)
    logger.debug("converged: |grad| = %.3e", gnorm)
    return w, gnorm


def default_lambda(n):
    return 1e-4 * n


def train_classifier(Z, labels, weights, config, lam=None, classes=None,
                     feature_map_id="", b=None, cache_hessian=True):
    """Fit one binary (or one-vs-rest) perturbed model to tolerance.

    ``b`` overrides the sampled perturbation; retraining reuses the original.
    With ``cache_hessian`` the inverse Hessian at the optimum is stored on the
    model for later removals.
    """
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    n, d = Z.shape
    if n < 1:
        raise InputError("training needs at least one sample")
    lam = default_lambda(n) if lam is None else float(lam)
    if not lam > 0:
        raise InputError("lambda must be > 0")
    if classes is None:
        classes = tuple(int(c) for c in np.unique(labels))
        if len(classes) == 1:
            classes = (classes[0], classes[0] + 1)
    rows = 1 if len(classes) <= 2 else len(classes)
    if b is None:
        b = sample_perturbation(rows * d, config.perturb_std, config.seed).reshape(rows, d)
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    W = np.zeros((rows, d))
    Hinv = np.zeros((rows, d, d)) if cache_hessian else None
    for k in range(rows):
        y = signed_labels(labels, classes, k)
        W[k], _ = minimize_perturbed(Z, y, weights, b[k], lam, config)
        if cache_hessian:
            H = loss_hessian(W[k], Z, y, weights, lam, config.loss)
            Hinv[k] = linalg.cho_solve(linalg.cho_factor(H), np.eye(d))
    return LinearModel(W, lam, b, classes, config.loss, config.perturb_std, config.delta,
                       feature_map_id, hessian_inv=Hinv)


def model_gradient_norm(model, Z, labels, weights):
    """Norm of the stacked perturbed-objective gradient over all rows."""
    total = 0.0
    for k in range(model.w_clf.shape[0]):
        y = signed_labels(labels, model.classes, k)
        g = loss_gradient(model.w_clf[k], Z, y, weights, model.b_perturb[k], model.lam,
                          model.loss)
        total += float(g @ g)
    return float(np.sqrt(total))


def without_cache(model):
    return replace(model, hessian_inv=None)

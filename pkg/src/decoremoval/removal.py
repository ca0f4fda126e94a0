"""Newton-step data removal, the exact-retrain oracle, and model files.

Removing a set R from a model trained to stationarity on D uses one Newton
step on the retained objective::

    delta = sum_{i in R} s_i * grad loss_i(w*)
    H     = Hessian of the retained objective at w*
    w_minus = w* + H^{-1} delta

The perturbation vector ``b`` is only ever read by the oracle and by the
diagnostics; the update itself depends on it solely through ``w*``.
"""
from __future__ import annotations

import base64
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import InputError, ModelFileError, NumericalError, VersionMismatchError
from .rff import RffMap
from .trainer import (LinearModel, TrainConfig, loss_hessian, model_gradient_norm,
                      per_sample_gradients, signed_labels, train_classifier,
                      _pointwise_curv)

SCHEMA_VERSION = 1
EPSILON_NOTE = "framework-derived, not paper-specified"


@dataclass(frozen=True, eq=False)
class FeaturizedSet:
    """Transformed training rows with their labels and sample ids."""

    Z: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.asarray(self.ids, dtype=np.int64)
        if Z.ndim != 2 or labels.shape != (Z.shape[0],) or ids.shape != (Z.shape[0],):
            raise InputError("Z, labels and ids must agree in row count")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self):
        return self.Z.shape[0]

    def rows(self, keep):
        return FeaturizedSet(self.Z[keep], self.labels[keep], self.ids[keep])

    def partition(self, remove_ids):
        """Return (removed_rows, kept_rows) index arrays; validates ``remove_ids``."""
        req = np.asarray(remove_ids, dtype=np.int64).reshape(-1)
        if req.size == 0:
            raise InputError("removal request must name at least one sample")
        if np.unique(req).size != req.size:
            raise InputError("removal request contains duplicate ids")
        order = np.argsort(self.ids, kind="stable")
        sorted_ids = self.ids[order]
        pos = np.minimum(np.searchsorted(sorted_ids, req), self.n - 1)
        found = sorted_ids[pos] == req
        if not np.all(found):
            raise InputError(f"unknown sample ids: {req[~found].tolist()}")
        removed = order[pos]
        mask = np.ones(self.n, dtype=bool)
        mask[removed] = False
        return removed, np.flatnonzero(mask)


@dataclass(frozen=True)
class RemovalReport:
    removed_count: int
    parameter_delta_norm: float
    gradient_residual: float
    epsilon_estimate: float | None
    wall_time_seconds: float
    epsilon_note: str = EPSILON_NOTE

    def to_dict(self):
        d = asdict(self)
        if d["epsilon_estimate"] is not None and not math.isfinite(d["epsilon_estimate"]):
            d["epsilon_estimate"] = None
        return d


def _weight_array(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(getattr(weights, "w", weights), dtype=np.float64)
    if w.shape != (n,):
        raise InputError(f"expected {n} sample weights, got shape {w.shape}")
    return w


def newton_remove(model, train, weights, remove_ids):
    """Apply the batch Newton removal for ``remove_ids``.

    ``train`` is the :class:`FeaturizedSet` the model was fit on and
    ``weights`` its sample weights. When ``model.hessian_inv`` is cached the
    retained-data Hessian inverse is obtained by a Woodbury correction of
    rank ``len(remove_ids)``; otherwise the retained Hessian is assembled
    and factorized directly.

    Returns ``(updated_model, report)``. The updated model carries no
    Hessian cache.
    """
    t0 = time.perf_counter()
    removed, kept = train.partition(remove_ids)
    s = _weight_array(weights, train.n)
    Z_r, s_r = train.Z[removed], s[removed]
    use_cache = model.hessian_inv is not None and removed.size < model.dim
    W_new = np.empty_like(model.w_clf)
    for k in range(model.w_clf.shape[0]):
        w_star = model.w_clf[k]
        y_r = signed_labels(train.labels[removed], model.classes, k)
        delta = s_r @ per_sample_gradients(w_star, Z_r, y_r, model.loss)
        try:
            if use_cache:
                W_new[k] = w_star + _woodbury_downdate_solve(
                    model.hessian_inv[k], Z_r, s_r * _pointwise_curv(model.loss, Z_r @ w_star),
                    delta)
            else:
                y_k = signed_labels(train.labels[kept], model.classes, k)
                H = loss_hessian(w_star, train.Z[kept], y_k, s[kept], model.lam, model.loss)
                W_new[k] = w_star + linalg.cho_solve(linalg.cho_factor(H), delta)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"retained Hessian is not positive definite: {exc}") from exc
    elapsed = time.perf_counter() - t0

    updated = replace(model, w_clf=W_new, hessian_inv=None)
    s_kept = s.copy()
    s_kept[removed] = 0.0
    residual = model_gradient_norm(updated, train.Z, train.labels, s_kept)
    cert = check_certified(residual, model.perturb_std, model.delta, math.inf)
    report = RemovalReport(
        removed_count=int(removed.size),
        parameter_delta_norm=float(np.linalg.norm(W_new - model.w_clf)),
        gradient_residual=residual,
        epsilon_estimate=cert["epsilon_estimate"],
        wall_time_seconds=elapsed,
    )
    return updated, report


def _woodbury_downdate_solve(H_inv, Z_r, curv, rhs):
    # (H - V V^T)^{-1} rhs with V = Z_r^T diag(sqrt(curv)); the capacitance
    # matrix I - V^T H^{-1} V is SPD whenever H - V V^T is.
    V = Z_r.T * np.sqrt(curv)
    A = H_inv @ V
    cap = np.eye(V.shape[1]) - V.T @ A
    base = H_inv @ rhs
    return base + A @ linalg.cho_solve(linalg.cho_factor(cap), V.T @ base)


def remove_from_training_set(train, weights, remove_ids):
    """Retained (FeaturizedSet, raw weight array) after dropping ``remove_ids``."""
    _, kept = train.partition(remove_ids)
    return train.rows(kept), _weight_array(weights, train.n)[kept]


def retrain_oracle(train_minus, weights, b, lam, config, classes):
    """Exact minimizer on the retained data with the original perturbation ``b``."""
    if train_minus.n == 0:
        # objective is lam/2 |w|^2 + <b, w>
        b = np.atleast_2d(np.asarray(b, dtype=np.float64))
        return LinearModel(-b / lam, lam, b, classes, config.loss, config.perturb_std,
                           config.delta)
    return train_classifier(train_minus.Z, train_minus.labels,
                            _weight_array(weights, train_minus.n), config, lam=lam,
                            classes=classes, b=b, cache_hessian=False)


def gradient_residual(model, train_minus, weights):
    """``|grad L_p(w; D')|`` for the perturbed objective on the retained rows."""
    return model_gradient_norm(model, train_minus.Z, train_minus.labels,
                               _weight_array(weights, train_minus.n))


def check_certified(residual, std, delta, epsilon_budget):
    """Gaussian-mechanism style epsilon for a gradient residual.

    ``epsilon = residual * sqrt(2 ln(1.5 / delta)) / std``.
    """
    if residual < 0:
        raise InputError("residual must be nonnegative")
    if not 0 < delta < 1:
        raise InputError("delta must lie in (0, 1)")
    if std <= 0:
        eps = 0.0 if residual == 0 else math.inf
    else:
        eps = residual * math.sqrt(2.0 * math.log(1.5 / delta)) / std
    return {"certified": bool(eps <= epsilon_budget), "epsilon_estimate": eps}


# ---------------------------------------------------------------- model files

def encode_array(a):
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"dtype": "<f8", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def encode_int_array(a):
    a = np.ascontiguousarray(np.asarray(a, dtype="<i8"))
    return {"dtype": "<i8", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj, name="array"):
    try:
        dtype = np.dtype(obj["dtype"])
        shape = tuple(int(s) for s in obj["shape"])
        raw = base64.b64decode(obj["data"], validate=True)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed array field {name!r}: {exc}") from exc
    if dtype.str not in ("<f8", "<i8"):
        raise ModelFileError(f"unsupported dtype {dtype.str!r} in {name!r}")
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise ModelFileError(f"array {name!r} holds {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


@dataclass
class ModelBundle:
    model: LinearModel
    rff_map: RffMap
    weights: np.ndarray  # per-sample training weights aligned with train_ids
    train_ids: np.ndarray
    metadata: dict = field(default_factory=dict)


def bundle_to_json(bundle):
    m = bundle.model
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "decoremoval-model",
        "model": {
            "w_clf": encode_array(m.w_clf),
            "lambda": m.lam,
            "b_perturb": encode_array(m.b_perturb),
            "classes": list(m.classes),
            "loss": m.loss,
            "perturb_std": m.perturb_std,
            "delta": m.delta,
            "feature_map_id": m.feature_map_id,
            "hessian_inv": None if m.hessian_inv is None else encode_array(m.hessian_inv),
        },
        "rff_map": {
            "omega": encode_array(bundle.rff_map.omega),
            "phi": encode_array(bundle.rff_map.phi),
            "normalization": bundle.rff_map.normalization,
            "bandwidth": bundle.rff_map.bandwidth,
        },
        "weights": encode_array(getattr(bundle.weights, "w", bundle.weights)),
        "train_ids": encode_int_array(bundle.train_ids),
        "metadata": bundle.metadata,
    }
    # floats round-trip exactly through repr-based JSON encoding
    return json.dumps(doc, indent=1, sort_keys=True)


def save_model(path, model, rff_map, weights, train_ids, metadata=None):
    bundle = ModelBundle(model, rff_map, np.asarray(getattr(weights, "w", weights)),
                         np.asarray(train_ids), dict(metadata or {}))
    Path(path).write_text(bundle_to_json(bundle) + "\n", encoding="utf-8")


def bundle_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"model file is not valid JSON ({exc.msg})", offset=exc.pos) from exc
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ModelFileError("model file lacks schema_version")
    version = doc["schema_version"]
    if version != SCHEMA_VERSION:
        raise VersionMismatchError(
            f"model file schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    try:
        md, rm = doc["model"], doc["rff_map"]
        hessian_inv = md.get("hessian_inv")
        model = LinearModel(
            decode_array(md["w_clf"], "w_clf"), md["lambda"],
            decode_array(md["b_perturb"], "b_perturb"), tuple(md["classes"]), md["loss"],
            md["perturb_std"], md["delta"], md["feature_map_id"],
            hessian_inv=None if hessian_inv is None else decode_array(hessian_inv, "hessian_inv"))
        rff_map = RffMap(decode_array(rm["omega"], "omega"), decode_array(rm["phi"], "phi"),
                         rm["normalization"], rm["bandwidth"])
        weights = decode_array(doc["weights"], "weights")
        train_ids = decode_array(doc["train_ids"], "train_ids")
        metadata = doc.get("metadata", {})
        if weights.shape != train_ids.shape:
            raise ModelFileError("weights and train_ids differ in length")
    except KeyError as exc:
        raise ModelFileError(f"model file is missing field {exc.args[0]!r}") from exc
    return ModelBundle(model, rff_map, weights, train_ids, metadata)


def load_model(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise InputError(f"model file not found: {path}") from exc
    return bundle_from_json(text)


def retrain_config_for(model, grad_tol=1e-8, max_iters=100):
    return TrainConfig(max_iters=max_iters, grad_tol=grad_tol, perturb_std=model.perturb_std,
                       delta=model.delta, loss=model.loss)

"""End-to-end experiment: decorrelate, train, remove at several scales, evaluate.

Configuration is a flat ``key = value`` text file (``#`` starts a comment).
Every key has a default; see :class:`ExperimentConfig`.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import OodSpec, SplitSpec, make_ood_split, split_dataset
from .decorrel import (DecorrelConfig, SampleWeights, ColumnFeatureMaps, optimize_sample_weights,
                       sample_column_maps, total_dependence)
from .errors import InputError, NumericalError
from .harness import (find_mnist, gen_correlated, load_csv_dataset, load_idx_images,
                      mia_threshold_attack, weighted_f1)
from .removal import (FeaturizedSet, check_certified, decode_array, encode_array,
                      encode_int_array, gradient_residual, newton_remove,
                      remove_from_training_set, retrain_oracle, retrain_config_for, save_model)
from .rff import RffMap, rff_transform, sample_rff_map
from .trainer import TrainConfig, default_lambda, model_gradient_norm, train_classifier

logger = logging.getLogger(__name__)

WEIGHTS_SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"          # synthetic | csv:<path> | mnist:<dir>
    header: bool = False
    label_column: int = 0
    synthetic_n: int = 2572
    synthetic_d: int = 20
    synthetic_rho: float = 0.5
    data_seed: int = 0
    mnist_classes: tuple = (3, 8)
    mnist_samples: int = 2572
    split_train: float = 7 / 9
    split_val: float = 1 / 9
    split_test: float = 1 / 9
    split_seed: int = 0
    ood_source: int | None = None
    ood_target: int | None = None
    ood_fraction: float = 0.1
    ood_seed: int = 0
    num_features: int = 64
    bandwidth: float = 1.0
    rff_seed: int = 0
    decorrelate: bool = True
    num_functions: int = 5
    num_steps: int = 100
    step_size: float = 0.1
    weight_seed: int = 0
    lam: float | None = None
    lambda_scale: float | None = None   # lam = lambda_scale * n_train
    std: float = 1.0
    delta: float = 1e-3
    perturb_seed: int = 0
    loss: str = "logistic"
    grad_tol: float = 1e-8
    max_iters: int = 100
    removal_scales: tuple = (10,)
    removal_seed: int = 0
    mia: bool = True
    timing_repeats: int = 1

    @classmethod
    def from_text(cls, text):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[experiment]\n" + text)
        except configparser.Error as exc:
            raise InputError(f"malformed config: {exc}") from exc
        return cls.from_mapping(dict(parser["experiment"]))

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))

    @classmethod
    def from_mapping(cls, raw):
        kwargs = {}
        fields = {f.name: f for f in dataclasses.fields(cls)}
        aliases = {"lambda": "lam"}
        for key, value in raw.items():
            name = aliases.get(key, key)
            if name not in fields:
                raise InputError(f"unknown config key {key!r}")
            kwargs[name] = _coerce(name, value, cls.__dataclass_fields__[name].default)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        if self.lam is not None and not self.lam > 0:
            raise InputError("lambda must be > 0")
        if self.lambda_scale is not None and not self.lambda_scale > 0:
            raise InputError("lambda_scale must be > 0")
        if any(k < 1 for k in self.removal_scales):
            raise InputError("removal scales must be positive")
        if self.timing_repeats < 1:
            raise InputError("timing_repeats must be >= 1")
        SplitSpec(self.split_train, self.split_val, self.split_test, self.split_seed)
        TrainConfig(self.max_iters, self.grad_tol, self.std, self.perturb_seed, self.delta,
                    self.loss)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    def seeds(self):
        return {"data_seed": self.data_seed, "split_seed": self.split_seed,
                "ood_seed": self.ood_seed, "rff_seed": self.rff_seed,
                "weight_seed": self.weight_seed, "perturb_seed": self.perturb_seed,
                "removal_seed": self.removal_seed}

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _coerce(name, value, default):
    value = value.strip()
    if name in ("removal_scales", "mnist_classes"):
        try:
            return tuple(int(v) for v in value.replace(",", " ").split())
        except ValueError:
            raise InputError(f"{name} must be a list of integers, got {value!r}") from None
    if name in ("lam", "lambda_scale", "ood_source", "ood_target"):
        if value.lower() in ("", "none"):
            return None
        return int(value) if name.startswith("ood") else float(value)
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return value.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise InputError(f"bad value for {name}: {value!r}") from None
    return value


def load_dataset(cfg):
    kind, _, arg = cfg.dataset.partition(":")
    if kind == "synthetic":
        return gen_correlated(cfg.synthetic_n, cfg.synthetic_d, cfg.synthetic_rho, cfg.data_seed)
    if kind == "csv":
        return load_csv_dataset(arg, cfg.header, cfg.label_column)
    if kind == "mnist":
        found = find_mnist(arg)
        if found is None:
            raise InputError(f"no MNIST training IDX files in {arg}")
        ds = load_idx_images(*found, classes=cfg.mnist_classes)
        if cfg.mnist_samples < ds.n:
            rows = np.random.default_rng(cfg.data_seed).choice(ds.n, cfg.mnist_samples,
                                                              replace=False)
            ds = ds.subset(np.sort(rows))
        return ds
    raise InputError(f"unknown dataset kind {cfg.dataset!r}")


def featurize(dataset, rff_map):
    return FeaturizedSet(rff_transform(rff_map, dataset.features), dataset.labels, dataset.ids)


# ------------------------------------------------------------- weight files

def weights_document(rff_map, maps, weights, train_ids, fingerprint, settings, objective):
    return {
        "schema_version": WEIGHTS_SCHEMA_VERSION,
        "kind": "decoremoval-weights",
        "rff_map": {"omega": encode_array(rff_map.omega), "phi": encode_array(rff_map.phi),
                    "normalization": rff_map.normalization, "bandwidth": rff_map.bandwidth},
        "column_maps": None if maps is None else {
            "frequencies": encode_array(maps.frequencies), "phases": encode_array(maps.phases)},
        "weights": encode_array(weights.w),
        "train_ids": encode_int_array(train_ids),
        "dataset_fingerprint": fingerprint,
        "settings": settings,
        "objective": objective,
    }


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_weights_file(path):
    path = Path(path)
    if not path.exists():
        raise InputError(f"weights file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"weights file is not valid JSON at offset {exc.pos}") from exc
    if doc.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
        raise InputError(f"unsupported weights schema {doc.get('schema_version')!r}")
    rm = doc["rff_map"]
    rff_map = RffMap(decode_array(rm["omega"]), decode_array(rm["phi"]), rm["normalization"],
                     rm["bandwidth"])
    maps = None
    if doc.get("column_maps"):
        maps = ColumnFeatureMaps(decode_array(doc["column_maps"]["frequencies"]),
                                 decode_array(doc["column_maps"]["phases"]))
    return {"rff_map": rff_map, "maps": maps, "weights": SampleWeights(decode_array(doc["weights"])),
            "train_ids": decode_array(doc["train_ids"]),
            "dataset_fingerprint": doc["dataset_fingerprint"], "settings": doc["settings"]}


def write_trace(path, trace):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "objective", "step_size"])
        for step, obj, eta in trace:
            writer.writerow([step, repr(float(obj)), repr(float(eta))])


def run_decorrelation(train, cfg):
    rff_map = sample_rff_map(train.dim, cfg.num_features, cfg.rff_seed, bandwidth=cfg.bandwidth)
    Z = rff_transform(rff_map, train.features)
    if not cfg.decorrelate or cfg.num_features < 2:
        return rff_map, None, SampleWeights.uniform(train.n), {}
    maps = sample_column_maps(cfg.num_features, cfg.num_functions, cfg.weight_seed)
    weights = optimize_sample_weights(
        Z, maps, DecorrelConfig(cfg.num_steps, cfg.step_size, cfg.weight_seed))
    objective = {"uniform": weights.trace[0][1],
                 "final": total_dependence(Z, maps, weights).total}
    return rff_map, maps, weights, objective


def resolve_lambda(cfg, n):
    if cfg.lam is not None:
        return cfg.lam
    if cfg.lambda_scale is not None:
        return cfg.lambda_scale * n
    return default_lambda(n)


def _best_time(fn, repeats):
    best, result = math.inf, None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return result, best


def _eval_block(model, Z, labels, ood=None):
    plain = weighted_f1(model.predict(Z), labels).to_dict()
    out = {"plain": plain}
    if ood is not None:
        out["ood"] = weighted_f1(model.predict(Z), ood).to_dict()
    return out


def run_experiment(cfg, outdir):
    """Run the full pipeline and write every artifact into ``outdir``.

    Returns the in-memory summary (also written as ``metrics.json``).
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    manifest = []

    def record(name, stage, timing=False):
        manifest.append({"file": name, "stage": stage, "contains_timing": timing})

    stage = "load"
    try:
        data = load_dataset(cfg)
        train, _val, test = split_dataset(
            data, SplitSpec(cfg.split_train, cfg.split_val, cfg.split_test, cfg.split_seed))
        ood_labels = None
        if cfg.ood_source is not None and cfg.ood_target is not None:
            ood_labels = make_ood_split(
                test, OodSpec(cfg.ood_source, cfg.ood_target, cfg.ood_fraction, cfg.ood_seed)).labels

        stage = "decorrelate"
        rff_map, maps, weights, objective = run_decorrelation(train, cfg)
        seeds = cfg.seeds()
        settings = {"seeds": seeds, "rff_seed": cfg.rff_seed, "weight_seed": cfg.weight_seed,
                    "num_features": cfg.num_features, "bandwidth": cfg.bandwidth,
                    "num_steps": cfg.num_steps, "step_size": cfg.step_size,
                    "num_functions": cfg.num_functions}
        write_json(outdir / "weights.json", weights_document(
            rff_map, maps, weights, train.ids, train.fingerprint(), settings, objective))
        record("weights.json", stage)
        if weights.trace:
            write_trace(outdir / "trace.csv", weights.trace)
            record("trace.csv", stage)

        stage = "train"
        fs = featurize(train, rff_map)
        Zt = rff_transform(rff_map, test.features)
        lam = resolve_lambda(cfg, train.n)
        tcfg = TrainConfig(cfg.max_iters, cfg.grad_tol, cfg.std, cfg.perturb_seed, cfg.delta,
                           cfg.loss)
        classes = tuple(int(c) for c in np.unique(np.concatenate([train.labels, test.labels])))
        if len(classes) == 1:
            classes = (classes[0], classes[0] + 1)
        model = train_classifier(fs.Z, fs.labels, weights, tcfg, lam=lam, classes=classes,
                                 feature_map_id=digest[:16])
        meta = {"config_hash": digest, "seeds": seeds,
                "lambda": lam, "std": cfg.std, "delta": cfg.delta,
                "dataset_hash": train.fingerprint()}
        save_model(outdir / "model.json", model, rff_map, weights, train.ids, meta)
        record("model.json", stage)
        train_grad = model_gradient_norm(model, fs.Z, fs.labels, weights)

        stage = "evaluate"
        summary = {"config_hash": digest, "seeds": seeds, "n_train": train.n, "n_test": test.n,
                   "lambda": lam, "train_gradient_norm": train_grad,
                   "decorrelation": objective,
                   "pre_removal": _eval_block(model, Zt, test.labels, ood_labels),
                   "removals": []}
        timing_rows = []

        stage = "remove"
        for k in cfg.removal_scales:
            if k > train.n:
                raise InputError(f"removal scale {k} exceeds training size {train.n}")
            rng = np.random.default_rng([cfg.removal_seed, k])
            rid = np.sort(rng.choice(train.ids, size=k, replace=False))
            (updated, report), t_remove = _best_time(
                lambda: newton_remove(model, fs, weights, rid), cfg.timing_repeats)
            retained, retained_w = remove_from_training_set(fs, weights, rid)
            rcfg = retrain_config_for(model, cfg.grad_tol, cfg.max_iters)
            oracle, t_retrain = _best_time(
                lambda: retrain_oracle(retained, retained_w, model.b_perturb, model.lam, rcfg,
                                       model.classes), cfg.timing_repeats)
            pre_residual = gradient_residual(model, retained, retained_w)
            cert = check_certified(report.gradient_residual, model.perturb_std, model.delta,
                                   math.inf)
            entry = {
                "config_hash": digest,
                "seeds": seeds,
                "scale": k,
                "removed_ids": [int(v) for v in rid],
                "report": report.to_dict(),
                "oracle_distance": float(np.linalg.norm(updated.w_clf - oracle.w_clf)),
                "pre_removal_residual": pre_residual,
                "certified_epsilon": cert["epsilon_estimate"],
                "decoremoval": _eval_block(updated, Zt, test.labels, ood_labels),
                "oracle": _eval_block(oracle, Zt, test.labels, ood_labels),
            }
            if cfg.mia:
                rows = fs.partition(rid)[0]
                entry["mia"] = {
                    name: mia_threshold_attack(m.sample_losses(fs.Z[rows], fs.labels[rows]),
                                               m.sample_losses(Zt, test.labels)).to_dict()
                    for name, m in (("pre_removal", model), ("decoremoval", updated),
                                    ("oracle", oracle))}
            name = f"removal_{k}.json"
            write_json(outdir / name, entry)
            record(name, stage, timing=True)
            save_model(outdir / f"model_removed_{k}.json", updated, rff_map,
                       retained_w, retained.ids, dict(meta, removed_ids=entry["removed_ids"]))
            record(f"model_removed_{k}.json", stage)
            summary["removals"].append(entry)
            timing_rows.append((k, t_remove, t_retrain))

        stage = "evaluate"
        metrics = {key: v for key, v in summary.items() if key != "removals"}
        # wall times live only in the removal reports and timing.csv
        metrics["removals"] = [{key: v for key, v in r.items()
                                if key not in ("report", "removed_ids")}
                               for r in summary["removals"]]
        write_json(outdir / "metrics.json", metrics)
        record("metrics.json", stage)
        with (outdir / "timing.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scale", "removal_seconds", "retrain_seconds", "speedup"])
            for k, tr_, to_ in timing_rows:
                writer.writerow([k, f"{tr_:.6f}", f"{to_:.6f}", f"{to_ / tr_:.2f}"])
        record("timing.csv", stage, timing=True)
    except InputError as exc:
        raise InputError(f"stage {stage!r} failed: {exc}") from exc
    except NumericalError as exc:
        raise NumericalError(f"stage {stage!r} failed: {exc}") from exc

    write_json(outdir / "manifest.json", {"config_hash": digest, "config": cfg.to_dict(),
                                          "files": manifest})
    summary["timing"] = [{"scale": k, "removal_seconds": a, "retrain_seconds": b}
                         for k, a, b in timing_rows]
    return summary

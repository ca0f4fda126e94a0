"""Command-line entry point: ``decoremoval <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import OodSpec, make_ood_split
from .decorrel import (DecorrelConfig, SampleWeights, optimize_sample_weights,
                       sample_column_maps, total_dependence)
from .errors import InputError, NumericalError
from .experiment import (ExperimentConfig, featurize, read_weights_file, run_experiment,
                         weights_document, write_json, write_trace)
from .harness import load_csv_dataset, mia_threshold_attack, weighted_f1
from .removal import (check_certified, load_model, newton_remove, remove_from_training_set,
                      retrain_config_for, retrain_oracle, save_model, FeaturizedSet)
from .rff import rff_transform, sample_rff_map
from .trainer import TrainConfig, model_gradient_norm, train_classifier

EXIT_INPUT = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _load(args):
    return load_csv_dataset(args.data, args.header, args.label_column)


def _data_args(p):
    p.add_argument("--data", required=True, help="CSV file, label column plus features")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--label-column", type=int, default=0)


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value
    return parse


def cmd_decorrelate(args):
    data = _load(args)
    rff_map = sample_rff_map(data.dim, args.num_features, args.rff_seed,
                             bandwidth=args.bandwidth)
    Z = rff_transform(rff_map, data.features)
    maps = sample_column_maps(args.num_features, args.num_functions, args.weight_seed)
    weights = optimize_sample_weights(
        Z, maps, DecorrelConfig(args.num_steps, args.step_size, args.weight_seed))
    objective = {"uniform": weights.trace[0][1] if weights.trace else None,
                 "final": total_dependence(Z, maps, weights).total}
    settings = {"rff_seed": args.rff_seed, "weight_seed": args.weight_seed,
                "num_features": args.num_features, "bandwidth": args.bandwidth,
                "num_steps": args.num_steps, "step_size": args.step_size,
                "num_functions": args.num_functions}
    write_json(args.out, weights_document(rff_map, maps, weights, data.ids, data.fingerprint(),
                                          settings, objective))
    if args.trace:
        write_trace(args.trace, weights.trace)
    print(f"dependence: uniform {objective['uniform']:.6g} -> final {objective['final']:.6g}")
    return 0


def cmd_train(args):
    data = _load(args)
    if args.weights:
        doc = read_weights_file(args.weights)
        if doc["dataset_fingerprint"] != data.fingerprint():
            raise InputError(f"weights file {args.weights} was computed on different data")
        rff_map, weights = doc["rff_map"], doc["weights"]
        seeds = {k: doc["settings"][k] for k in ("rff_seed", "weight_seed")}
    else:
        rff_map = sample_rff_map(data.dim, args.num_features, args.rff_seed,
                                 bandwidth=args.bandwidth)
        weights = SampleWeights.uniform(data.n)
        seeds = {"rff_seed": args.rff_seed}
    fs = featurize(data, rff_map)
    config = TrainConfig(args.max_iters, args.grad_tol, args.std, args.perturb_seed,
                         args.delta, args.loss)
    model = train_classifier(fs.Z, fs.labels, weights, config, lam=args.lam)
    gnorm = model_gradient_norm(model, fs.Z, fs.labels, weights)
    meta = {"seeds": dict(seeds, perturb_seed=args.perturb_seed), "lambda": model.lam,
            "std": args.std, "delta": args.delta, "dataset_hash": data.fingerprint()}
    save_model(args.out, model, rff_map, weights, data.ids, meta)
    print(f"gradient norm at solution: {gnorm:.3e}")
    return 0


def _training_rows(bundle, data):
    rows = data.rows_for_ids(bundle.train_ids)
    Z = rff_transform(bundle.rff_map, data.features[rows])
    if Z.shape[1] != bundle.model.dim:
        raise InputError(f"model expects {bundle.model.dim} features, map gives {Z.shape[1]}")
    return FeaturizedSet(Z, data.labels[rows], data.ids[rows])


def cmd_remove(args):
    bundle = load_model(args.model)
    data = _load(args)
    if bundle.rff_map.input_dim != data.dim:
        raise InputError(f"model expects {bundle.rff_map.input_dim} input columns, "
                         f"data has {data.dim}")
    fs = _training_rows(bundle, data)
    if args.ids is not None:
        try:
            rid = np.array([int(v) for v in args.ids.replace(",", " ").split()], dtype=np.int64)
        except ValueError:
            raise InputError(f"--ids must be integers, got {args.ids!r}") from None
    else:
        if args.count < 1:
            raise InputError("--count must be at least 1")
        if args.count > fs.n:
            raise InputError(f"--count {args.count} exceeds training size {fs.n}")
        rng = np.random.default_rng([args.seed, args.count])
        rid = np.sort(rng.choice(fs.ids, size=args.count, replace=False))
    updated, report = newton_remove(bundle.model, fs, bundle.weights, rid)
    retained, retained_w = remove_from_training_set(fs, bundle.weights, rid)
    meta = dict(bundle.metadata, removed_ids=[int(v) for v in rid])
    save_model(args.out, updated, bundle.rff_map, retained_w, retained.ids, meta)
    doc = report.to_dict()
    if args.oracle:
        oracle = retrain_oracle(retained, retained_w, bundle.model.b_perturb, bundle.model.lam,
                                retrain_config_for(bundle.model), bundle.model.classes)
        dist = float(np.linalg.norm(updated.w_clf - oracle.w_clf))
        doc["oracle_distance"] = dist
        print(f"oracle distance: {dist:.3e}")
    if args.report:
        write_json(args.report, doc)
    print(f"removed {report.removed_count} samples; gradient residual "
          f"{report.gradient_residual:.3e}")
    return 0


def cmd_evaluate(args):
    bundle = load_model(args.model)
    data = _load(args)
    model, rff_map = bundle.model, bundle.rff_map

    def featurized(ds):
        if ds.dim != rff_map.input_dim:
            raise InputError(f"model expects {rff_map.input_dim} input columns, "
                             f"data has {ds.dim}")
        return rff_transform(rff_map, ds.features)

    Z = featurized(data)
    out = {"plain": weighted_f1(model.predict(Z), data.labels).to_dict()}
    if args.ood_source is not None or args.ood_target is not None:
        if args.ood_source is None or args.ood_target is None:
            raise InputError("--ood-source and --ood-target must be given together")
        shifted = make_ood_split(data, OodSpec(args.ood_source, args.ood_target,
                                               args.ood_fraction, args.ood_seed))
        out["ood"] = weighted_f1(model.predict(Z), shifted.labels).to_dict()
    if args.mia_members or args.mia_nonmembers:
        if not (args.mia_members and args.mia_nonmembers):
            raise InputError("--mia-members and --mia-nonmembers must be given together")
        sets = [load_csv_dataset(p, args.header, args.label_column)
                for p in (args.mia_members, args.mia_nonmembers)]
        losses = [model.sample_losses(featurized(ds), ds.labels) for ds in sets]
        out["mia"] = mia_threshold_attack(*losses).to_dict()
    text = json.dumps(out, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_experiment(args):
    cfg = ExperimentConfig.from_file(args.config)
    summary = run_experiment(cfg, args.out)
    for t in summary["timing"]:
        print(f"k={t['scale']}: removal {t['removal_seconds']:.4f}s, "
              f"retrain {t['retrain_seconds']:.4f}s")
    print(f"artifacts written to {args.out}")
    return 0


def cmd_inspect(args):
    path = Path(args.file)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON at offset {exc.pos}") from exc
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "decoremoval-model":
        b = load_model(path)
        m = b.model
        info = {"kind": kind, "classes": list(m.classes), "feature_dim": m.dim,
                "input_dim": b.rff_map.input_dim, "lambda": m.lam, "loss": m.loss,
                "perturb_std": m.perturb_std, "delta": m.delta,
                "train_size": int(b.train_ids.size),
                "hessian_cached": m.hessian_inv is not None,
                "weight_norm": float(np.linalg.norm(m.w_clf)), "metadata": b.metadata}
        if m.perturb_std > 0:
            info["epsilon_per_unit_residual"] = check_certified(
                1.0, m.perturb_std, m.delta, float("inf"))["epsilon_estimate"]
    elif kind == "decoremoval-weights":
        w = read_weights_file(path)
        info = {"kind": kind, "n": int(w["weights"].n), "min_weight": float(w["weights"].w.min()),
                "max_weight": float(w["weights"].w.max()), "settings": w["settings"],
                "objective": doc.get("objective")}
    else:
        info = {"kind": kind, "keys": sorted(doc) if isinstance(doc, dict) else None}
    print(json.dumps(info, indent=1, sort_keys=True))
    return 0


def build_parser():
    parser = _Parser(prog="decoremoval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("decorrelate", help="optimize decorrelating sample weights")
    _data_args(p)
    p.add_argument("--num-features", type=_positive(int), default=64)
    p.add_argument("--bandwidth", type=_positive(float), default=1.0)
    p.add_argument("--rff-seed", type=int, default=0)
    p.add_argument("--num-functions", type=_positive(int), default=5)
    p.add_argument("--num-steps", type=int, default=100)
    p.add_argument("--step-size", type=_positive(float), default=0.1)
    p.add_argument("--weight-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the objective trace CSV here")
    p.set_defaults(func=cmd_decorrelate)

    p = sub.add_parser("train", help="train the perturbed classifier")
    _data_args(p)
    p.add_argument("--weights", help="weights file from 'decorrelate' (uniform if omitted)")
    p.add_argument("--num-features", type=_positive(int), default=64)
    p.add_argument("--bandwidth", type=_positive(float), default=1.0)
    p.add_argument("--rff-seed", type=int, default=0)
    p.add_argument("--lam", "--lambda", dest="lam", type=float, default=None)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--perturb-seed", type=int, default=0)
    p.add_argument("--loss", choices=("logistic", "ridge"), default="logistic")
    p.add_argument("--grad-tol", type=_positive(float), default=1e-8)
    p.add_argument("--max-iters", type=_positive(int), default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("remove", help="Newton-update removal of training samples")
    _data_args(p)
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--ids", help="comma or space separated sample ids")
    group.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true", help="also retrain exactly and compare")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_remove)

    p = sub.add_parser("evaluate", help="accuracy, weighted F1, OOD and MIA metrics")
    _data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--ood-source", type=int)
    p.add_argument("--ood-target", type=int)
    p.add_argument("--ood-fraction", type=float, default=0.1)
    p.add_argument("--ood-seed", type=int, default=0)
    p.add_argument("--mia-members")
    p.add_argument("--mia-nonmembers")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("inspect", help="summarize a model or weights file")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        if getattr(args, "lam", None) is not None and not args.lam > 0:
            raise InputError("lambda must be > 0")
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

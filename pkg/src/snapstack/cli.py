"""``snapstack`` command line: synth | split | train | stack | evaluate.

Stages communicate through files under the config's ``output_dir``::

    folds.json
    fold{k}/{network}-sub{j}.ckpt (+ .json sidecar)   sub-models, j numbered 1..5 globally
    fold{k}/{network}-train.jsonl                     per-iteration training log
    fold{k}/stacked.model, fold{k}/stack_features.csv
    fold{k}/report-{target}.json, fold{k}/roc-{target}-{class}.csv
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .architectures import Network, import_weights, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, desk_config
from .data.folds import FoldPlan, format_counts_table, make_folds
from .data.images import load_images
from .data.manifest import load_manifest
from .data.synthetic import generate_synthetic_corpus
from .estimators import build_network
from .exceptions import SnapstackError
from .metrics import evaluate, mean_headlines
from .stacking import StackedModel, collect_features, fit_stacker
from .training import jsonl_logger, train

HEADLINE_COLUMNS = ("sensitivity", "specificity", "accuracy_overall", "error", "error_ci", "ppv", "f1", "auc", "auc_ci")


def _write(path, payload) -> None:
    mode = "wb" if isinstance(payload, bytes) else "w"
    tmp = f"{path}.tmp"
    with open(tmp, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SNAPSTACK_THREADS", "1")))
    except ValueError:
        return 1


class Experiment:
    """Loaded config plus cached manifest / fold plan / images."""

    def __init__(self, config: ExperimentConfig):
        self.cfg = config
        self.manifest = load_manifest(config.manifest)
        self._images = None

    def fold_dir(self, fold: int) -> str:
        d = os.path.join(self.cfg.output_dir, f"fold{fold}")
        os.makedirs(d, exist_ok=True)
        return d

    @property
    def folds_path(self) -> str:
        return os.path.join(self.cfg.output_dir, "folds.json")

    def fold_plan(self) -> FoldPlan:
        if not os.path.exists(self.folds_path):
            raise FileNotFoundError(f"fold plan {self.folds_path} missing; run `snapstack split` first")
        with open(self.folds_path, encoding="utf-8") as fh:
            return FoldPlan.from_dict(json.load(fh)["plan"])

    def check_fold(self, fold: int, plan: FoldPlan) -> None:
        if not 1 <= fold <= plan.fold_count:
            raise ValueError(f"fold must be in 1..{plan.fold_count}, got {fold}")

    def images(self, indices):
        if self._images is None:
            self._images = {}
        missing = [int(i) for i in indices if int(i) not in self._images]
        if missing:
            loaded = load_images([self.manifest.path(i) for i in missing], tuple(self.cfg.image_size))
            self._images.update(zip(missing, loaded))
        return np.stack([self._images[int(i)] for i in indices])

    def partition(self, fold: int, name: str):
        plan = self.fold_plan()
        self.check_fold(fold, plan)
        idx = plan.indices(self.manifest, fold - 1, name)
        if len(idx) == 0:
            raise ValueError(f"fold {fold} {name} partition is empty")
        return self.images(idx), self.manifest.labels[idx]

    def spec(self, net):
        return build_network(net.architecture, (*self.cfg.image_size, 3), **net.options)

    def checkpoint_paths(self, fold: int) -> list:
        """``(j, network config, path)`` for every expected sub-model."""
        d = self.fold_dir(fold)
        return [(j, net, os.path.join(d, f"{net.name}-sub{j}.ckpt"))
                for net, numbers in self.cfg.submodel_numbering() for j in numbers]

    def sub_models(self, fold: int) -> dict:
        out = {}
        for j, net, path in self.checkpoint_paths(fold):
            if not os.path.exists(path):
                raise FileNotFoundError(f"sub-model sub{j} missing ({path}); run `snapstack train --network {net.name}`")
            spec = self.spec(net)
            out[j] = Network(spec, load_checkpoint(path, spec))
        return out


def cmd_synth(args) -> int:
    manifest = generate_synthetic_corpus(args.out, per_class=args.per_class, size=(args.size, args.size), seed=args.seed)
    cfg_path = os.path.join(args.out, "config.json")
    _write(cfg_path, _json(desk_config("manifest.csv", "runs", iterations=args.iterations, seed=args.seed)))
    print(f"wrote {len(manifest)} images, {len(manifest.patients)} patients, manifest and {cfg_path}")
    return 0


def cmd_split(args) -> int:
    exp = Experiment(ExperimentConfig.from_file(args.config))
    cfg = exp.cfg
    plan = make_folds(exp.manifest, cfg.fold_count, cfg.fold_ratios, cfg.fold_seed)
    os.makedirs(cfg.output_dir, exist_ok=True)
    out = args.out or exp.folds_path
    _write(out, _json({"provenance": cfg.provenance(), "plan": plan.to_dict()}))
    print(format_counts_table(plan, exp.manifest))
    return 0


def cmd_train(args) -> int:
    exp = Experiment(ExperimentConfig.from_file(args.config))
    net = exp.cfg.network(args.network)
    X, y = exp.partition(args.fold, "train")
    spec = exp.spec(net)
    init = None
    if net.init_weights:
        with np.load(net.init_weights) as weights:
            init = import_weights(Network(spec, seed=net.plan.seed).state(), spec, dict(weights))
    d = exp.fold_dir(args.fold)
    numbers = dict((n.name, nums) for n, nums in exp.cfg.submodel_numbering())[net.name]
    with open(os.path.join(d, f"{net.name}-train.jsonl"), "w", encoding="utf-8") as log_fh:
        log_fh.write(json.dumps({"provenance": exp.cfg.provenance(), "network": net.name, "fold": args.fold}) + "\n")
        snaps = train(spec, X, y, net.plan, exp.cfg.loss, augment=exp.cfg.augment,
                      init_state=init, log=jsonl_logger(log_fh))
    for j, state in zip(numbers, snaps):
        path = os.path.join(d, f"{net.name}-sub{j}.ckpt")
        save_checkpoint(state, path, spec)
        _write(path + ".json", _json({"provenance": exp.cfg.provenance(), "network": net.name, "sub_model": j,
                                      "fold": args.fold, "spec_hash": spec.spec_hash,
                                      "trained_iterations": state.trained_iterations}))
        print(f"sub{j}: {path} ({state.trained_iterations} iterations)")
    return 0


def cmd_stack(args) -> int:
    exp = Experiment(ExperimentConfig.from_file(args.config))
    subs = exp.sub_models(args.fold)
    X, y = exp.partition(args.fold, "validation")
    features = collect_features([subs[j] for j in sorted(subs)], X, y)
    model = fit_stacker(features, exp.cfg.stacker_lambda)
    d = exp.fold_dir(args.fold)
    _write(os.path.join(d, "stacked.model"), model.to_bytes())
    _write(os.path.join(d, "stack_features.csv"), features.to_csv())
    _write(os.path.join(d, "stacked.model.json"), _json({"provenance": exp.cfg.provenance(), "fold": args.fold,
                                                         "features": list(features.shape),
                                                         "lambda": exp.cfg.stacker_lambda}))
    print(f"stacked model on {features.shape[0]} validation images x {features.shape[1]} features")
    return 0


def _target_scores(exp: Experiment, fold: int, target: str, X):
    if target == "stacked":
        path = os.path.join(exp.fold_dir(fold), "stacked.model")
        if not os.path.exists(path):
            raise FileNotFoundError(f"{path} missing; run `snapstack stack` first")
        with open(path, "rb") as fh:
            model = StackedModel.from_bytes(fh.read())
        subs = exp.sub_models(fold)
        P = collect_features([subs[j] for j in sorted(subs)], X).matrix
        return model.scores(P)
    if target.startswith("sub") and target[3:].isdigit():
        j = int(target[3:])
        for k, net, path in exp.checkpoint_paths(fold):
            if k == j:
                if not os.path.exists(path):
                    raise FileNotFoundError(f"sub-model sub{j} missing ({path})")
                spec = exp.spec(net)
                return Network(spec, load_checkpoint(path, spec)).predict_proba(X)
        raise ValueError(f"no sub-model {target} in this config")
    # a base network is its final snapshot
    net = exp.cfg.network(target)
    j, _, path = [c for c in exp.checkpoint_paths(fold) if c[1] is net][-1]
    return _target_scores(exp, fold, f"sub{j}", X)


def evaluate_fold(exp: Experiment, fold: int, targets) -> dict:
    X, y = exp.partition(fold, "test")
    d = exp.fold_dir(fold)
    rows = {}
    for target in targets:
        scores = _target_scores(exp, fold, target, X)
        report = evaluate(y, scores, resamples=exp.cfg.bootstrap_resamples, seed=exp.cfg.eval_seed,
                          meta={"provenance": exp.cfg.provenance(), "fold": fold, "target": target})
        _write(os.path.join(d, f"report-{target}.json"), report.dumps())
        for name, table in report.roc_tables().items():
            _write(os.path.join(d, f"roc-{target}-{name}.csv"), table)
        rows[target] = report.headline()
    return rows


def _fmt(v, key):
    if v is None:
        return "n/a"
    return f"{v:.4f}" if key in ("f1", "auc", "auc_ci") else f"{100 * v:.2f}"


def format_grid(rows: dict, title: str) -> str:
    head = f"{'Model':<16}" + "".join(f"{c:>18}" for c in HEADLINE_COLUMNS)
    lines = [title, head, "-" * len(head)]
    for name, row in rows.items():
        label = "Proposed model" if name == "stacked" else name
        lines.append(f"{label:<16}" + "".join(f"{_fmt(row.get(c), c):>18}" for c in HEADLINE_COLUMNS))
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    exp = Experiment(ExperimentConfig.from_file(args.config))
    targets = list(dict.fromkeys((args.target or ["stacked"]) + (args.compare or [])))
    if args.all_folds:
        folds = list(range(1, exp.fold_plan().fold_count + 1))
        exp.images(np.arange(len(exp.manifest)))  # warm the cache before fanning out
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            per_fold = dict(zip(folds, pool.map(lambda k: evaluate_fold(exp, k, targets), folds)))
    else:
        if args.fold is None:
            raise ValueError("--fold or --all-folds is required")
        per_fold = {args.fold: evaluate_fold(exp, args.fold, targets)}
    out_dir = args.out or exp.cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    texts = []
    for fold, rows in per_fold.items():
        texts.append(format_grid(rows, f"Fold{fold}"))
    if args.all_folds:
        for target in targets:
            fold_rows = {f"Fold{k}": per_fold[k][target] for k in per_fold}
            summary = {"provenance": exp.cfg.provenance(), "target": target,
                       "folds": fold_rows, "mean": mean_headlines(list(fold_rows.values()))}
            _write(os.path.join(out_dir, f"summary-{target}.json"), _json(summary))
            texts.append(format_grid({**fold_rows, "Mean": summary["mean"]}, f"Across folds: {target}"))
    text = "\n\n".join(texts) + "\n"
    if len(targets) > 1 or args.all_folds:
        _write(os.path.join(out_dir, "comparison.txt"), text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="snapstack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic three-class corpus and a desk config")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="patient-level fold plan")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="fold plan path (default: <output_dir>/folds.json)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train one base network and write its sub-model checkpoints")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.add_argument("--network", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stack", help="fit the stacked meta-learner on the validation partition")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.set_defaults(func=cmd_stack)

    p = sub.add_parser("evaluate", help="metrics on the test partition")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int)
    p.add_argument("--all-folds", action="store_true")
    p.add_argument("--target", nargs="+", help="stacked | subJ | network name (default: stacked)")
    p.add_argument("--compare", nargs="+", help="extra targets for a side-by-side grid")
    p.add_argument("--out", help="directory for summaries (default: output_dir)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SnapstackError, ValueError, OSError, KeyError) as exc:
        print(f"snapstack {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``rsstereo {synth,train,eval,matrix,scatter,verify}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError

log = logging.getLogger("rsstereo")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, configuration or inputs; reported with exit code 2."""


def _read_structured(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text())  # JSON is valid YAML
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise UsageError(f"{path} must contain a mapping")
    return raw


def _out_dir(args, default: str) -> Path:
    return Path(args.out or default)


# ---- commands -------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .data import SynthSpec, compute_stats, generate_dataset, write_dataset

    raw = _read_structured(args.config) if args.config else {}
    count = int(raw.pop("count", args.count))
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = SynthSpec(**raw)
    except ValidationError as exc:
        raise UsageError(f"invalid synth spec:\n{exc}") from None
    if count < 1:
        raise UsageError("count must be positive")
    samples = generate_dataset(spec, count)
    for i, s in enumerate(samples):
        s.name = f"{i:05d}"
    out = _out_dir(args, "synth_data")
    write_dataset(out, samples, stats=compute_stats(samples, spec.dataset_id))
    print(json.dumps({"dataset": str(out), "samples": count, "datasetId": spec.dataset_id}))
    return EXIT_OK


def _load_run_config(args):
    from .config import run_config_from_dict

    if not args.config:
        raise UsageError("train needs --config")
    raw = _read_structured(args.config)
    if args.seed is not None:
        raw.setdefault("train", {})["seed"] = args.seed
    if args.out:
        raw["output_dir"] = args.out
    try:
        return run_config_from_dict(raw, args.preset)
    except (ValidationError, ValueError) as exc:
        raise UsageError(f"invalid run config:\n{exc}") from None


def cmd_train(args) -> int:
    from .data import DatasetError, load_dataset
    from .models import build_model
    from .training import ConfigurationError, train

    rc = _load_run_config(args)
    try:
        train_ds = load_dataset(rc.data.train)
        eval_ds = load_dataset(rc.data.eval, require_stats=True) if rc.data.eval else None
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    if rc.train.manner == "supervised" and not train_ds.has_gt:
        raise UsageError(f"supervised training needs ground-truth disparity but {train_ds.root} has none")
    if rc.train.use_pretrained and not Path(rc.train.pretrained_checkpoint).is_file():
        raise UsageError(f"pretrained checkpoint {rc.train.pretrained_checkpoint} not found")
    if train_ds[0].left.shape[-1] != rc.model.in_channels:
        raise UsageError(f"model expects {rc.model.in_channels} channels, dataset has {train_ds[0].left.shape[-1]}")

    model = build_model(rc.model)
    eval_samples = eval_ds.samples() if eval_ds is not None and eval_ds.has_gt else None
    try:
        result = train(model, train_ds.samples(), rc.train, rc.output_dir,
                       eval_samples=eval_samples, eval_stats=eval_ds.stats if eval_ds else None,
                       run_config=rc.model_dump(mode="json"))
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps({"run_dir": rc.output_dir, "final_checkpoint": str(result.final_checkpoint),
                      "stopped_early": result.stopped_early, "restored_epoch": result.restored_epoch}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import DatasetError, load_dataset
    from .evaluation import evaluate_checkpoint

    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    try:
        ds = load_dataset(args.dataset, require_stats=True)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    if not ds.has_gt:
        raise UsageError(f"{ds.root} has no ground-truth disparity to evaluate against")
    result = evaluate_checkpoint(args.checkpoint, ds)
    record = result.to_record()
    print(json.dumps(record))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(record, indent=2))
    return EXIT_OK


def cmd_matrix(args) -> int:
    from .evaluation import cross_domain_matrix

    missing = [c for c in args.checkpoints if not Path(c).is_file()]
    if len(missing) == len(args.checkpoints):
        raise UsageError(f"no checkpoint exists among {args.checkpoints}")
    out = _out_dir(args, "matrix")
    cells = cross_domain_matrix(args.checkpoints, args.testsets, out)
    print((out / "table.txt").read_text(), end="")
    ok = sum(c.error is None for c in cells)
    log.info("%d of %d cells evaluated", ok, len(cells))
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_scatter(args) -> int:
    from .evaluation import emit_scatter, read_results

    src = Path(args.results)
    if not (src / "results.jsonl").is_file() and not src.is_file():
        raise UsageError(f"{src} holds no results.jsonl")
    out = _out_dir(args, str(src if src.is_dir() else src.parent))
    plot, data, warns = emit_scatter(read_results(src), out)
    print(json.dumps({"plot": str(plot), "data": str(data), "warnings": warns}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verification.__main__ import main as verify_main

    argv = ["--instances", str(args.instances)]
    if args.seed is not None:
        argv += ["--seed", str(args.seed)]
    if args.out:
        argv += ["--out", args.out]
    return verify_main(argv)


# ---- parser ---------------------------------------------------------------------------------

def _add_globals(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="YAML/JSON file (synth spec or run config)")
    p.add_argument("--seed", type=int, default=default, help="overrides the seed in the config")
    p.add_argument("--out", default=default, help="output directory (or file for verify)")
    p.add_argument("--preset", choices=["desk", "paper"], default=default,
                   help="fill unspecified model/train fields from a preset")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rsstereo", description="Stereo matching training and evaluation.")
    _add_globals(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic stereogram dataset")
    _add_globals(p, suppress=True)
    p.add_argument("--count", type=int, default=8, help="number of pairs (a 'count' key in the spec wins)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a run config")
    _add_globals(p, suppress=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate one checkpoint on one dataset")
    _add_globals(p, suppress=True)
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="evaluate every checkpoint on every test set")
    _add_globals(p, suppress=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--testsets", nargs="+", required=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("scatter", help="plot supervised vs unsupervised EPE from matrix results")
    _add_globals(p, suppress=True)
    p.add_argument("results", help="matrix output directory or results.jsonl")
    p.set_defaults(func=cmd_scatter)

    p = sub.add_parser("verify", help="run the oracle and finite-difference suites")
    _add_globals(p, suppress=True)
    p.add_argument("--instances", type=int, default=100)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()

"""Command-line entry point: ``polrestore <command> [options]``.

Exit status is 0 on success, 2 for configuration problems, 3 for missing or
malformed data files and 4 for numerical failures (non-finite training loss,
failed gradient checks).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import io as pio
from . import pipeline as pl
from .degrade import degrade

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=default(None), help="pipeline config (JSON)")
    parser.add_argument("--seed", type=int, default=default(None),
                        help="override every seed in the config")
    parser.add_argument("--out", default=default(None), help="output path (meaning depends on the command)")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser():
    parser = argparse.ArgumentParser(prog="polrestore",
                                     description="Polarimetric restoration: data synthesis, training, evaluation.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common],
                   help="write clean/degraded scene pairs and index.json (--out: dataset dir)")
    p = sub.add_parser("degrade", parents=[common],
                       help="apply the configured degradation to one quad file")
    p.add_argument("--input", required=True)
    p.add_argument("--index", type=int, default=0, help="image index for the noise/kernel stream")
    sub.add_parser("train", parents=[common], help="train and write checkpoints (--out: checkpoint dir)")
    p = sub.add_parser("eval", parents=[common], help="score model and baseline on the validation split")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("infer", parents=[common], help="restore a single quad file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all adjoints")
    p.add_argument("--quick", action="store_true", help="operator suite only")
    return parser


def _config(args, required=True):
    if args.config is None:
        if required:
            raise pl.ConfigError("--config is required for this command")
        cfg = pl.PipelineConfig()
        return cfg.with_seed(args.seed) if args.seed is not None else cfg
    return pl.load_config(args.config, seed=args.seed)


def _with_paths(cfg, **kw):
    return replace(cfg, paths=replace(cfg.paths, **kw))


def cmd_synth(args):
    cfg = _config(args)
    if args.out:
        cfg = _with_paths(cfg, dataset_dir=args.out)
    index = pl.synth_command(cfg)
    print(f"wrote {len(index.records)} pairs to {cfg.paths.dataset_dir}")


def cmd_degrade(args):
    cfg = _config(args)
    if not args.out:
        raise pl.ConfigError("degrade needs --out")
    quad = pio.read_quad(args.input, cfg.network.image_channels)
    out, meta = degrade(quad, cfg.data.degradation_spec(), index=args.index)
    pio.write_quad(args.out, out.astype("float32"))
    print(json.dumps({"output": args.out, **meta}))


def cmd_train(args):
    cfg = _config(args)
    if args.out:
        cfg = _with_paths(cfg, checkpoint_dir=args.out)
    result = pl.train_command(cfg)
    last = result.history[-1]["total"] if result.history else float("nan")
    print(f"trained {len(result.history)} steps, final loss {last:.6g}, best step {result.best_step}; "
          f"checkpoints in {cfg.paths.checkpoint_dir}")


def cmd_eval(args):
    cfg = _config(args)
    out = args.out or cfg.paths.report_path
    reports = pl.eval_command(cfg, args.checkpoint, out)
    for name, rep in reports.items():
        print(f"{name:9s} " + "  ".join(f"{k}={_fmt(v)}" for k, v in rep.to_dict().items() if k != "per_image"))
    print(f"report written to {out}")


def _fmt(v):
    return v if isinstance(v, str) else f"{v:.4f}"


def cmd_infer(args):
    cfg = _config(args)
    if not args.out:
        raise pl.ConfigError("infer needs --out")
    out = pl.infer_command(cfg, args.checkpoint, args.input, args.out)
    print(f"restored {out.height}x{out.width} quad written to {args.out}")


def cmd_gradcheck(args):
    cfg = _config(args, required=False)
    seed = args.seed if args.seed is not None else cfg.init_seed
    if args.quick:
        from .gradcheck import op_suite
        results = op_suite(seed)
    else:
        results = pl.gradcheck_command(cfg, seed=seed)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if args.out:
        pl.save_json(args.out, {"passed": not failed, "results": [
            {"name": r.name, "max_rel_err": r.max_rel_err, "max_abs_err": r.max_abs_err,
             "n_checked": r.n_checked, "n_failed": r.n_failed} for r in results]})
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except pl.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (pl.DataError, pio.FormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except pl.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: synth, train, eval, infer, gradcheck.

JSON payloads go to stdout; the resolved config and diagnostics go to stderr.
Exit codes: 0 ok, 1 usage, 2 data/IO, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig, apply_overrides
from .data import DataError
from .metrics import MetricError
from .netpbm import NetpbmError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("scribble_sod")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scribble-sod", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic scribble dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train from a manifest")
    t.add_argument("--data", required=True, help="training manifest.tsv")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="JSON config file (defaults when omitted)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-key override")
    t.add_argument("--eval-data", help="manifest with masks scored each epoch")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    e = sub.add_parser("eval", help="score predicted maps against ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--pred", required=True, help="directory of <id>.pgm maps")
    e.add_argument("--figures", help="directory for metric figures")

    i = sub.add_parser("infer", help="predict one saliency map")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True, help="P6 image, or a manifest to predict every entry")
    i.add_argument("--out", required=True, help="output .pgm (directory when --image is a manifest)")

    g = sub.add_parser("gradcheck", help="finite-difference suite")
    g.add_argument("--seed", type=int, default=0)
    return p


def resolve_config(path, overrides) -> TrainConfig:
    cfg = TrainConfig()
    if path:
        try:
            cfg = TrainConfig.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    return apply_overrides(cfg, overrides)


def _print_config(args, cfg: TrainConfig = None) -> None:
    """Resolved settings to stderr; for ``train`` this is the TrainConfig JSON, re-usable via --config."""
    if cfg is not None:
        print(cfg.to_json(), file=sys.stderr)
    else:
        print(json.dumps(vars(args), sort_keys=True), file=sys.stderr)


def cmd_synth(args) -> int:
    from .synth import synth_generate

    manifest = synth_generate(args.out, args.count, args.size, args.seed)
    print(json.dumps({"manifest": str(manifest), "count": args.count}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import read_manifest
    from .plotting import plot_loss_curves
    from .trainer import LOG_NAME, train

    cfg = resolve_config(args.config, args.set)
    _print_config(args, cfg)
    manifest = read_manifest(args.data)
    eval_samples = list(read_manifest(args.eval_data).samples()) if args.eval_data else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    result = train(manifest, cfg, out, eval_samples=eval_samples, resume=args.resume)
    fig = plot_loss_curves(out / LOG_NAME, out / "loss_curves.png")
    last = result.history[-1] if result.history else {}
    print(json.dumps({"checkpoint": str(result.checkpoint), "log": str(out / LOG_NAME),
                      "figure": str(fig), "last": last}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import read_manifest
    from .metrics import evaluate_dataset

    _print_config(args)
    result = evaluate_dataset(read_manifest(args.data), args.pred)
    if args.figures:
        from .plotting import plot_eval

        plot_eval(result, Path(args.figures) / "metrics.png")
    print(result.to_json())
    return EXIT_OK


def cmd_infer(args) -> int:
    from .checkpoint import load_checkpoint
    from .netpbm import load_image, save_map
    from .trainer import predict

    _print_config(args)
    net, cfg, _ = load_checkpoint(args.ckpt)
    if args.image.endswith(".tsv"):
        from .data import read_manifest

        manifest = read_manifest(args.image)
        images = [load_image(e.image) for e in manifest.entries]
        written = []
        for entry, pred in zip(manifest.entries, predict(net, images, cfg.train_size)):
            path = Path(args.out) / f"{entry.id}.pgm"
            save_map(path, pred)
            written.append(str(path))
        print(json.dumps({"maps": written}))
    else:
        pred = predict(net, [load_image(args.image)], cfg.train_size)[0]
        save_map(args.out, pred)
        print(json.dumps({"map": args.out, "height": pred.shape[0], "width": pred.shape[1]}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import run_suite

    _print_config(args)
    reports = run_suite(args.seed)
    for r in reports:
        print(r.line(), file=sys.stderr)
    failed = [r.name for r in reports if not r.passed]
    print(json.dumps({"checks": len(reports), "failed": failed,
                      "results": [{"name": r.name, "max_rel_error": r.max_rel_error, "tol": r.tol,
                                   "passed": r.passed} for r in reports]}))
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    from .trainer import NumericalError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](args)
    except (DataError, NetpbmError, MetricError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``semco <command> ...``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DataError, SemcoError

log = logging.getLogger("semco")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Commands


def cmd_build_embeddings(args) -> int:
    from .labelsem import (
        RetrofitConfig, build_embeddings, read_embeddings, read_graph, write_embeddings,
    )

    relations = [r.strip() for r in args.relations.split(",") if r.strip()]
    if not relations:
        raise ConfigError("--relations must name at least one relation")
    emb = build_embeddings(
        read_embeddings(args.glove),
        read_embeddings(args.w2v),
        read_graph(args.graph),
        relations,
        args.dim,
        RetrofitConfig(max_iters=args.max_iters, tol=args.tol),
    )
    write_embeddings(emb, args.out, fmt="%.8g")
    print(f"vocab {len(emb)} dim {emb.d}")
    return EXIT_OK


def _read_label_arg(value) -> list[str]:
    from .labelsem import read_labels

    path = Path(value)
    if path.is_file():
        return read_labels(path)
    if "," in value or not path.suffix:
        return [s.strip() for s in value.split(",") if s.strip()]
    raise DataError(f"{value}: no such file")


def cmd_group(args) -> int:
    from .grouping import group_labels, groups_as_json
    from .labelsem import build_label_matrix, read_embeddings

    labels = _read_label_arg(args.labels)
    M = build_label_matrix(read_embeddings(args.embeddings), labels)
    grouping = group_labels(M.vectors, args.eps)
    print(json.dumps(groups_as_json(grouping, labels)))
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import config_keys, load_config, make_config, train

    overrides = {k: getattr(args, k) for k in config_keys() if getattr(args, k) is not None}
    cfg = load_config(args.config, **overrides) if args.config else make_config(overrides)

    def progress(epoch, rec):
        log.info("epoch %d/%d  error %.4f  loss %.4f", epoch + 1, cfg.epochs, rec["test_error"], rec["loss"])

    result = train(cfg, args.out, progress)
    s = result.summary
    print(f"final test error {s['final_test_error']:.4f} (semantic head {s['final_test_error_sc']:.4f})")
    print(f"wrote {Path(args.out) / 'checkpoint.npz'}, metrics.csv, summary.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model import load_checkpoint
    from .trainer import eval_dataset_for, evaluate

    state, header, extras = load_checkpoint(args.checkpoint)
    data = eval_dataset_for(header, args.data)
    M = extras.get("label_matrix")
    err = evaluate(state, data, head=args.head, M=M, use_ema=not args.no_ema)
    print(f"{err:.6f}")
    return EXIT_OK


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def cmd_stats(args) -> int:
    from .plotting import render_all, stats_table
    from .trainer import read_metrics

    rows = read_metrics(args.metrics)
    classes = [c.strip() for c in args.classes.split(",") if c.strip()] if args.classes else None
    header, table = stats_table(rows, classes)
    writer = csv.writer(sys.stdout, delimiter=args.delimiter, lineterminator="\n")
    writer.writerow(header)
    for row in table:
        writer.writerow([_fmt(v) for v in row])
    if args.plot_dir:
        shown = classes or list(dict.fromkeys(r[1] for r in table))
        for p in render_all(rows, shown, args.plot_dir):
            log.info("wrote %s", p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _train_flag_help(name) -> str:
    from .trainer import CONFIG_HELP, FULL_SCALE, RunConfig

    default = getattr(RunConfig(), name)
    text = f"{CONFIG_HELP.get(name, name)} (default: {default!r}"
    if name in FULL_SCALE:
        text += f"; full-scale preset: {FULL_SCALE[name]!r}"
    return text + ")"


def build_parser() -> argparse.ArgumentParser:
    from .labelsem import VISUAL_RELATIONS
    from .trainer import config_keys

    parser = _Parser(prog="semco", description="Semi-supervised classification with label semantics.")
    parser.add_argument("--version", action="version", version=f"semco {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("build-embeddings", help="retrofit two embedding sets to a graph and merge them")
    p.add_argument("--glove", required=True, help="first embedding file")
    p.add_argument("--w2v", required=True, help="second embedding file")
    p.add_argument("--graph", required=True, help="relation<TAB>term_a<TAB>term_b[<TAB>weight] file")
    p.add_argument("--relations", default=",".join(sorted(VISUAL_RELATIONS)),
                   help="comma-separated relations to keep (default: %(default)s)")
    p.add_argument("--dim", type=int, default=128, help="output dimension (default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=10, help="retrofitting sweeps (default: %(default)s)")
    p.add_argument("--tol", type=float, default=1e-6, help="retrofitting tolerance (default: %(default)s)")
    p.add_argument("--out", required=True, help="output embedding file")
    p.set_defaults(func=cmd_build_embeddings)

    p = sub.add_parser("group", help="cluster class labels into visually similar groups (JSON)")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("--labels", required=True, help="label file (one per line) or comma-separated labels")
    p.add_argument("--eps", type=float, default=0.2, help="cosine-distance radius (default: %(default)s)")
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("train", help="train a model; writes checkpoint.npz, metrics.csv, summary.json")
    p.add_argument("--config", help="flat 'key = value' config file; flags below override it")
    p.add_argument("--out", required=True, help="output directory")
    keys = p.add_argument_group("config keys")
    for name in config_keys():
        keys.add_argument(f"--{name}", dest=name, default=None, metavar="V", help=_train_flag_help(name))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="dataset path, or 'synthetic' for the checkpoint's own synthetic test set")
    p.add_argument("--head", choices=("oh", "sc"), default="oh", help="classifier head (default: %(default)s)")
    p.add_argument("--no-ema", action="store_true", help="use live instead of averaged weights")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="per-class pseudo-labelling table from a metrics file")
    p.add_argument("--metrics", required=True, help="metrics.csv written by train")
    p.add_argument("--classes", help="comma-separated classes to show (default: all)")
    p.add_argument("--plot-dir", help="also render figures into this directory")
    p.add_argument("--delimiter", default=",", help="output delimiter (default: ',')")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except SemcoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc.filename or exc}: no such file", file=sys.stderr)
        return EXIT_DATA
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .config import parse_config
from .errors import ConfigError, DataError
from .harness import (
    OUTPUT_ENV,
    RunExistsError,
    read_run,
    run_paired,
    run_single,
    run_sweep,
    summarize,
)
from .metrics import consecutive_prob, min_compromised
from .plotting import PLOT_KINDS, plot_svg

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def _csv_list(text, conv):
    try:
        return [conv(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _load(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out(args, cfg):
    if args.out is not None:
        return args.out
    return os.path.join(cfg.output_dir or os.environ.get(OUTPUT_ENV) or "runs", cfg.name)


def _fmt_summary(s) -> str:
    parts = [f"rounds {s.window_start}-{s.window_end}", f"ACC {s.acc_mean:.4f} (sd {s.acc_std:.4f})"]
    if s.bsa is not None:
        parts.append(f"BSA {s.bsa:.4f} (sd {s.bsv:.4f})")
    if s.edge_bsa is not None:
        parts.append(f"edge BSA {s.edge_bsa:.4f} (sd {s.edge_bsv:.4f})")
    if s.bda is not None:
        parts.append(f"BDA {s.bda:.4f} (sd {s.bdv:.4f})")
    return "  ".join(parts)


def cmd_run(args):
    cfg = _load(args)
    out = _out(args, cfg)
    art = run_single(cfg, out, force=args.force, workers=args.workers)
    print(f"{out}: {_fmt_summary(art.summary)}")


def cmd_pair(args):
    cfg = _load(args)
    out = _out(args, cfg)
    _, attacked, degr = run_paired(cfg, out, force=args.force, workers=args.workers)
    print(f"{out}: {_fmt_summary(attacked.summary)}")


def cmd_sweep(args):
    cfg = _load(args)
    out = _out(args, cfg)
    ratios = [r / 100.0 for r in args.ratios]
    table = run_sweep(cfg, ratios, args.settings, out, force=args.force, processes=args.processes)
    for row in table:
        bsa = "-" if row["bsa"] is None else f"{row['bsa']:.4f}"
        bda = "-" if row["bda"] is None else f"{row['bda']:.4f}"
        print(f"{row['setting']:>10} {100 * row['ratio']:5g}%  ACC {row['acc_mean']:.4f}  "
              f"BSA {bsa}  BDA {bda}")
    print(f"table written to {os.path.join(out, 'sweep.csv')}")


def cmd_metrics(args):
    path = summarize(args.run_dir)
    art = read_run(args.run_dir)
    print(_fmt_summary(art.summary))
    print(f"summary written to {path}")


def cmd_feasibility(args):
    m = min_compromised(args.n, args.k, args.need, args.conf, model=args.model)
    if m is None:
        print(f"infeasible: no M <= {args.n} reaches confidence {args.conf}")
    else:
        print(f"min compromised clients: {m} of {args.n}")
    if args.alpha is not None:
        print(f"P(one client selected {args.rounds} rounds in a row) = "
              f"{consecutive_prob(args.alpha, args.rounds):.6g}")


def cmd_plot(args):
    src = args.summary
    if args.kind == "series":
        run_dir = src if os.path.isdir(src) else os.path.dirname(src)
        data = read_run(run_dir).records
    else:
        if os.path.isdir(src):
            src = os.path.join(src, "sweep.json")
        try:
            with open(src) as fh:
                data = json.load(fh)["rows"]
        except (OSError, KeyError, json.JSONDecodeError) as e:
            raise DataError(f"{src}: not a sweep summary ({e})") from None
    out = args.output or os.path.splitext(src)[0] + f"_{args.kind}.svg"
    plot_svg(data, args.kind, out)
    print(f"wrote {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedpoison", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUTPUT_ENV} or ./runs, plus the config name)")
        sp.add_argument("--force", action="store_true", help="overwrite existing results")
        sp.set_defaults(func=func)
        return sp

    experiment("run", cmd_run, "single attacked run").add_argument("--workers", type=int, default=1)
    experiment("pair", cmd_pair, "clean + attacked run with BDA/BDV").add_argument(
        "--workers", type=int, default=1)
    sw = experiment("sweep", cmd_sweep, "settings x poison ratio sweep")
    sw.add_argument("--ratios", type=lambda s: _csv_list(s, float), default=[1, 3, 5, 7, 10],
                    help="poison ratios in percent, comma separated")
    sw.add_argument("--settings", type=lambda s: _csv_list(s, str), default=["practical", "ideal"])
    sw.add_argument("--processes", type=int, default=1)

    mt = sub.add_parser("metrics", help="recompute the summary of a run directory")
    mt.add_argument("run_dir")
    mt.set_defaults(func=cmd_metrics)

    fe = sub.add_parser("feasibility", help="minimum compromised clients for a selection target")
    fe.add_argument("--n", type=int, default=100)
    fe.add_argument("--k", type=int, default=10)
    fe.add_argument("--need", type=int, default=4)
    fe.add_argument("--conf", type=float, default=0.99)
    fe.add_argument("--model", choices=("binomial", "hypergeometric"), default="binomial")
    fe.add_argument("--alpha", type=float, default=None, help="also report alpha**rounds")
    fe.add_argument("--rounds", type=int, default=5)
    fe.set_defaults(func=cmd_feasibility)

    pl = sub.add_parser("plot", help="render an SVG from a sweep summary or run directory")
    pl.add_argument("summary")
    pl.add_argument("--kind", choices=PLOT_KINDS, default="bsa_vs_ratio")
    pl.add_argument("-o", "--output", default=None)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, RunExistsError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - top-level reporting
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

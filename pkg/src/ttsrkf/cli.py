"""Command line interface: ``ttsrkf run | compare | gen``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataIOError, TTSRKFError
from .harness import emit_outputs, load_config, run_experiment
from .harness.config import config_from_overrides
from .harness.data import gen_synthetic_gp, gen_volterra, simulate_tanks, write_dataset_csv, write_tanks_csv
from .harness.outputs import fmt, metrics_lines

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4

logger = logging.getLogger("ttsrkf")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ttsrkf", description="Tensor-train square-root Kalman filter experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--out", default=None, help="output directory (default: runs/<name>)")
    run.add_argument("--plot", action="store_true")
    run.add_argument("--fail-on-divergence", action="store_true")

    cmp_ = sub.add_parser("compare", help="run several configs and join their metrics")
    cmp_.add_argument("--configs", required=True, help="comma-separated config files")
    cmp_.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    cmp_.add_argument("--out", default="runs/compare")
    cmp_.add_argument("--plot", action="store_true")

    gen = sub.add_parser("gen", help="write a dataset CSV")
    gen.add_argument("--kind", required=True, choices=("gp", "volterra", "tanks"))
    gen.add_argument("--out", required=True)
    gen.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return p


def _run_one(path, overrides, out, plot):
    cfg = load_config(path, overrides)
    result = run_experiment(cfg)
    out_dir = Path(out) if out else Path("runs") / cfg.name
    emit_outputs(result, out_dir, plot=plot or cfg.plot)
    return cfg, result, out_dir


def cmd_run(args) -> int:
    cfg, result, out_dir = _run_one(args.config, args.set, args.out, args.plot)
    last = result.rows[-1] if result.rows else None
    if last is not None:
        print(f"{cfg.name}: t={last.t} rmse={fmt(last.rmse)} nll={fmt(last.nll)} -> {out_dir}")
    if result.diverged_at is not None:
        print(f"{cfg.name}: diverged at step {result.diverged_at}", file=sys.stderr)
        if args.fail_on_divergence and cfg.filter == "tnkf":
            return EXIT_DIVERGED
    return EXIT_OK


def cmd_compare(args) -> int:
    out = Path(args.out)
    joined = []
    header = None
    for path in [p.strip() for p in args.configs.split(",") if p.strip()]:
        cfg, result, _ = _run_one(path, args.set, out / Path(path).stem, args.plot)
        lines = metrics_lines(result.rows, True, True)
        if header is None:
            header = "config," + lines[0]
        joined.extend(f"{cfg.name},{line}" for line in lines[1:])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text("\n".join([header or "config"] + joined) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {out / 'compare.csv'}: {exc}") from exc
    print(out / "compare.csv")
    return EXIT_OK


def cmd_gen(args) -> int:
    cfg = config_from_overrides(args.set)
    out = Path(args.out)
    if args.kind == "gp":
        data = gen_synthetic_gp(
            cfg.D, cfg.I, cfg.N, cfg.N_test, cfg.domain, cfg.data_seed, cfg.noise_var,
            cfg.lengthscale, cfg.signal_var, cfg.input_box,
        )
        write_dataset_csv(out, data)
    elif args.kind == "volterra":
        write_dataset_csv(out, gen_volterra(cfg.D, cfg.I, cfg.N, cfg.N_test, cfg.snr_db, cfg.data_seed, cfg.true_rank))
    else:
        write_tanks_csv(out, *simulate_tanks(1024, cfg.data_seed))
    print(out)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "compare": cmd_compare, "gen": cmd_gen}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataIOError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TTSRKFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

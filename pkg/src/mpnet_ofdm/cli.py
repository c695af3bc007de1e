"""Command line entry point: gen, train, bench, eval and sweep."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .fileio import FormatError, read_checkpoint
from .signal_core import AntennaGains, SystemConfig, add_noise, build_delay_grid, build_nominal_grid
from .sparse_mp import build_meta_atoms, meta_correlation_response
from .unfolded import ConstrainedParams, MPNet

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _atom_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 2:
        raise argparse.ArgumentTypeError("atom counts must be integers >= 2")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON scenario config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="mpnet-ofdm", description="Sparse OFDM channel estimation experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="write a CHD1 dataset of ground-truth channels")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--name", default="channels.chd")

    sub.add_parser("train", parents=[common], help="run a scenario and write results/history/checkpoints")

    b = sub.add_parser("bench", parents=[common], help="timing benchmark of exhaustive vs hierarchical MP")
    b.add_argument("--atoms", type=_atom_list, default=[990, 5000, 50000])
    b.add_argument("--runs", type=int, default=10_000)
    b.add_argument("--warmup", type=int, default=100)

    e = sub.add_parser("eval", parents=[common], help="evaluate a frozen checkpoint on a dataset")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--snr", type=float, default=None, help="input SNR in dB (default: config value)")
    e.add_argument("--selector", default="exhaustive", help="'exhaustive' or a branching factor")

    s = sub.add_parser("sweep", parents=[common], help="dump meta-atom correlation responses")
    s.add_argument("--branching", type=int, default=3)
    s.add_argument("--points", type=int, default=2000)
    return p


def _load_config(args) -> ex.ScenarioConfig:
    cfg = ex.ScenarioConfig.load(args.config) if args.config is not None else ex.ScenarioConfig()
    if args.seed is not None:
        cfg = ex.ScenarioConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    return cfg


def _cmd_gen(args, cfg):
    if args.count < 1:
        raise _UsageError("--count must be >= 1")
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / args.name
    ex.gen_dataset(cfg, args.count, path)
    print(f"wrote {args.count} channels to {path}")


def _cmd_train(args, cfg):
    table, _ = ex.run_scenario(cfg, out_dir=args.out)
    for m in cfg.methods:
        r = table.final(m)
        print(f"{m:>11s}  {r.nmse_db:8.2f} dB  after {r.channels_seen} channels")


def _cmd_bench(args, cfg):
    if args.runs < 1 or args.warmup < 0:
        raise _UsageError("--runs must be >= 1 and --warmup >= 0")
    rows = ex.timing_bench(args.atoms, args.runs, cfg.seed, cfg.snr_in_db, cfg.max_layers, args.warmup,
                           system=cfg.system)
    args.out.mkdir(parents=True, exist_ok=True)
    ex.write_bench_csv(args.out / "bench.csv", rows)
    for r in rows:
        print(f"A={r.n_atoms:>6d} {r.method:>6s} mean {r.mean_time_s:.3e} s  corr {r.mean_correlations:.1f}")


def _cmd_eval(args, cfg):
    params, n_atoms, _ = read_checkpoint(args.checkpoint)
    ds = ex.load_dataset(args.dataset, cfg.n_subcarriers)
    if ds.n_subcarriers != cfg.n_subcarriers:
        raise ex.ConfigError(f"dataset has N={ds.n_subcarriers}, config has N={cfg.n_subcarriers}")
    system = cfg.system
    snr = cfg.snr_in_db if args.snr is None else args.snr
    selector = args.selector if args.selector == "exhaustive" else int(args.selector)
    net = MPNet(params, system, build_delay_grid(system, n_atoms, cfg.oversampling), selector, cfg.max_layers)
    rng = np.random.default_rng(cfg.seed)
    obs = [add_noise(c.h, snr, rng) for c in ds.channels]
    X = np.stack([o.x for o in obs], axis=1)
    H = ds.matrix()
    Hh, _, corr = net.denoise(X, np.array([o.noise_var for o in obs]))
    table = ex.ResultTable()
    name = "C-mpNet" if isinstance(params, ConstrainedParams) else "mpNet"
    table.add(name, 0, ex.to_db(np.mean(ex.nmse(Hh, H))), 0.0, float(np.mean(corr)))
    table.add("LS", 0, ex.to_db(np.mean(ex.nmse(X, H))), 0.0, 0.0)
    args.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out / "results.csv")
    for r in table.rows:
        print(f"{r.method:>8s}  {r.nmse_db:8.2f} dB")


def _cmd_sweep(args, cfg):
    system = SystemConfig(cfg.n_subcarriers, cfg.center_freq_hz, cfg.bandwidth_hz)
    delays = build_delay_grid(system, cfg.n_atoms, cfg.oversampling)
    grid = build_nominal_grid(system)
    gains = AntennaGains.flat(system.n_subcarriers)
    step = float(delays[1] - delays[0])
    span = (float(delays[0]), float(delays[-1]) + step)
    metas = build_meta_atoms(grid, span, args.branching, gains)
    taus = np.linspace(span[0], span[1], args.points, endpoint=False)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meta_index", "tau_center_s", "width_s", "tau_s", "response"])
        for k, m in enumerate(metas):
            resp = meta_correlation_response(m, grid, gains, taus)
            for t, v in zip(taus, resp):
                w.writerow([k, repr(m.tau_center_s), repr(m.width_s), repr(float(t)), repr(float(v))])
    print(f"wrote {len(metas)} x {args.points} responses to {args.out / 'sweep.csv'}")


COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "bench": _cmd_bench, "eval": _cmd_eval, "sweep": _cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""``gpchain`` command line entry point.

Exit codes: 0 when every enabled assertion passed, 1 when one failed,
2 for configuration errors and 3 when the run itself failed.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

SUBCOMMANDS = ("soliton-table", "spectrum", "evolve", "modulate", "track",
               "chain-stability", "monotonicity", "momentum-transfer")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_RUN = 0, 1, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _common(p: argparse.ArgumentParser, multi_config: bool = False) -> None:
    if multi_config:
        p.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="config file (repeat for each sweep member)")
        p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    else:
        p.add_argument("--config", metavar="PATH", help="TOML experiment config")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=_u64, help="perturbation seed (overrides perturbation.seed)")
    p.add_argument("--threads", type=int, default=1, help="thread count for numerical libraries (recorded)")
    p.add_argument("--assert", dest="assertions", action="store_true", default=True,
                   help="enforce in-run assertions (default)")
    p.add_argument("--no-assert", dest="assertions", action="store_false",
                   help="report assertions without affecting the exit code")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpchain", description="Soliton-chain experiments for the "
                                     "hydrodynamic Gross-Pitaevskii system.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        _common(sub.add_parser(name, help=f"run a {name} experiment"))
    _common(sub.add_parser("sweep", help="run several configs, each into its own directory"), multi_config=True)
    return parser


def _limit_threads(n: int) -> None:
    """Pin BLAS/OpenMP pools in this process and in any worker it spawns."""
    for var in THREAD_VARS:
        os.environ[var] = str(n)
    # numpy is already loaded by the package import, so resize the live pools too
    threadpool_limits(limits=n)


def _load(path: Optional[str], kind: str):
    from .config import ExperimentConfig, load_config, validate
    if path is None:
        if kind == "soliton-table":
            return validate({"kind": kind})
        from ..errors import ConfigError
        raise ConfigError("--config", f"{kind} needs a config file")
    cfg = load_config(path)
    if cfg.kind != kind:
        from ..errors import ConfigError
        raise ConfigError("kind", f"config is for {cfg.kind!r}, not {kind!r}")
    return cfg


def run_one(kind: str, config: Optional[str], out: Optional[str], seed, threads: int,
            assertions: bool, stream=None) -> int:
    from ..errors import ConfigError, GPChainError
    from .experiments import run_experiment
    stream = stream or sys.stdout
    try:
        cfg = _load(config, kind)
        out_dir = Path(out) if out else Path(cfg.get("output", "dir"))
        result = run_experiment(cfg, out_dir, seed=seed, threads=threads, assertions=assertions)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except GPChainError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_RUN
    for a in result.assertions.items:
        tag = "PASS" if a["passed"] else "FAIL"
        if "bound" in a:
            print(f"{tag} {a['name']}: {a['value']:.6g} {a['relation']} {a['bound']:.6g}", file=stream)
        else:
            print(f"{tag} {a['name']} {a.get('detail', '')}".rstrip(), file=stream)
    print(f"wrote {len(result.files)} files to {result.out_dir}", file=stream)
    return EXIT_OK if result.passed else EXIT_ASSERT


def _sweep_member(args):
    return run_one(*args)


def run_sweep(configs: Sequence[str], out: Optional[str], seed, threads: int, assertions: bool,
              workers: int) -> int:
    from ..errors import ConfigError
    from .config import load_config
    jobs = []
    base = Path(out) if out else Path("sweep")
    for path in configs:
        try:
            cfg = load_config(path)
        except ConfigError as err:
            print(f"config error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        jobs.append((cfg.kind, path, str(base / Path(path).stem), seed, threads, assertions))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            codes = list(ex.map(_sweep_member, jobs))
    else:
        codes = [_sweep_member(j) for j in jobs]
    for (kind, path, *_), code in zip(jobs, codes):
        print(f"{path}: {kind} exit {code}")
    return max(codes) if codes else EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _limit_threads(args.threads)
    if args.command == "sweep":
        return run_sweep(args.config, args.out, args.seed, args.threads, args.assertions, args.workers)
    return run_one(args.command, args.config, args.out, args.seed, args.threads, args.assertions)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

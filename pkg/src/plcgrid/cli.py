"""Command-line interface.

Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 missing upstream
artifact, 4 acceptance failure. Log verbosity comes from ``PLCGRID_LOG``
(DEBUG, INFO, WARNING, ...).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, RunConfig, load_config
from .core import PLCError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DEPENDENCY, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4

log = logging.getLogger("plcgrid")


def _setup_logging():
    level = os.environ.get("PLCGRID_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (overrides 'output' in the config)")
    common.add_argument("--seed", type=int, help="overrides 'seed' in the config")

    p = argparse.ArgumentParser(prog="plcgrid", description="Simulated PLC grid monitoring pipelines.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a grid and write the dataset")
    pp = sub.add_parser("pipeline", parents=[common], help="run one analysis stage")
    pp.add_argument("stage", choices=["states", "anomaly", "joints", "topo", "radial"])
    pa = sub.add_parser("acceptance", parents=[common], help="run the acceptance suite")
    pa.add_argument("--only", help="comma-separated criterion numbers, e.g. 2,3")
    pr = sub.add_parser("render", parents=[common], help="render figures")
    pr.add_argument("what", choices=["radial"])
    pr.add_argument("--connection", help="connection id, e.g. 0-1")
    pr.add_argument("--period", choices=["day", "year"])
    pr.add_argument("--file", help="target SVG path")
    return p


def _config(args) -> RunConfig:
    return load_config(args.config, args.seed)


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out or cfg.output)


def _print(obj):
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    from . import pipeline

    try:
        if args.command == "acceptance":
            from .acceptance import run_acceptance, write_results

            cfg = load_config(args.config, args.seed) if args.config else None
            seed = cfg.seed if cfg else (args.seed or 0)
            only = [int(x) for x in args.only.split(",")] if args.only else None
            results = run_acceptance(only=only, seed=seed, log=lambda line: print(line, flush=True))
            out = Path(args.out or (cfg.output if cfg else "out"))
            path = write_results(results, out / "acceptance.json")
            failed = [r["id"] for r in results if not r["passed"]]
            print(f"results: {path}")
            if failed:
                print(f"FAILED criteria: {', '.join(map(str, failed))}")
                return EXIT_ACCEPTANCE
            return EXIT_OK

        cfg = _config(args)
        out = _out(args, cfg)
        if args.command == "simulate":
            rep = pipeline.cmd_simulate(cfg, out)
            print(f"simulated {rep['n_links']} links ({rep['n_direct_links']} direct), {rep['n_series']} series, "
                  f"{rep['n_timesteps']} timesteps, {len(rep['events'])} events -> {out / rep['dataset_dir']}")
        elif args.command == "pipeline":
            rep = pipeline.RUNNERS[args.stage](cfg, out)
            _print({k: v for k, v in rep.items() if k not in ("loss_curve", "filter_loss_curve", "sections", "state_counts")})
        elif args.command == "render":
            target = Path(args.file) if args.file else None
            info = pipeline.render_connection(cfg, out, args.connection, args.period, target)
            _print(info)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.DependencyError as exc:
        print(f"missing dependency: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PLCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

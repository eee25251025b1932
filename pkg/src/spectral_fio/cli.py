"""Command-line entry point.

Verbs: ``run``, ``list-scenarios``, ``validate-config``, ``clean-cache``.
Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import PIPELINES, SCENARIOS, config_from_dict, default_config, dump_config, load_config
from .errors import ConfigError
from .io.reporting import RunManifest, write_json
from .spectral import EigenCache

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("spectral_fio")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-fio", description="Reproduction pipelines for spectral-function FIO checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run pipelines and write reports")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="YAML experiment config")
    src.add_argument("--scenario", choices=sorted(SCENARIOS), help="use a registered scenario with its defaults")
    run.add_argument("--pipeline", choices=[*PIPELINES, "all"], default="all")
    run.add_argument("--out", type=Path, help="output directory (default: <output_dir>/<scenario>)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes over the h ladder")
    run.add_argument("--seed", type=int, help="override the config seed")

    sub.add_parser("list-scenarios", help="print registered scenarios")

    val = sub.add_parser("validate-config", help="check a config file and print the resolved config")
    val.add_argument("--config", type=Path, required=True)

    cc = sub.add_parser("clean-cache", help="remove cached eigen-decompositions")
    cc.add_argument("--config", type=Path, help="take cache_dir from this config")
    cc.add_argument("--cache-dir", type=Path, help="cache directory to clear")
    return p


def _run(args) -> int:
    cfg = load_config(args.config) if args.config else default_config(args.scenario).validate()
    if args.seed is not None:
        data = cfg.to_dict()
        data["seed"] = args.seed
        cfg = config_from_dict(data)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    names = [p for p in PIPELINES if p in cfg.pipelines] if args.pipeline == "all" else [args.pipeline]
    out = args.out or Path(cfg.output_dir) / cfg.scenario
    out.mkdir(parents=True, exist_ok=True)

    from .pipelines import run_pipeline

    manifest = RunManifest(cfg.digest(), cfg.scenario, cfg.seed)
    config_path = out / "config.yaml"
    dump_config(cfg, config_path)
    paths = [config_path]
    reports = []
    for name in names:
        log.info("pipeline %s on %s", name, cfg.scenario)
        start = time.perf_counter()
        rep = run_pipeline(name, cfg, out, args.jobs)
        log.info("pipeline %s: %s (%.1f s)", name, rep.status, time.perf_counter() - start)
        paths.extend(rep.artifacts)
        paths.append(write_json(out / f"report_{name}.json", rep.to_dict()))
        manifest.pipelines[name] = rep.status
        reports.append(rep)
        for c in rep.checks:
            print(f"[{name}] {'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.6g} {c.op} {c.threshold}")
        if rep.status in ("skipped", "error"):
            print(f"[{name}] {rep.status.upper()}: {rep.reason}")
    manifest.record(out, paths)
    manifest.finish()
    manifest.write(out / "manifest.json")
    print(f"manifest: {out / 'manifest.json'}")
    if any(r.status == "error" for r in reports):
        return EXIT_NUMERICAL
    return EXIT_PASS if all(r.ok for r in reports) else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.verb == "run":
            return _run(args)
        if args.verb == "list-scenarios":
            for name in sorted(SCENARIOS):
                print(f"{name}: {SCENARIOS[name][1]}")
            return EXIT_PASS
        if args.verb == "validate-config":
            print(dump_config(load_config(args.config)), end="")
            return EXIT_PASS
        if args.verb == "clean-cache":
            directory = args.cache_dir or (load_config(args.config).cache_dir if args.config else default_config("free_1d").cache_dir)
            print(f"removed {EigenCache(directory).clear()} files from {directory}")
            return EXIT_PASS
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command line client: ``dnslab <task> --config cfg.json [overrides]``.

Runs in-process by default; ``--server URL`` posts the config to a running
service instead.  Exit status is 1 when any criterion fails, 2 on errors.
"""
from __future__ import annotations

import argparse
import json
import sys

from .tasks import TASKS, ExperimentConfig, TaskError, dumps, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dnslab", description="(dbar, s)-Neumann laboratory")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="JSON experiment config (the task argument wins)")
    p.add_argument("--s", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--h", type=float, nargs="+", help="grid spacing(s)")
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--dump-ops", help="directory for Matrix Market / node dumps")
    p.add_argument("--csv", help="write the sweep series as CSV")
    p.add_argument("--server", help="service base URL, e.g. http://127.0.0.1:8000")
    p.add_argument("--quiet", action="store_true", help="print only the summary lines")
    return p


def make_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    data["task"] = args.task
    for key in ("s", "q", "seed", "out", "csv"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.h:
        data["grid_sizes"] = args.h
    if args.dump_ops:
        data["dump_ops"] = args.dump_ops
    if args.tol:
        tols = dict(data.get("tolerances", {}))
        for item in args.tol:
            name, _, value = item.partition("=")
            tols[name] = float(value)
        data["tolerances"] = tols
    return ExperimentConfig.model_validate(data)


def _remote(cfg: ExperimentConfig, url: str) -> dict:
    import httpx

    resp = httpx.post(url.rstrip("/") + "/run", json=cfg.model_dump(), timeout=None)
    if resp.status_code != 200:
        raise TaskError(f"server returned {resp.status_code}: {resp.text}")
    report = resp.json()
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(dumps(report))
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        report = _remote(cfg, args.server) if args.server else run(cfg)
    except (TaskError, ValueError, OSError) as exc:
        print(f"dnslab: error: {exc}", file=sys.stderr)
        return 2
    for c in report["criteria"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}: {c['value']} (threshold {c['threshold']})")
    if not args.quiet and not cfg.out:
        print(dumps(report))
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())

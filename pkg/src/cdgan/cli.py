"""Command-line client.

`run` and `compare` execute in process by default; pass --server to talk to
a remote `cdgan serve` instance over HTTP instead.  Either way the work goes
through the same request/response schemas.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .config import apply_overrides, load_config
from .errors import CdganError, ValidationError
from .experiment import compare as compare_files
from .service.app import OUT_ROOT_ENV, create_app
from .service.jobs import JobManager


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdgan", description="contrastive disentanglement lab")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configured experiment")
    run.add_argument("config", help="path to a config file")
    run.add_argument("--seed", type=int, default=None, help="override train.seed")
    run.add_argument("--steps", type=int, default=None, help="override train.steps")
    run.add_argument("--out", default=None, help="override output.dir")
    run.add_argument("--server", default=None, metavar="URL",
                     help="submit to a remote service instead of running locally")

    cmp_ = sub.add_parser("compare", help="tabulate report.json files")
    cmp_.add_argument("reports", nargs="+", help="report.json paths")
    cmp_.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    cmp_.add_argument("--server", default=None, metavar="URL")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _print_summary(payload: dict) -> None:
    rep = payload["report"]
    print(f"{payload['name']}: acc={rep['acc']:.4f} nmi={rep['nmi']:.4f} "
          f"ari={rep['ari']:.4f} (n_test={rep['n_test']}, runs={rep['runs']})")


def _watch(get_status) -> dict:
    """Poll a status callable until the job leaves queued/running."""
    last_printed = -1
    while True:
        snap = get_status()
        if snap["status"] not in ("queued", "running"):
            return snap
        total = max(snap["total_steps"], 1)
        decile = (10 * snap["step"]) // total
        if decile > last_printed and snap["step"] > 0:
            last_printed = decile
            print(f"step {snap['step']}/{snap['total_steps']}", file=sys.stderr)
        time.sleep(0.2)


def _run_local(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, steps=args.steps, out=args.out,
                          out_root=os.environ.get(OUT_ROOT_ENV))
    manager = JobManager()
    job = manager.submit(cfg)
    snap = _watch(job.snapshot)
    if snap["status"] != "done":
        print(f"error: {snap['error']}", file=sys.stderr)
        return 1
    manager.wait(job.id)
    _print_summary(job.payload)
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _run_remote(args) -> int:
    import httpx

    body = {"config_text": Path(args.config).read_text(), "seed": args.seed,
            "steps": args.steps, "out": args.out}
    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=30.0) as client:
        created = client.post("/experiments", json=body)
        if created.status_code != 202:
            print(f"error: {created.json().get('detail', created.text)}",
                  file=sys.stderr)
            return 1
        job_id = created.json()["id"]
        print(f"submitted {job_id} to {base}", file=sys.stderr)

        def get_status():
            resp = client.get(f"/experiments/{job_id}")
            resp.raise_for_status()
            return resp.json()

        snap = _watch(get_status)
        if snap["status"] != "done":
            print(f"error: {snap['error']}", file=sys.stderr)
            return 1
        report = client.get(f"/experiments/{job_id}/report")
        report.raise_for_status()
        _print_summary(report.json()["payload"])
        print(f"artifacts in {snap['out_dir']} (on the server)")
    return 0


def _cmd_run(args) -> int:
    if args.config and not Path(args.config).exists():
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    if args.server:
        return _run_remote(args)
    return _run_local(args)


def _cmd_compare(args) -> int:
    if args.server:
        import httpx

        payloads, pre_warnings = [], []
        for path in args.reports:
            try:
                payloads.append(json.loads(Path(path).read_text()))
            except (OSError, json.JSONDecodeError) as exc:
                pre_warnings.append(f"skipping {path}: {exc}")
        with httpx.Client(base_url=args.server.rstrip("/"), timeout=30.0) as client:
            resp = client.post("/compare", json={"reports": payloads,
                                                 "format": args.format})
            if resp.status_code != 200:
                print(f"error: {resp.json().get('detail', resp.text)}",
                      file=sys.stderr)
                return 1
            body = resp.json()
        table, warnings = body["table"], pre_warnings + body["warnings"]
    else:
        table, warnings = compare_files(args.reports, fmt=args.format)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(table, end="")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "serve": _cmd_serve}
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CdganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line client for the spindlewatch service.

The CLI speaks only the HTTP API. By default it mounts the service in-process
against the --out workspace; --server targets a running instance instead.

    spindlewatch run --config demo --seed 1 --out ./out
    spindlewatch report --config demo --out ./out
    spindlewatch stats --out ./out
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx
import yaml

DEFAULT_OUT = "spindlewatch_out"


def _client(args) -> httpx.AsyncClient:
    if args.server:
        return httpx.AsyncClient(base_url=args.server.rstrip("/"), timeout=None)
    from .service.app import create_app

    transport = httpx.ASGITransport(app=create_app(args.out))
    return httpx.AsyncClient(transport=transport, base_url="http://spindlewatch",
                             timeout=None)


def _load_yaml(path: str) -> dict:
    try:
        return yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SystemExit(f"spindlewatch: config file '{path}' not found")
    except yaml.YAMLError as exc:
        raise SystemExit(f"spindlewatch: cannot parse '{path}': {exc}")


def _config_payload(arg: str) -> dict:
    """Inline a config file so the request is self-contained; 'demo' stays a name."""
    if arg == "demo":
        return {"config_name": "demo"}
    doc = _load_yaml(arg)
    scenario = doc.get("scenario")
    if isinstance(scenario, str):
        scenario_path = Path(scenario)
        if not scenario_path.is_absolute():
            scenario_path = Path(arg).parent / scenario_path
        doc = dict(doc, scenario=_load_yaml(str(scenario_path)))
    return {"config": doc}


def _scenario_payload(arg: str) -> dict:
    if arg == "demo":
        from .config import demo_config_mapping

        return {"scenario": demo_config_mapping()["scenario"]}
    return {"scenario": _load_yaml(arg)}


def _fail(response: httpx.Response) -> int:
    try:
        detail = response.json().get("detail", response.text)
    except (ValueError, AttributeError):
        detail = response.text
    print(f"spindlewatch: {detail}", file=sys.stderr)
    return 1


async def _cmd_generate(args) -> int:
    payload = _scenario_payload(args.config)
    payload["raw_dump"] = args.raw
    if args.seed is not None:
        payload["seed"] = args.seed
    async with _client(args) as client:
        response = await client.post("/generate", json=payload)
        if response.status_code != 200:
            return _fail(response)
        body = response.json()
        print(f"generated {body['blocks']} blocks, {body['context_samples']} context samples"
              + (f", {body['raw_rows']} raw rows dumped" if body["raw_rows"] else ""))
    return 0


async def _cmd_run(args) -> int:
    payload = _config_payload(args.config)
    if args.seed is not None:
        payload["seed"] = args.seed
    async with _client(args) as client:
        response = await client.post("/run", json=payload)
        if response.status_code != 200:
            return _fail(response)
        body = response.json()
        print(f"run complete: seed={body['seed']} blocks={body['blocks']} "
              f"periods={body['periods']} indicators={body['indicators']}")
        for stream, rows in sorted(body["stream_rows"].items()):
            if rows:
                print(f"  {stream}: {rows} rows, {body['stream_bytes'][stream]} bytes")
        for path in body["report_paths"]:
            print(f"  report: {path}")
        for path in body["outbox_paths"]:
            print(f"  outbox: {path}")
    return 0


async def _cmd_report(args) -> int:
    payload = _config_payload(args.config)
    async with _client(args) as client:
        response = await client.post("/report", json=payload)
        if response.status_code != 200:
            return _fail(response)
        body = response.json()
        print(f"indicator {body['indicator_id']}")
        for kpi_id, results in sorted(body["kpi_results"].items()):
            ranked = sorted(results.items(), key=lambda kv: -kv[1])
            shown = ", ".join(f"{entity}={value:g}" for entity, value in ranked)
            print(f"  {kpi_id}: {shown if shown else '(no data)'}")
        for path in body["report_paths"]:
            print(f"  report: {path}")
        print(f"  outbox: {body['outbox_path']}")
    return 0


async def _cmd_stats(args) -> int:
    async with _client(args) as client:
        if args.stream:
            response = await client.get(f"/stats/{args.stream}")
            if response.status_code != 200:
                return _fail(response)
            body = response.json()
            print(f"{args.stream}: {body['rows']} rows, {body['bytes']} bytes")
            return 0
        response = await client.get("/stats")
        if response.status_code != 200:
            return _fail(response)
        for stream, st in sorted(response.json()["streams"].items()):
            print(f"{stream}: {st['rows']} rows, {st['bytes']} bytes")
    return 0


async def _cmd_learn_thresholds(args) -> int:
    payload = {"min_samples": args.min_samples}
    if args.criteria:
        payload["criteria"] = args.criteria
    async with _client(args) as client:
        response = await client.post("/thresholds/learn", json=payload)
        if response.status_code != 200:
            return _fail(response)
        for t in response.json()["thresholds"]:
            print(f"{t['criterion_id']}: {t['value']:g} ({t['learned_from']})")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(args.out), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spindlewatch",
        description="Machining telemetry aggregation: monitoring criteria, smart data, "
                    "KPIs and decision-aid reports.")
    parser.add_argument("--out", default=DEFAULT_OUT,
                        help=f"workspace directory (default: {DEFAULT_OUT})")
    parser.add_argument("--server", default=None,
                        help="URL of a running spindlewatch service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a scenario's telemetry streams")
    p.add_argument("--config", required=True, help="scenario YAML file, or 'demo'")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--raw", action="store_true", help="also dump raw signal blocks")

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("--config", required=True, help="pipeline config YAML file, or 'demo'")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    p = sub.add_parser("report", help="instantiate KPIs over stored smart data and report")
    p.add_argument("--config", required=True, help="pipeline config YAML file, or 'demo'")

    p = sub.add_parser("stats", help="show store row and byte counts")
    p.add_argument("--stream", default=None, help="single stream to show")

    p = sub.add_parser("learn-thresholds", help="learn critical thresholds from stored data")
    p.add_argument("--criteria", nargs="*", default=None,
                   help="criteria to learn (default: vrms nh unbalance bearing)")
    p.add_argument("--min-samples", type=int, default=1000,
                   help="minimum pooled samples required per criterion")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8437)

    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "report": _cmd_report,
    "stats": _cmd_stats,
    "learn-thresholds": _cmd_learn_thresholds,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:        # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)

    if args.command == "serve":
        return _cmd_serve(args)
    try:
        return asyncio.run(_COMMANDS[args.command](args))
    except SystemExit as exc:
        if exc.args and isinstance(exc.args[0], str):
            print(exc.args[0], file=sys.stderr)
            return 1
        return int(exc.code or 0)
    except httpx.HTTPError as exc:
        print(f"spindlewatch: cannot reach service: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

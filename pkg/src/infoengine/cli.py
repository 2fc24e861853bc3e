"""``ie`` command line: a thin client of the HTTP API.

With ``--url`` (or ``IE_URL``) commands go to a running server; otherwise the
API is served in process over the engine in ``IE_DATA_DIR``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import httpx

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
URL_ENV = "IE_URL"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class InProcessTransport(httpx.BaseTransport):
    """Synchronous httpx transport calling an ASGI app in this process."""

    def __init__(self, app):
        self._asgi = httpx.ASGITransport(app=app, raise_app_exceptions=False)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def roundtrip() -> httpx.Response:
            req = httpx.Request(request.method, request.url, headers=request.headers,
                                content=request.read())
            resp = await self._asgi.handle_async_request(req)
            return httpx.Response(resp.status_code, headers=resp.headers, content=await resp.aread())

        return asyncio.run(roundtrip())


def make_client(url: str | None, app=None) -> httpx.Client:
    if url:
        return httpx.Client(base_url=url, timeout=60.0)
    if app is None:
        from infoengine.api.app import create_app

        app = create_app()
    return httpx.Client(transport=InProcessTransport(app), base_url="http://engine")


def _call(client, method: str, path: str, **kwargs) -> httpx.Response:
    try:
        resp = client.request(method, path, **kwargs)
    except httpx.HTTPError as exc:
        raise CliError(f"cannot reach server: {exc}", EXIT_RUNTIME) from None
    if resp.status_code >= 400:
        try:
            body = resp.json()
            detail = body.get("detail", body)
            kind = body.get("error", "")
        except ValueError:
            detail, kind = resp.text, ""
        code = EXIT_VALIDATION if resp.status_code in (400, 404, 422) else EXIT_RUNTIME
        raise CliError(f"{kind + ': ' if kind else ''}{detail}", code)
    return resp


def _read_file(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_VALIDATION) from None


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


# -- commands ---------------------------------------------------------------


def cmd_register(client, args):
    text = _read_file(args.file)
    base = str(Path(args.file).resolve().parent)
    records = _call(client, "POST", "/devices", json={"document": text, "baseDir": base}).json()
    for r in records:
        print(f"{r['deviceId']}\t{r['descriptor']['name']}\t{len(r['schedule'])} schedule entries")


def cmd_devices(client, args):
    _print_json(_call(client, "GET", "/devices").json())


def cmd_suspend(client, args):
    r = _call(client, "POST", f"/devices/{args.device_id}/suspend").json()
    print(f"{r['deviceId']}\t{r['status']}")


def cmd_run(client, args):
    _print_json(_call(client, "POST", "/run", json={"until": args.until, "metadata": args.metadata}).json())


def cmd_topics(client, args):
    for t in _call(client, "GET", "/topics").json():
        print(f"{t['name']}\t{t['earliestOffset']}\t{t['nextOffset']}\t{t['retentionMillis']}")


def cmd_tail(client, args):
    params = {"topic": args.topic, "maxCount": args.max}
    if args.from_offset is not None:
        params["fromOffset"] = args.from_offset
    for e in _call(client, "GET", "/records", params=params).json():
        print(json.dumps(e))


def cmd_query(client, args):
    params = {"topic": args.topic, "from": args.t0, "to": args.t1, "table": args.table}
    for row in _call(client, "GET", "/query", params=params).json():
        print(json.dumps(row))


def cmd_trajectory(client, args):
    topics = [t for t in args.topics.split(",") if t]
    fmt = "json" if args.out and args.out.endswith(".json") else "csv"
    body = {"topics": topics, "t0": args.t0, "t1": args.t1, "gridMillis": args.grid,
            "method": args.method, "format": fmt, "fromTables": args.from_tables}
    resp = _call(client, "POST", "/trajectory", json=body)
    if args.out:
        try:
            Path(args.out).write_bytes(resp.content)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_RUNTIME) from None
        print(f"wrote {len(resp.content)} bytes to {args.out}")
    else:
        sys.stdout.write(resp.text)


def cmd_estimate(client, args):
    text = _read_file(args.file)
    base = str(Path(args.file).resolve().parent)
    result = _call(client, "POST", "/estimate", json={
        "document": text, "baseDir": base, "sampleBytes": args.sample_bytes}).json()
    print(result["summary"])
    if result.get("stateSpace") and "total" in result["stateSpace"]:
        ss = result["stateSpace"]
        per = ", ".join(f"{k}={v}" for k, v in ss["perDevice"].items())
        print(f"state space dimension {ss['total']} ({per})")


def cmd_pipeline_run(client, args):
    try:
        spec = json.loads(_read_file(args.file))
    except json.JSONDecodeError as exc:
        raise CliError(f"{args.file} is not JSON: {exc}", EXIT_VALIDATION) from None
    body = {"spec": spec}
    if args.t0 is not None:
        body["from"] = args.t0
    if args.t1 is not None:
        body["to"] = args.t1
    _print_json(_call(client, "POST", "/pipelines/run", json=body).json())


def cmd_bench(client, args):
    body = {"scenario": args.scenario, "n": args.n, "m": args.m, "k": args.k}
    print(json.dumps(_call(client, "POST", "/bench", json=body).json()))


def cmd_serve(_client, args):
    import uvicorn

    from infoengine.api.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ie", description="Information engine client")
    p.add_argument("--url", default=os.environ.get(URL_ENV),
                   help="server base URL (default: in-process engine over IE_DATA_DIR)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("register", help="register devices from a query-model document")
    s.add_argument("file")
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("devices", help="list registered devices")
    s.set_defaults(func=cmd_devices)

    s = sub.add_parser("suspend", help="suspend a device")
    s.add_argument("device_id")
    s.set_defaults(func=cmd_suspend)

    s = sub.add_parser("run", help="run the fetch scheduler up to a virtual time")
    s.add_argument("--until", type=int, required=True, metavar="MS")
    s.add_argument("--metadata", choices=["inline", "reference"], default="inline")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("topics", help="list topics with offsets and retention")
    s.set_defaults(func=cmd_topics)

    s = sub.add_parser("tail", help="print envelopes of a topic")
    s.add_argument("topic")
    s.add_argument("--from-offset", type=int, default=None)
    s.add_argument("--max", type=int, default=20)
    s.set_defaults(func=cmd_tail)

    s = sub.add_parser("query", help="envelopes (or table rows) in a source-time window")
    s.add_argument("topic")
    s.add_argument("--from", dest="t0", type=int, required=True)
    s.add_argument("--to", dest="t1", type=int, required=True)
    s.add_argument("--table", action="store_true", help="query a serving table instead")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("trajectory", help="assemble an aligned state trajectory")
    s.add_argument("--topics", required=True, help="comma separated")
    s.add_argument("--from", dest="t0", type=int, required=True)
    s.add_argument("--to", dest="t1", type=int, required=True)
    s.add_argument("--grid", type=int, required=True, metavar="MS")
    s.add_argument("--method", choices=["linear", "hold"], default="linear")
    s.add_argument("--from-tables", action="store_true")
    s.add_argument("--out", help="output file (.csv or .json); stdout otherwise")
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("estimate", help="data volume and state-space size of a query model")
    s.add_argument("file")
    s.add_argument("--sample-bytes", type=int, default=1024)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("pipeline", help="transformation pipelines")
    psub = s.add_subparsers(dest="pipeline_command", required=True)
    r = psub.add_parser("run", help="run a pipeline over an ingest-time window")
    r.add_argument("file")
    r.add_argument("--from", dest="t0", type=int, default=None)
    r.add_argument("--to", dest="t1", type=int, default=None)
    r.set_defaults(func=cmd_pipeline_run)

    s = sub.add_parser("bench", help="source-load bench, scenario A (direct) or B (buffered)")
    s.add_argument("--scenario", choices=["A", "B"], required=True)
    s.add_argument("-n", type=int, required=True, help="sources")
    s.add_argument("-m", type=int, required=True, help="sinks")
    s.add_argument("-k", type=int, required=True, help="ticks")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("serve", help="serve the HTTP API")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None, app=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    if args.command == "serve":
        args.func(None, args)
        return EXIT_OK
    try:
        with make_client(args.url, app) as client:
            args.func(client, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Single entry point: proxy, backend, replay, rewrite, evaluate, verify,
import, and report subcommands. Wiring and flag parsing only; everything
substantive lives in the modules this file calls into.

Exit codes: 0 success, 1 operational failure, 2 usage error. Diagnostics
go to stderr; machine output goes to stdout or the --out file.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import json
import os
import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import httpx

from .backend import build_backend_app
from .ca import ensure_ca
from .engine import HealingContext, heal
from .errorintel import InvalidRule, load_library_rules
from .evaluate import PageMismatch, evaluate_pairs
from .harimport import HarImportError, import_har, parse_error_entry
from .intercept import ForwardProxyServer
from .model import (
    ContentKind,
    Resource,
    StrategyActivation,
    StrategyKind,
    STRATEGY_DISPLAY_NAMES,
    error_identity_key,
)
from .proxy import (
    DEFAULT_MAX_REWRITE_BODY_BYTES,
    ProxyConfig,
    build_replay_app,
    build_reverse_app,
)
from .store import BackendStore, StoreError
from .trace import CorruptArchive, TraceArchive, load_archive

BACKEND_ENV_VAR = "SELF_HEAL_BACKEND"

_STRATEGY_FLAGS = {
    "https-redirector": StrategyKind.HttpsRedirector,
    "library-injector": StrategyKind.LibraryInjector,
    "html-element-creator": StrategyKind.HtmlElementCreator,
    "object-creator": StrategyKind.ObjectCreator,
    "line-skipper": StrategyKind.LineSkipper,
}


class UsageError(Exception):
    """Bad flag combination; reported with the flag table, exit code 2."""


class OperationalError(Exception):
    """Runtime failure (I/O, network, bad input data); exit code 1."""


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own errors; route them through the same
    # print-the-flag-table path as UsageError instead.
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _parse_listen(value: str) -> tuple:
    host, sep, port = value.rpartition(":")
    if not sep:
        host, port = "", value
    try:
        number = int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"listen address must be HOST:PORT, got {value!r}"
        ) from None
    if not 0 < number < 65536:
        raise argparse.ArgumentTypeError(f"port out of range: {number}")
    return (host or "127.0.0.1", number)


def _backend_url(flag_value: Optional[str]) -> Optional[str]:
    return os.environ.get(BACKEND_ENV_VAR) or flag_value


def _emit(text_or_bytes, out: Optional[str]) -> None:
    data = (
        text_or_bytes
        if isinstance(text_or_bytes, bytes)
        else text_or_bytes.encode("utf-8")
    )
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()


# -- subcommand handlers ---------------------------------------------------


def _serve_asgi(app, host: str, port: int) -> None:
    # Separated so tests can intercept instead of binding a socket.
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


def _serve_forward(config: ProxyConfig, ca) -> None:
    async def _run() -> None:
        server = ForwardProxyServer(config, ca=ca)
        await server.start()
        host, port = server.address
        print(f"forward proxy listening on {host}:{port}", file=sys.stderr)
        try:
            await server.serve_forever()
        finally:
            await server.stop()

    asyncio.run(_run())


def _proxy_config(args: argparse.Namespace, mode: str) -> ProxyConfig:
    host, port = args.listen
    config = ProxyConfig(
        listen_host=host,
        listen_port=port,
        mode=mode,
        origin=getattr(args, "origin", None),
        backend_url=_backend_url(getattr(args, "backend", None)),
        archive_path=Path(args.archive) if getattr(args, "archive", None) else None,
        tls_interception=bool(getattr(args, "ca_cert", None) or getattr(args, "ca_key", None)),
        ca_cert_path=Path(args.ca_cert) if getattr(args, "ca_cert", None) else None,
        ca_key_path=Path(args.ca_key) if getattr(args, "ca_key", None) else None,
        max_rewrite_body_bytes=getattr(args, "max_body", None) or DEFAULT_MAX_REWRITE_BODY_BYTES,
        library_rules_path=Path(args.library_rules) if getattr(args, "library_rules", None) else None,
        monitor_snippet_path=Path(args.monitor_snippet) if getattr(args, "monitor_snippet", None) else None,
        monitor_enabled=not getattr(args, "no_monitor", False),
        heal_enabled=getattr(args, "heal", True),
    )
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return config


def _cmd_proxy(args: argparse.Namespace) -> int:
    config = _proxy_config(args, args.mode)
    if config.mode == "reverse":
        _serve_asgi(build_reverse_app(config), config.listen_host, config.listen_port)
    elif config.mode == "replay":
        archive = _load_archive_or_die(config.archive_path)
        _serve_asgi(
            build_replay_app(config, archive), config.listen_host, config.listen_port
        )
    else:
        ca = None
        if config.tls_interception:
            ca = ensure_ca(config.ca_cert_path, config.ca_key_path)
        _serve_forward(config, ca)
    return 0


def _cmd_backend(args: argparse.Namespace) -> int:
    host, port = args.listen
    try:
        store = BackendStore(Path(args.store) if args.store else None)
    except (OSError, StoreError) as exc:
        raise OperationalError(f"cannot open store: {exc}") from None
    _serve_asgi(build_backend_app(store), host, port)
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    host, port = args.listen
    config = ProxyConfig(
        listen_host=host,
        listen_port=port,
        mode="replay",
        archive_path=Path(args.archive),
        heal_enabled=args.heal,
        monitor_enabled=args.heal,
    )
    archive = _load_archive_or_die(config.archive_path)
    _serve_asgi(build_replay_app(config, archive), host, port)
    return 0


def _load_archive_or_die(path: Optional[Path]) -> TraceArchive:
    assert path is not None
    try:
        return load_archive(path)
    except CorruptArchive as exc:
        raise OperationalError(f"corrupt archive: {exc}") from None
    except OSError as exc:
        raise OperationalError(f"cannot read archive: {exc}") from None


def _load_error_report(path: Path) -> list:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OperationalError(f"cannot read error report: {exc}") from None
    except json.JSONDecodeError as exc:
        raise OperationalError(f"error report is not valid JSON: {exc}") from None
    items = raw if isinstance(raw, list) else [raw]
    try:
        return [parse_error_entry(item) for item in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise OperationalError(f"malformed error report: {exc}") from None


def _infer_content_type(path: Path, body: bytes) -> str:
    suffix = path.suffix.lower()
    if suffix in (".html", ".htm"):
        return "text/html; charset=utf-8"
    if suffix in (".js", ".mjs"):
        return "application/javascript"
    head = body[:2048].lstrip().lower()
    if head.startswith(b"<!doctype") or head.startswith(b"<html"):
        return "text/html; charset=utf-8"
    raise OperationalError(
        f"cannot infer the content kind of {path.name}; use a .html or .js file"
    )


def _cmd_rewrite(args: argparse.Namespace) -> int:
    source_path = Path(args.file)
    try:
        body = source_path.read_bytes()
    except OSError as exc:
        raise OperationalError(f"cannot read input file: {exc}") from None
    errors = _load_error_report(Path(args.error))
    if not errors:
        raise OperationalError("error report contains no errors")
    strategy = _STRATEGY_FLAGS[args.strategy]
    content_type = _infer_content_type(source_path, body)

    page_url = next((e.page_url for e in errors if e.page_url), None)
    page_url = page_url or source_path.resolve().as_uri()
    if content_type.startswith("text/html"):
        url = page_url
    else:
        url = next(
            (
                e.failure_point.resource_url
                for e in errors
                if e.failure_point and e.failure_point.resource_url
            ),
            None,
        ) or source_path.resolve().as_uri()

    rules = None
    if args.library_rules:
        try:
            rules = tuple(load_library_rules(args.library_rules))
        except (OSError, InvalidRule) as exc:
            raise OperationalError(f"cannot load library rules: {exc}") from None

    resource = Resource.build(
        url=url, headers=[("content-type", content_type)], body=body
    )
    ctx = HealingContext(
        request_url=url,
        response=resource,
        known_errors=tuple(errors),
        page_uuid=str(uuid.uuid4()),
        library_rules=rules,
        inject_monitor=False,
        healed_at=_now(),
    )
    healed, activations = heal(ctx)
    applied = {a.strategy for a in activations}
    if strategy not in applied:
        names = ", ".join(
            sorted(STRATEGY_DISPLAY_NAMES[s] for s in applied)
        ) or "none"
        raise OperationalError(
            f"strategy {args.strategy} was not applied to this input "
            f"(applied: {names})"
        )
    _emit(healed.body, args.out)
    return 0


def _archive_names(root: Path) -> list:
    if not root.is_dir():
        raise OperationalError(f"not a directory: {root}")
    names = [
        child.name
        for child in sorted(root.iterdir())
        if (child / "manifest.json").is_file()
    ]
    if not names:
        raise OperationalError(f"no trace archives found under {root}")
    return names


def _load_activations(path: Path) -> list:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OperationalError(f"cannot read activations: {exc}") from None
    except json.JSONDecodeError as exc:
        raise OperationalError(f"activations file is not valid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise OperationalError("activations file must be a JSON list")
    try:
        return [StrategyActivation.from_dict(item) for item in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise OperationalError(f"malformed activation record: {exc}") from None


def _cmd_evaluate(args: argparse.Namespace) -> int:
    original_root = Path(args.original_dir)
    healed_root = Path(args.healed_dir)
    activations = _load_activations(Path(args.activations)) if args.activations else []

    triples = []
    for name in _archive_names(original_root):
        healed_path = healed_root / name
        if not (healed_path / "manifest.json").is_file():
            raise OperationalError(f"no healed counterpart for archive {name!r}")
        original = _load_archive_or_die(original_root / name)
        healed = _load_archive_or_die(healed_path)
        original_keys = {error_identity_key(e) for e in original.errors}
        applied = sum(1 for a in activations if a.target_error in original_keys)
        triples.append((original.trace, healed.trace, applied))

    try:
        report = evaluate_pairs(triples, activations)
    except PageMismatch as exc:
        raise OperationalError(str(exc)) from None

    lines = []
    for section, rows in (
        ("error_type", report.type_rows),
        ("outcome", report.outcome_rows),
        ("strategy", report.strategy_rows),
    ):
        for row in rows:
            record = {"section": section, **dataclasses.asdict(row)}
            lines.append(
                json.dumps(
                    record,
                    sort_keys=True,
                    separators=(",", ":"),
                    default=lambda value: value.value,  # enums
                )
            )
    text = "\n".join(lines) + "\n\n" + report.render() + "\n"
    _emit(text, args.out)
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    archive = _load_archive_or_die(Path(args.archive))
    print(
        f"ok: {archive.page_url} "
        f"({len(archive.trace.resources)} resources, {len(archive.errors)} errors)"
    )
    return 0


def _cmd_import(args: argparse.Namespace) -> int:
    try:
        archive = import_har(
            Path(args.source),
            Path(args.dest),
            page_url=args.page_url,
            errors_path=Path(args.errors) if args.errors else None,
        )
    except (HarImportError, OSError) as exc:
        raise OperationalError(str(exc)) from None
    print(
        f"imported {len(archive.trace.resources)} resources for "
        f"{archive.page_url} into {args.dest}"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    url = _backend_url(args.backend)
    if not url:
        raise UsageError(
            f"a backend URL is required (--backend or ${BACKEND_ENV_VAR})"
        )
    try:
        response = httpx.get(url.rstrip("/") + "/stats/summary", timeout=10.0)
        response.raise_for_status()
    except httpx.HTTPError as exc:
        raise OperationalError(f"backend unreachable: {exc}") from None
    _emit(response.text, args.out)
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="webheal",
        description="Self-healing proxy for client-side JavaScript errors.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def listen_flag(p: _Parser, default: str) -> None:
        p.add_argument(
            "--listen",
            type=_parse_listen,
            default=_parse_listen(default),
            metavar="HOST:PORT",
            help=f"listen address (default {default})",
        )

    proxy = sub.add_parser("proxy", help="run the intercepting proxy")
    listen_flag(proxy, "127.0.0.1:8888")
    proxy.add_argument("--mode", choices=("reverse", "forward", "replay"), default="reverse")
    proxy.add_argument("--origin", help="upstream origin URL (reverse mode)")
    proxy.add_argument("--backend", help=f"backend service URL (${BACKEND_ENV_VAR} overrides)")
    proxy.add_argument("--archive", help="trace archive directory (replay mode)")
    proxy.add_argument("--ca-cert", help="CA certificate path (enables TLS interception)")
    proxy.add_argument("--ca-key", help="CA private key path")
    proxy.add_argument("--max-body", type=int, help="largest body to rewrite, in bytes")
    proxy.add_argument("--no-monitor", action="store_true", help="skip monitor injection")
    proxy.add_argument("--library-rules", help="library rule file")
    proxy.add_argument("--monitor-snippet", help="monitor snippet file")
    proxy.set_defaults(handler=_cmd_proxy)

    backend = sub.add_parser("backend", help="run the error/activation store service")
    listen_flag(backend, "127.0.0.1:8889")
    backend.add_argument("--store", help="store file path (omit for in-memory)")
    backend.set_defaults(handler=_cmd_backend)

    replay = sub.add_parser("replay", help="serve a recorded trace archive")
    replay.add_argument("archive", help="trace archive directory")
    listen_flag(replay, "127.0.0.1:8890")
    replay.add_argument(
        "--heal",
        action="store_true",
        help="heal replayed pages against the archive's recorded errors",
    )
    replay.set_defaults(handler=_cmd_replay)

    rewrite = sub.add_parser("rewrite", help="rewrite a single file against an error report")
    rewrite.add_argument("--file", required=True, help="HTML or JavaScript input file")
    rewrite.add_argument("--error", required=True, help="error report (JSON object or list)")
    rewrite.add_argument(
        "--strategy",
        required=True,
        choices=sorted(_STRATEGY_FLAGS),
        help="strategy that must apply",
    )
    rewrite.add_argument("--library-rules", help="library rule file")
    rewrite.add_argument("--out", help="write output here instead of stdout")
    rewrite.set_defaults(handler=_cmd_rewrite)

    evaluate = sub.add_parser("evaluate", help="compare original and healed trace archives")
    evaluate.add_argument("--original-dir", required=True, help="directory of original archives")
    evaluate.add_argument("--healed-dir", required=True, help="directory of healed archives")
    evaluate.add_argument("--activations", help="strategy activation log (JSON list)")
    evaluate.add_argument("--out", help="write the report here instead of stdout")
    evaluate.set_defaults(handler=_cmd_evaluate)

    verify = sub.add_parser("verify", help="check a trace archive's invariants")
    verify.add_argument("archive", help="trace archive directory")
    verify.set_defaults(handler=_cmd_verify)

    har_import = sub.add_parser(
        "import", aliases=["record-import"], help="convert a HAR capture into a trace archive"
    )
    har_import.add_argument("source", help="HAR file")
    har_import.add_argument("dest", help="destination archive directory")
    har_import.add_argument("--page-url", help="page URL when the HAR is ambiguous")
    har_import.add_argument("--errors", help="sidecar error log (JSON list)")
    har_import.set_defaults(handler=_cmd_import)

    report = sub.add_parser("report", help="print the backend's effectiveness summary")
    report.add_argument("--backend", help=f"backend service URL (${BACKEND_ENV_VAR} overrides)")
    report.add_argument("--out", help="write the summary here instead of stdout")
    report.set_defaults(handler=_cmd_report)

    return parser


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 2
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    if not getattr(args, "handler", None):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 2
    except OperationalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

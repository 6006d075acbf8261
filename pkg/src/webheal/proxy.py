"""Intercepting proxy: fetch responses, consult the backend for known
errors, heal rewritable content, and serve the result.

Three modes share one healing pipeline:

  reverse   origin-form requests forwarded to a fixed origin
  replay    responses served from a recorded trace archive, never upstream
  forward   absolute-form requests plus CONNECT (see intercept module)

The proxy is stateless: per-request work shares only the config, the
library rules, and a connection pool. A fresh page uuid is minted for every
HTML response.
"""

from __future__ import annotations

import gzip
import logging
import uuid
import zlib
from contextlib import asynccontextmanager
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import urljoin, urlsplit, urlunsplit

import httpx
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .engine import HealingContext, heal
from .errorintel import classify_error, load_library_rules, parse_failure_point
from .htmlrewrite import default_monitor_snippet
from .model import (
    ContentKind,
    FailurePoint,
    JsError,
    Resource,
    StrategyActivation,
    StrategyKind,
    classify_content,
    error_identity_key,
    is_absolute_http_url,
)
from .store import BackendStore, StoreError
from .trace import DENIAL_HEADER, DENIAL_STATUS, TraceArchive

__all__ = [
    "BACKEND_TIMEOUT_SECONDS",
    "RESERVED_PREFIX",
    "HttpBackend",
    "ProxyConfig",
    "StoreBackend",
    "beacon_to_activation",
    "beacon_to_error",
    "build_replay_app",
    "build_reverse_app",
    "HealingPipeline",
]

log = logging.getLogger("webheal.proxy")

RESERVED_PREFIX = "/__selfheal"
BACKEND_TIMEOUT_SECONDS = 0.150
DEFAULT_MAX_REWRITE_BODY_BYTES = 8 * 1024 * 1024

_HOP_BY_HOP = {
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "proxy-connection",
    "te",
    "trailer",
    "trailers",
    "transfer-encoding",
    "upgrade",
}
_CSP_HEADERS = {"content-security-policy", "content-security-policy-report-only"}

# Strategies whose effect is part of the served HTML rather than a guarded
# branch: the proxy reports these at serve time. Guarded rewrites
# (LineSkipper, ObjectCreator) report themselves from the browser via the
# monitor only when the guard actually fires.
_SERVE_TIME_STRATEGIES = {
    StrategyKind.HttpsRedirector,
    StrategyKind.LibraryInjector,
    StrategyKind.HtmlElementCreator,
}

_FORWARD_METHODS = ["GET", "POST", "PUT", "DELETE", "PATCH", "HEAD", "OPTIONS"]


@dataclass(frozen=True)
class ProxyConfig:
    """Runtime settings shared by all proxy modes."""

    listen_host: str = "127.0.0.1"
    listen_port: int = 8888
    mode: str = "reverse"  # forward | reverse | replay
    origin: Optional[str] = None
    backend_url: Optional[str] = None
    archive_path: Optional[Path] = None
    tls_interception: bool = False
    ca_cert_path: Optional[Path] = None
    ca_key_path: Optional[Path] = None
    max_rewrite_body_bytes: int = DEFAULT_MAX_REWRITE_BODY_BYTES
    library_rules_path: Optional[Path] = None
    monitor_snippet_path: Optional[Path] = None
    monitor_enabled: bool = True
    heal_enabled: bool = True

    def validate(self) -> None:
        if self.mode not in ("forward", "reverse", "replay"):
            raise ValueError(f"unknown proxy mode: {self.mode!r}")
        if self.mode == "reverse" and not self.origin:
            raise ValueError("reverse mode requires an origin URL")
        if self.mode == "replay" and not self.archive_path:
            raise ValueError("replay mode requires an archive path")
        if self.tls_interception and not (self.ca_cert_path and self.ca_key_path):
            raise ValueError("TLS interception requires CA cert and key paths")
        if self.max_rewrite_body_bytes <= 0:
            raise ValueError("max_rewrite_body_bytes must be positive")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _dedup_errors(errors: Iterable[JsError]) -> list:
    seen: set = set()
    out = []
    for error in errors:
        key = error_identity_key(error)
        if key in seen:
            continue
        seen.add(key)
        out.append(error)
    return out


class HttpBackend:
    """Talks to a separately running backend service; every call fails open."""

    def __init__(self, base_url: str, timeout: float = BACKEND_TIMEOUT_SECONDS) -> None:
        self.base_url = base_url.rstrip("/")
        self._client = httpx.AsyncClient(base_url=self.base_url, timeout=timeout)

    async def known_errors(self, url: str) -> list:
        try:
            reply = await self._client.get("/errors", params={"url": url})
            reply.raise_for_status()
            return [JsError.from_dict(d) for d in reply.json().get("errors", [])]
        except Exception as exc:  # fail-open: healing must never break a page
            log.warning("known-errors lookup failed for %s: %s", url, exc)
            return []

    async def report_error(self, error: JsError, page_uuid: str) -> None:
        try:
            await self._client.post(
                "/errors", json={"page_uuid": page_uuid, "error": error.to_dict()}
            )
        except Exception as exc:
            log.warning("error report relay failed: %s", exc)

    async def report_activation(self, activation: StrategyActivation) -> None:
        try:
            await self._client.post("/activations", json=activation.to_dict())
        except Exception as exc:
            log.warning("activation relay failed: %s", exc)

    async def aclose(self) -> None:
        await self._client.aclose()


class StoreBackend:
    """In-process backend for hermetic replay and tests."""

    def __init__(self, store: Optional[BackendStore] = None) -> None:
        self.store = store if store is not None else BackendStore()

    async def known_errors(self, url: str) -> list:
        return self.store.query_errors(url)

    async def report_error(self, error: JsError, page_uuid: str) -> None:
        try:
            self.store.record_error(error, page_uuid)
        except StoreError as exc:
            log.warning("error report rejected: %s", exc)

    async def report_activation(self, activation: StrategyActivation) -> None:
        self.store.record_activation(activation)

    async def aclose(self) -> None:
        self.store.close()


class NullBackend:
    """No backend configured: no known errors, reports dropped."""

    async def known_errors(self, url: str) -> list:
        return []

    async def report_error(self, error: JsError, page_uuid: str) -> None:
        log.warning("no backend configured; dropping error report")

    async def report_activation(self, activation: StrategyActivation) -> None:
        log.warning("no backend configured; dropping activation")

    async def aclose(self) -> None:
        pass


def _decode_content(encoding: str, body: bytes) -> Optional[bytes]:
    """Decoded body, or None when the coding is unsupported."""
    coding = encoding.strip().lower()
    if coding in ("", "identity"):
        return body
    try:
        if coding in ("gzip", "x-gzip"):
            return gzip.decompress(body)
        if coding == "deflate":
            try:
                return zlib.decompress(body)
            except zlib.error:
                return zlib.decompress(body, -zlib.MAX_WBITS)
    except (OSError, zlib.error):
        return None
    return None


def _encode_content(encoding: str, body: bytes) -> bytes:
    coding = encoding.strip().lower()
    if coding in ("gzip", "x-gzip"):
        # mtime pinned so identical input yields identical output
        return gzip.compress(body, mtime=0)
    if coding == "deflate":
        return zlib.compress(body)
    return body


class HealingPipeline:
    """Response post-processing shared by every proxy mode."""

    def __init__(self, config: ProxyConfig, backend) -> None:
        config.validate()
        self.config = config
        self.backend = backend
        self.library_rules = load_library_rules(config.library_rules_path)
        if config.monitor_snippet_path:
            self.monitor_snippet = Path(config.monitor_snippet_path).read_text(
                encoding="utf-8"
            )
        else:
            self.monitor_snippet = default_monitor_snippet()

    async def process(
        self,
        url: str,
        status: int,
        headers: list,
        body: bytes,
    ) -> tuple:
        """Returns (status, headers, body) with hop-by-hop headers stripped
        and the body healed when possible."""
        headers = [
            (name, value)
            for name, value in headers
            if name.lower() not in _HOP_BY_HOP
        ]
        kind = classify_content(tuple(headers), url)
        if kind not in (ContentKind.Html, ContentKind.Script):
            return status, headers, body
        if len(body) > self.config.max_rewrite_body_bytes:
            return status, headers, body

        is_html = kind is ContentKind.Html
        inject_monitor = is_html and self.config.monitor_enabled
        known = []
        if self.config.heal_enabled:
            # One lookup covers both keys for HTML: page URL and resource
            # URL are the same string, and the backend matches either.
            known = _dedup_errors(await self.backend.known_errors(url))
        if not inject_monitor and not known:
            return status, headers, body

        encoding = ""
        for name, value in headers:
            if name.lower() == "content-encoding":
                encoding = value
                break
        decoded = _decode_content(encoding, body)
        if decoded is None:
            # Unsupported coding: forward unhealed rather than corrupt it.
            return status, headers, body

        page_uuid = str(uuid.uuid4())
        ctx = HealingContext(
            request_url=url,
            response=Resource.build(url=url, headers=tuple(headers), body=decoded),
            known_errors=tuple(known),
            page_uuid=page_uuid,
            library_rules=self.library_rules,
            monitor_snippet=self.monitor_snippet,
            inject_monitor=inject_monitor,
            report_endpoint=RESERVED_PREFIX,
            healed_at=_now(),
        )
        healed, expectations = heal(ctx)
        if healed.body == decoded:
            return status, headers, body

        for expectation in expectations:
            if expectation.strategy in _SERVE_TIME_STRATEGIES:
                await self.backend.report_activation(expectation)

        new_body = _encode_content(encoding, healed.body)
        out_headers = []
        for name, value in headers:
            lower = name.lower()
            if lower == "content-length":
                continue
            if is_html and lower in _CSP_HEADERS:
                continue
            out_headers.append((name, value))
        out_headers.append(("content-length", str(len(new_body))))
        return status, out_headers, new_body


class BeaconError(BaseModel):
    page_uuid: str
    page_url: str
    message: str = ""
    source: str = ""
    line: Optional[int] = None
    column: Optional[int] = None
    stack: str = ""
    occurred_at: str = ""


class BeaconActivation(BaseModel):
    page_uuid: str
    strategy: str
    target_error: str = ""
    resource_url: str = ""
    occurred_at: str = ""


def beacon_to_error(beacon: BeaconError) -> JsError:
    """Convert a browser error report into a structured error record."""
    error_type, identifier = classify_error(beacon.message)
    fp: Optional[FailurePoint] = None
    source = beacon.source.strip()
    if source:
        if not is_absolute_http_url(source) and source != "(index)":
            source = urljoin(beacon.page_url, source)
        # Browser onerror columns are 1-based; failure points are 0-based.
        column = beacon.column - 1 if beacon.column and beacon.column > 0 else None
        fp = FailurePoint(
            resource_url=source,
            line=beacon.line if beacon.line and beacon.line > 0 else None,
            column=column,
        )
    if fp is None and beacon.stack:
        fp = parse_failure_point(beacon.stack)
    return JsError(
        error_type=error_type,
        identifier=identifier,
        raw_message=beacon.message,
        failure_point=fp,
        page_url=beacon.page_url,
        observed_at=beacon.occurred_at,
    )


def beacon_to_activation(beacon: BeaconActivation) -> StrategyActivation:
    return StrategyActivation(
        page_uuid=beacon.page_uuid,
        strategy=StrategyKind(beacon.strategy),
        target_error=beacon.target_error,
        resource_url=beacon.resource_url,
        occurred_at=beacon.occurred_at,
    )


def _serve(status: int, headers: list, body: bytes) -> Response:
    """Build a response that carries the header list verbatim (duplicate
    names preserved), with Content-Length recomputed from the actual body."""
    response = Response(content=body, status_code=status)
    raw = [
        (name.encode("latin-1"), value.encode("latin-1"))
        for name, value in headers
        if name.lower() != "content-length"
    ]
    raw.append((b"content-length", str(len(body)).encode("ascii")))
    response.raw_headers = raw
    return response


def _rebase_url(url: Optional[str], request_netloc: str, base: str) -> Optional[str]:
    """Swap a browser-reported URL's authority for the canonical one.

    Browsers behind the proxy see every resource under the proxy's own
    address, so their reports carry that address, while healing looks
    errors up under the upstream (or archived) URL. Only URLs whose
    authority matches the beacon request's own Host are rewritten;
    third-party URLs pass through untouched.
    """
    if not url or not request_netloc:
        return url
    parts = urlsplit(url)
    if parts.netloc.lower() != request_netloc.lower():
        return url
    canonical = urlsplit(base)
    return urlunsplit(
        (canonical.scheme, canonical.netloc, parts.path, parts.query, parts.fragment)
    )


def _rebase_error(error: JsError, request_netloc: str, base: str) -> JsError:
    page_url = _rebase_url(error.page_url, request_netloc, base)
    fp = error.failure_point
    if fp is not None and fp.resource_url:
        resource_url = _rebase_url(fp.resource_url, request_netloc, base)
        if resource_url != fp.resource_url:
            fp = replace(fp, resource_url=resource_url)
    if page_url == error.page_url and fp is error.failure_point:
        return error
    return replace(error, page_url=page_url, failure_point=fp)


def _mount_beacon_routes(
    app: FastAPI, pipeline: HealingPipeline, canonical_base: Optional[str] = None
) -> None:
    @app.post(f"{RESERVED_PREFIX}/error", status_code=204)
    async def report_error(beacon: BeaconError, request: Request) -> Response:
        error = beacon_to_error(beacon)
        if canonical_base:
            error = _rebase_error(error, request.url.netloc, canonical_base)
        await pipeline.backend.report_error(error, beacon.page_uuid)
        return Response(status_code=204)

    @app.post(f"{RESERVED_PREFIX}/activation", status_code=204)
    async def report_activation(beacon: BeaconActivation, request: Request) -> Response:
        try:
            activation = beacon_to_activation(beacon)
        except ValueError:
            return JSONResponse({"detail": "malformed activation"}, status_code=422)
        if canonical_base and activation.resource_url:
            resource_url = _rebase_url(
                activation.resource_url, request.url.netloc, canonical_base
            )
            if resource_url != activation.resource_url:
                activation = replace(activation, resource_url=resource_url)
        await pipeline.backend.report_activation(activation)
        return Response(status_code=204)

    @app.api_route(RESERVED_PREFIX + "/{rest:path}", methods=_FORWARD_METHODS)
    async def reserved(rest: str) -> Response:
        # Reserved prefix is never forwarded upstream.
        return PlainTextResponse("reserved", status_code=404)


def build_reverse_app(
    config: ProxyConfig,
    backend=None,
    upstream_transport: Optional[httpx.AsyncBaseTransport] = None,
) -> FastAPI:
    """Reverse proxy: origin-form requests forwarded to config.origin."""
    config.validate()
    if config.mode != "reverse":
        raise ValueError("build_reverse_app requires reverse mode")
    if backend is None:
        backend = HttpBackend(config.backend_url) if config.backend_url else NullBackend()
    pipeline = HealingPipeline(config, backend)
    client = httpx.AsyncClient(transport=upstream_transport, timeout=30.0)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        await client.aclose()
        await backend.aclose()

    app = FastAPI(
        title="self-healing proxy", docs_url=None, redoc_url=None, lifespan=lifespan
    )
    app.state.pipeline = pipeline
    app.state.backend = backend
    app.state.upstream = client
    origin = config.origin.rstrip("/")

    _mount_beacon_routes(app, pipeline, canonical_base=origin)

    @app.api_route("/{path:path}", methods=_FORWARD_METHODS)
    async def forward(path: str, request: Request) -> Response:
        target = f"{origin}/{path}"
        if request.url.query:
            target = f"{target}?{request.url.query}"
        req_headers = [
            (name.decode("latin-1"), value.decode("latin-1"))
            for name, value in request.scope["headers"]
            if name.decode("latin-1").lower() not in _HOP_BY_HOP
            and name.decode("latin-1").lower() != "host"
        ]
        body = await request.body()
        try:
            upstream_req = client.build_request(
                request.method, target, headers=req_headers, content=body
            )
            # Stream so the body arrives exactly as sent; handling
            # content-encoding ourselves keeps pass-through byte-exact.
            upstream = await client.send(upstream_req, stream=True)
            try:
                raw = b"".join([chunk async for chunk in upstream.aiter_raw()])
            finally:
                await upstream.aclose()
        except httpx.HTTPError as exc:
            return PlainTextResponse(f"upstream failure: {exc}", status_code=502)
        status, headers, out_body = await pipeline.process(
            target, upstream.status_code, upstream.headers.multi_items(), raw
        )
        return _serve(status, headers, out_body)

    return app


def _absolute_request_url(archive: TraceArchive, path: str, query: str) -> str:
    base = urlsplit(archive.page_url)
    url = f"{base.scheme}://{base.netloc}/{path.lstrip('/')}"
    if query:
        url = f"{url}?{query}"
    return url


def _path_query(url: str) -> str:
    parts = urlsplit(url)
    path = parts.path or "/"
    return f"{path}?{parts.query}" if parts.query else path


def build_replay_app(
    config: ProxyConfig,
    archive: TraceArchive,
    backend=None,
) -> FastAPI:
    """Hermetic replay: responses come only from the archive.

    Unknown (method, url) pairs get a 404 carrying a denial marker header so
    a replay miss is distinguishable from a recorded 404. When healing is on
    and no backend is supplied, an in-process store seeded with the
    archive's recorded errors stands in for the backend.
    """
    config.validate()
    if backend is None:
        store_backend = StoreBackend()
        if config.heal_enabled:
            seed_uuid = str(uuid.uuid4())
            for error in archive.errors:
                try:
                    store_backend.store.record_error(error, seed_uuid)
                except StoreError as exc:
                    log.warning("archive error not seedable: %s", exc)
        backend = store_backend
    pipeline = HealingPipeline(config, backend)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        await backend.aclose()

    app = FastAPI(
        title="self-healing replay", docs_url=None, redoc_url=None, lifespan=lifespan
    )
    app.state.pipeline = pipeline
    app.state.backend = backend
    app.state.archive = archive

    # Path lookup for cross-origin resources served off one listener: only
    # unambiguous paths match; ambiguity is a denial, never a guess.
    by_path: dict = {}
    for tr in archive.trace.resources:
        key = (tr.method.upper(), _path_query(tr.resource.url))
        by_path[key] = tr if key not in by_path else None

    page_base = urlsplit(archive.page_url)
    _mount_beacon_routes(
        app, pipeline, canonical_base=f"{page_base.scheme}://{page_base.netloc}"
    )

    @app.api_route("/{path:path}", methods=_FORWARD_METHODS)
    async def replay(path: str, request: Request) -> Response:
        url = _absolute_request_url(archive, path, request.url.query)
        hit = archive.lookup(request.method, url)
        if hit is None:
            pq = f"/{path.lstrip('/')}"
            if request.url.query:
                pq = f"{pq}?{request.url.query}"
            hit = by_path.get((request.method.upper(), pq))
        if hit is None:
            name, value = DENIAL_HEADER
            return PlainTextResponse(
                "not recorded in archive",
                status_code=DENIAL_STATUS,
                headers={name: value},
            )
        status, headers, body = await pipeline.process(
            hit.resource.url, hit.status, list(hit.resource.headers), hit.resource.body
        )
        return _serve(status, headers, body)

    return app

import asyncio
import gzip
import json
import re
import ssl

import httpx
import pytest
from fastapi.testclient import TestClient

from webheal import ca as camod
from webheal.model import (
    ErrorType,
    FailurePoint,
    JsError,
    Resource,
    StrategyKind,
    TraceResource,
    WebTrace,
)
from webheal.intercept import ForwardProxyServer
from webheal.proxy import (
    HttpBackend,
    ProxyConfig,
    StoreBackend,
    build_replay_app,
    build_reverse_app,
)
from webheal.trace import TraceArchive, save_archive, load_archive

ORIGIN = "http://upstream.test"
PAGE_URL = f"{ORIGIN}/gallery.html"
UUID_RE = re.compile(
    r"[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}"
)

HTML = b"<html><head><title>g</title></head><body><p>pics</p></body></html>"
SCRIPT = b"jQuery.each([], function () {});\nsafe();\n"


def upstream_app(routes, hits=None):
    """Raw ASGI app serving canned (status, headers, body) by path."""

    async def app(scope, receive, send):
        assert scope["type"] == "http"
        while True:
            message = await receive()
            if message["type"] != "http.request" or not message.get("more_body"):
                break
        if hits is not None:
            hits.append(scope["path"])
        entry = routes.get(scope["path"])
        if entry is None:
            entry = (404, [(b"content-type", b"text/plain")], b"nope")
        status, headers, body = entry
        await send(
            {"type": "http.response.start", "status": status, "headers": headers}
        )
        await send({"type": "http.response.body", "body": body})

    return app


def reverse_client(routes, *, backend=None, hits=None, **config_kwargs):
    config = ProxyConfig(mode="reverse", origin=ORIGIN, **config_kwargs)
    app = build_reverse_app(
        config,
        backend=backend if backend is not None else StoreBackend(),
        upstream_transport=httpx.ASGITransport(app=upstream_app(routes, hits)),
    )
    return TestClient(app)


def jquery_error(page_url=PAGE_URL):
    return JsError(
        error_type=ErrorType.NotDefined,
        identifier="jQuery",
        raw_message="Uncaught ReferenceError: jQuery is not defined",
        failure_point=FailurePoint(resource_url=f"{ORIGIN}/app.js", line=1, column=0),
        page_url=page_url,
        observed_at="2024-01-01T00:00:00Z",
    )


PAGE_UUID = "123e4567-e89b-42d3-a456-426614174000"


def seeded_backend(*errors):
    backend = StoreBackend()
    for error in errors:
        backend.store.record_error(error, PAGE_UUID)
    return backend


HTML_ROUTES = {
    "/gallery.html": (
        200,
        [(b"content-type", b"text/html; charset=utf-8")],
        HTML,
    ),
    "/app.js": (
        200,
        [(b"content-type", b"application/javascript")],
        SCRIPT,
    ),
    "/pic.png": (
        200,
        [(b"content-type", b"image/png")],
        b"\x89PNG\r\n\x1a\nfakeimage",
    ),
}


def test_html_gets_monitor_and_one_uuid():
    client = reverse_client(HTML_ROUTES)
    reply = client.get("/gallery.html")
    assert reply.status_code == 200
    text = reply.text
    assert "win.__selfheal" in text
    uuids = UUID_RE.findall(text)
    assert len(set(uuids)) == 1
    assert text.count(uuids[0]) == 1
    assert text.count("<script>") >= 1


def test_fresh_uuid_per_response():
    client = reverse_client(HTML_ROUTES)
    first = UUID_RE.findall(client.get("/gallery.html").text)
    second = UUID_RE.findall(client.get("/gallery.html").text)
    assert first and second and first[0] != second[0]


def test_known_error_triggers_library_injection_and_activation():
    backend = seeded_backend(jquery_error())
    client = reverse_client(HTML_ROUTES, backend=backend)
    reply = client.get("/gallery.html")
    assert "code.jquery.com" in reply.text
    acts = [
        a
        for _, a in backend.store._activation_events
        if a.strategy is StrategyKind.LibraryInjector
    ]
    assert len(acts) == 1
    assert acts[0].target_error.startswith("NotDefined|jQuery|")


def test_script_healing_not_reported_at_serve_time():
    routes = dict(HTML_ROUTES)
    routes["/menu.js"] = (
        200,
        [(b"content-type", b"application/javascript")],
        b"menu.open();\nsafe();\n",
    )
    error = JsError(
        error_type=ErrorType.NotDefined,
        identifier="menu",
        raw_message="Uncaught ReferenceError: menu is not defined",
        failure_point=FailurePoint(resource_url=f"{ORIGIN}/menu.js", line=1, column=0),
        page_url=PAGE_URL,
        observed_at="",
    )
    backend = seeded_backend(error)
    client = reverse_client(routes, backend=backend)
    reply = client.get("/menu.js")
    # Guarded rewrite present, with its runtime activation ping.
    assert "typeof menu != 'undefined'" in reply.text
    assert "window.__selfheal&&window.__selfheal.activation(" in reply.text
    assert "safe();" in reply.text
    # No serve-time activation: the ping reports only if the guard fires.
    assert backend.store.counts()["activations"] == 0


def test_image_passes_through_untouched():
    client = reverse_client(HTML_ROUTES)
    reply = client.get("/pic.png")
    assert reply.content == HTML_ROUTES["/pic.png"][2]


def test_transparency_monitor_off_empty_backend():
    gz = gzip.compress(HTML, mtime=0)
    routes = dict(HTML_ROUTES)
    routes["/page.gz"] = (
        200,
        [(b"content-type", b"text/html"), (b"content-encoding", b"gzip")],
        gz,
    )
    routes["/csp.html"] = (
        200,
        [
            (b"content-type", b"text/html"),
            (b"content-security-policy", b"script-src 'self'"),
        ],
        HTML,
    )
    client = reverse_client(routes, monitor_enabled=False)
    for path, (status, headers, body) in routes.items():
        reply = client.get(path)
        assert reply.status_code == status
        if path == "/page.gz":
            # The test client auto-decodes gzip; the wire body length and
            # coding header prove the encoded bytes passed through intact.
            assert reply.content == HTML
            assert reply.headers["content-encoding"] == "gzip"
            assert int(reply.headers["content-length"]) == len(gz)
        else:
            assert reply.content == body, path
    # CSP survives when nothing was modified.
    assert client.get("/csp.html").headers["content-security-policy"]


def test_gzip_html_is_decoded_healed_reencoded():
    gz = gzip.compress(HTML, mtime=0)
    routes = {
        "/gallery.html": (
            200,
            [(b"content-type", b"text/html"), (b"content-encoding", b"gzip")],
            gz,
        )
    }
    client = reverse_client(routes)
    reply = client.get("/gallery.html")
    assert reply.headers.get("content-encoding") == "gzip"
    # httpx auto-decodes gzip for .text; the monitor must be inside.
    assert "win.__selfheal" in reply.text
    assert int(reply.headers["content-length"]) > 0


def test_unsupported_coding_passes_through():
    body = b"not-actually-brotli"
    routes = {
        "/page.br": (
            200,
            [(b"content-type", b"text/html"), (b"content-encoding", b"br")],
            body,
        )
    }
    client = reverse_client(routes)
    reply = client.get("/page.br")
    assert reply.content == body
    assert b"__selfheal" not in reply.content


def test_oversized_body_streams_through_unhealed():
    big = b"<html><head></head><body>" + b"x" * 4096 + b"</body></html>"
    routes = {"/big.html": (200, [(b"content-type", b"text/html")], big)}
    client = reverse_client(routes, max_rewrite_body_bytes=1024)
    reply = client.get("/big.html")
    assert reply.content == big


def test_csp_removed_on_healed_html():
    routes = {
        "/gallery.html": (
            200,
            [
                (b"content-type", b"text/html"),
                (b"content-security-policy", b"script-src 'self'"),
                (b"content-security-policy-report-only", b"script-src 'self'"),
            ],
            HTML,
        )
    }
    client = reverse_client(routes)
    reply = client.get("/gallery.html")
    assert "win.__selfheal" in reply.text
    assert "content-security-policy" not in reply.headers
    assert "content-security-policy-report-only" not in reply.headers


def test_backend_down_fails_open():
    backend = HttpBackend("http://127.0.0.1:9")  # nothing listens on discard
    client = reverse_client(HTML_ROUTES, backend=backend)
    js = client.get("/app.js")
    assert js.status_code == 200
    assert js.content == SCRIPT
    page = client.get("/gallery.html")
    assert page.status_code == 200
    assert "<p>pics</p>" in page.text


def test_upstream_error_status_relayed():
    routes = {"/boom": (500, [(b"content-type", b"text/plain")], b"server fell over")}
    client = reverse_client(routes)
    reply = client.get("/boom")
    assert reply.status_code == 500
    assert reply.content == b"server fell over"


def test_malformed_js_forwards_byte_identical():
    bad = b"function ( { this is not ecmascript ]]]"
    routes = {"/bad.js": (200, [(b"content-type", b"application/javascript")], bad)}
    error = JsError(
        error_type=ErrorType.NotDefined,
        identifier="x",
        raw_message="Uncaught ReferenceError: x is not defined",
        failure_point=FailurePoint(resource_url=f"{ORIGIN}/bad.js", line=1, column=0),
        page_url=PAGE_URL,
        observed_at="",
    )
    client = reverse_client(routes, backend=seeded_backend(error))
    reply = client.get("/bad.js")
    assert reply.status_code == 200
    assert reply.content == bad


def test_duplicate_set_cookie_preserved():
    routes = {
        "/cookies": (
            200,
            [
                (b"content-type", b"text/plain"),
                (b"set-cookie", b"a=1; Path=/"),
                (b"set-cookie", b"b=2; Path=/"),
            ],
            b"ok",
        )
    }
    client = reverse_client(routes)
    reply = client.get("/cookies")
    assert reply.headers.get_list("set-cookie") == ["a=1; Path=/", "b=2; Path=/"]


def test_error_beacon_recorded_not_forwarded():
    hits = []
    backend = StoreBackend()
    client = reverse_client(HTML_ROUTES, backend=backend, hits=hits)
    reply = client.post(
        "/__selfheal/error",
        json={
            "page_uuid": PAGE_UUID,
            "page_url": PAGE_URL,
            "message": "Uncaught ReferenceError: jQuery is not defined",
            "source": "/app.js",
            "line": 1,
            "column": 1,
            "stack": "",
            "occurred_at": "2024-01-01T00:00:00Z",
        },
    )
    assert reply.status_code == 204
    assert hits == []
    stored = backend.store.query_errors(PAGE_URL)
    assert len(stored) == 1
    assert stored[0].error_type is ErrorType.NotDefined
    # Relative source resolved against the page; 1-based column converted.
    assert stored[0].failure_point == FailurePoint(
        resource_url=f"{ORIGIN}/app.js", line=1, column=0
    )


def test_activation_beacon_recorded():
    backend = StoreBackend()
    backend.store.record_error(jquery_error(), PAGE_UUID)
    client = reverse_client(HTML_ROUTES, backend=backend)
    reply = client.post(
        "/__selfheal/activation",
        json={
            "page_uuid": PAGE_UUID,
            "strategy": "LineSkipper",
            "target_error": "NotDefined|jQuery||1|0",
            "resource_url": PAGE_URL,
            "occurred_at": "2024-01-01T00:00:01Z",
        },
    )
    assert reply.status_code == 204
    assert backend.store.counts()["activations"] == 1


def test_browser_addressed_beacon_closes_healing_loop():
    # A browser behind the reverse proxy sees every resource under the
    # proxy's own address, so its reports carry that address; healing looks
    # errors up under the origin. The beacon must land origin-keyed or a
    # report could never heal anything.
    backend = StoreBackend()
    client = reverse_client(HTML_ROUTES, backend=backend)
    reply = client.post(
        "/__selfheal/error",
        json={
            "page_uuid": PAGE_UUID,
            "page_url": "http://testserver/gallery.html",
            "message": "Uncaught ReferenceError: jQuery is not defined",
            "source": "http://testserver/gallery.html",
            "line": 1,
            "column": 1,
            "occurred_at": "2024-01-01T00:00:00Z",
        },
    )
    assert reply.status_code == 204
    assert backend.store.query_errors("http://testserver/gallery.html") == []
    stored = backend.store.query_errors(PAGE_URL)
    assert len(stored) == 1
    assert stored[0].page_url == PAGE_URL
    assert stored[0].failure_point.resource_url == PAGE_URL
    page = client.get("/gallery.html")
    assert "code.jquery.com" in page.text


def test_third_party_beacon_source_kept_verbatim():
    backend = StoreBackend()
    client = reverse_client(HTML_ROUTES, backend=backend)
    client.post(
        "/__selfheal/error",
        json={
            "page_uuid": PAGE_UUID,
            "page_url": "http://testserver/gallery.html",
            "message": "Uncaught TypeError: track is not a function",
            "source": "http://cdn.example/lib.js",
            "line": 3,
            "column": 5,
            "occurred_at": "2024-01-01T00:00:00Z",
        },
    )
    (stored,) = backend.store.query_errors(PAGE_URL)
    assert stored.page_url == PAGE_URL
    assert stored.failure_point.resource_url == "http://cdn.example/lib.js"


def test_activation_resource_url_rebased_to_origin():
    backend = StoreBackend()
    client = reverse_client(HTML_ROUTES, backend=backend)
    reply = client.post(
        "/__selfheal/activation",
        json={
            "page_uuid": PAGE_UUID,
            "strategy": "LineSkipper",
            "target_error": "NotDefined|jQuery||1|0",
            "resource_url": "http://testserver/gallery.html",
            "occurred_at": "2024-01-01T00:00:01Z",
        },
    )
    assert reply.status_code == 204
    (activation,) = backend.store._activations.values()
    assert activation.resource_url == PAGE_URL


def test_reserved_prefix_never_forwarded():
    hits = []
    client = reverse_client(HTML_ROUTES, hits=hits)
    assert client.get("/__selfheal/error").status_code in (404, 405)
    assert client.get("/__selfheal/whatever").status_code == 404
    assert client.post("/__selfheal/error", content=b"not json").status_code == 422
    assert hits == []


# --- replay mode -----------------------------------------------------------


def make_archive(tmp_path, *, errors=(), extra=()):
    resources = [
        TraceResource(
            method="GET",
            status=200,
            resource=Resource.build(
                url=PAGE_URL,
                headers=(("content-type", "text/html; charset=utf-8"),),
                body=HTML,
            ),
        ),
        TraceResource(
            method="GET",
            status=200,
            resource=Resource.build(
                url=f"{ORIGIN}/app.js",
                headers=(("content-type", "application/javascript"),),
                body=SCRIPT,
            ),
        ),
        *extra,
    ]
    trace = WebTrace(
        page_url=PAGE_URL,
        resources=tuple(resources),
        errors=tuple(errors),
        collected_at="2024-01-01T00:00:00Z",
    )
    save_archive(trace, tmp_path / "arch")
    return load_archive(tmp_path / "arch")


def replay_client(archive, *, heal=True, **config_kwargs):
    config = ProxyConfig(
        mode="replay",
        archive_path=archive.path,
        heal_enabled=heal,
        monitor_enabled=heal,
        **config_kwargs,
    )
    return TestClient(build_replay_app(config, archive))


def test_replay_hit_verbatim_when_not_healing(tmp_path):
    archive = make_archive(tmp_path)
    client = replay_client(archive, heal=False)
    reply = client.get("/gallery.html")
    assert reply.status_code == 200
    assert reply.content == HTML
    assert reply.headers["content-type"] == "text/html; charset=utf-8"
    assert "x-selfheal-replay" not in reply.headers


def test_replay_miss_gets_denial_marker(tmp_path):
    archive = make_archive(tmp_path)
    client = replay_client(archive, heal=False)
    reply = client.get("/not-recorded.html")
    assert reply.status_code == 404
    assert reply.headers["x-selfheal-replay"] == "denied"


def test_replay_heals_from_archive_errors(tmp_path):
    archive = make_archive(tmp_path, errors=[jquery_error()])
    client = replay_client(archive)
    page = client.get("/gallery.html")
    assert "win.__selfheal" in page.text
    assert "code.jquery.com" in page.text
    # The jQuery error is claimed by page-level library injection, so the
    # script itself is not rewritten.
    js = client.get("/app.js")
    assert js.content == SCRIPT


def test_replay_beacons_live(tmp_path):
    archive = make_archive(tmp_path)
    client = replay_client(archive)
    reply = client.post(
        "/__selfheal/error",
        json={
            "page_uuid": PAGE_UUID,
            "page_url": PAGE_URL,
            "message": "Uncaught ReferenceError: jQuery is not defined",
            "source": f"{ORIGIN}/app.js",
            "line": 1,
            "column": 1,
        },
    )
    assert reply.status_code == 204
    store = client.app.state.backend.store
    assert store.counts()["errors"] == 1


def test_replay_beacon_rebased_to_archive_host(tmp_path):
    # A browser pointed at a replay listener addresses it directly, while
    # lookups run under the archived URLs; reports are rebased the same way
    # as in reverse mode.
    archive = make_archive(tmp_path)
    client = replay_client(archive)
    reply = client.post(
        "/__selfheal/error",
        json={
            "page_uuid": PAGE_UUID,
            "page_url": "http://testserver/gallery.html",
            "message": "Uncaught ReferenceError: jQuery is not defined",
            "source": "http://testserver/app.js",
            "line": 1,
            "column": 1,
            "occurred_at": "2024-01-01T00:00:00Z",
        },
    )
    assert reply.status_code == 204
    store = client.app.state.backend.store
    (stored,) = store.query_errors(PAGE_URL)
    assert stored.page_url == PAGE_URL
    assert stored.failure_point.resource_url == f"{ORIGIN}/app.js"
    page = client.get("/gallery.html")
    assert "code.jquery.com" in page.text


def test_replay_cross_origin_unambiguous_path(tmp_path):
    cdn = TraceResource(
        method="GET",
        status=200,
        resource=Resource.build(
            url="https://cdn.example/lib/jquery.js",
            headers=(("content-type", "application/javascript"),),
            body=b"window.jQuery = function () {};",
        ),
    )
    archive = make_archive(tmp_path, extra=[cdn])
    client = replay_client(archive, heal=False)
    reply = client.get("/lib/jquery.js")
    assert reply.status_code == 200
    assert b"window.jQuery" in reply.content


def test_replay_ambiguous_path_denied(tmp_path):
    a = TraceResource(
        method="GET",
        status=200,
        resource=Resource.build(
            url="https://one.example/shared.js",
            headers=(("content-type", "application/javascript"),),
            body=b"1;",
        ),
    )
    b = TraceResource(
        method="GET",
        status=200,
        resource=Resource.build(
            url="https://two.example/shared.js",
            headers=(("content-type", "application/javascript"),),
            body=b"2;",
        ),
    )
    archive = make_archive(tmp_path, extra=[a, b])
    client = replay_client(archive, heal=False)
    reply = client.get("/shared.js")
    assert reply.status_code == 404
    assert reply.headers["x-selfheal-replay"] == "denied"


def test_replay_post_matched_by_method_and_url(tmp_path):
    api = TraceResource(
        method="POST",
        status=201,
        resource=Resource.build(
            url=f"{ORIGIN}/api/submit",
            headers=(("content-type", "application/json"),),
            body=b'{"ok": true}',
        ),
    )
    archive = make_archive(tmp_path, extra=[api])
    client = replay_client(archive, heal=False)
    hit = client.post("/api/submit", content=b"ignored-request-body")
    assert hit.status_code == 201
    assert hit.content == b'{"ok": true}'
    miss = client.get("/api/submit")
    assert miss.status_code == 404
    assert miss.headers["x-selfheal-replay"] == "denied"


def test_replay_query_strings_significant(tmp_path):
    v1 = TraceResource(
        method="GET",
        status=200,
        resource=Resource.build(
            url=f"{ORIGIN}/data?v=1",
            headers=(("content-type", "text/plain"),),
            body=b"one",
        ),
    )
    archive = make_archive(tmp_path, extra=[v1])
    client = replay_client(archive, heal=False)
    assert client.get("/data?v=1").content == b"one"
    assert client.get("/data?v=2").status_code == 404
    assert client.get("/data").status_code == 404


# --- forward mode ----------------------------------------------------------


async def _start_origin(routes):
    """Minimal HTTP/1.1 origin for forward-proxy tests."""

    async def handle(reader, writer):
        try:
            while True:
                try:
                    head = await reader.readuntil(b"\r\n\r\n")
                except asyncio.IncompleteReadError:
                    return
                line = head.split(b"\r\n", 1)[0].decode()
                _method, path, _v = line.split(" ")
                status, headers, body = routes.get(
                    path, (404, [("content-type", "text/plain")], b"nope")
                )
                out = [f"HTTP/1.1 {status} X"]
                out.extend(f"{k}: {v}" for k, v in headers)
                out.append(f"content-length: {len(body)}")
                writer.write(("\r\n".join(out) + "\r\n\r\n").encode() + body)
                await writer.drain()
        except (ConnectionError, OSError):
            pass
        finally:
            writer.close()

    server = await asyncio.start_server(handle, "127.0.0.1", 0)
    return server, server.sockets[0].getsockname()[1]


def test_forward_absolute_form_heals_html():
    async def run():
        origin, oport = await _start_origin(
            {"/page.html": (200, [("content-type", "text/html")], HTML)}
        )
        config = ProxyConfig(mode="forward", listen_host="127.0.0.1", listen_port=0)
        proxy = ForwardProxyServer(config, backend=StoreBackend())
        host, port = await proxy.start()
        try:
            reader, writer = await asyncio.open_connection(host, port)
            writer.write(
                (
                    f"GET http://127.0.0.1:{oport}/page.html HTTP/1.1\r\n"
                    f"Host: 127.0.0.1:{oport}\r\nConnection: close\r\n\r\n"
                ).encode()
            )
            await writer.drain()
            data = await reader.read(-1)
        finally:
            await proxy.stop()
            origin.close()
            await origin.wait_closed()
        assert b"HTTP/1.1 200" in data
        assert b"win.__selfheal" in data

    asyncio.run(run())


def test_forward_beacon_handled_locally():
    async def run():
        config = ProxyConfig(mode="forward", listen_host="127.0.0.1", listen_port=0)
        backend = StoreBackend()
        proxy = ForwardProxyServer(config, backend=backend)
        host, port = await proxy.start()
        try:
            payload = json.dumps(
                {
                    "page_uuid": PAGE_UUID,
                    "page_url": PAGE_URL,
                    "message": "Uncaught ReferenceError: jQuery is not defined",
                    "source": f"{ORIGIN}/app.js",
                    "line": 1,
                    "column": 1,
                }
            ).encode()
            reader, writer = await asyncio.open_connection(host, port)
            writer.write(
                (
                    f"POST http://any.example{'/__selfheal/error'} HTTP/1.1\r\n"
                    f"Host: any.example\r\ncontent-length: {len(payload)}\r\n"
                    "Connection: close\r\n\r\n"
                ).encode()
                + payload
            )
            await writer.drain()
            data = await reader.read(-1)
        finally:
            await proxy.stop()
        assert b"HTTP/1.1 204" in data
        assert backend.store.counts()["errors"] == 1

    asyncio.run(run())


def test_forward_connect_blind_tunnel():
    async def run():
        async def pong(reader, writer):
            data = await reader.readexactly(4)
            assert data == b"ping"
            writer.write(b"pong")
            await writer.drain()
            writer.close()

        upstream = await asyncio.start_server(pong, "127.0.0.1", 0)
        uport = upstream.sockets[0].getsockname()[1]
        config = ProxyConfig(mode="forward", listen_host="127.0.0.1", listen_port=0)
        proxy = ForwardProxyServer(config, backend=StoreBackend())
        host, port = await proxy.start()
        try:
            reader, writer = await asyncio.open_connection(host, port)
            writer.write(f"CONNECT 127.0.0.1:{uport} HTTP/1.1\r\n\r\n".encode())
            await writer.drain()
            head = await reader.readuntil(b"\r\n\r\n")
            assert b"200" in head
            writer.write(b"ping")
            await writer.drain()
            assert await reader.readexactly(4) == b"pong"
        finally:
            await proxy.stop()
            upstream.close()
            await upstream.wait_closed()

    asyncio.run(run())


def test_forward_tls_interception(tmp_path):
    """CONNECT with interception: client trusts the proxy CA, sees healed HTML."""

    async def run():
        origin_ca = camod.generate_ca(tmp_path / "origin.pem", tmp_path / "origin.key")
        origin_ctx = origin_ca.server_context("127.0.0.1")

        async def handle(reader, writer):
            try:
                await reader.readuntil(b"\r\n\r\n")
                body = HTML
                writer.write(
                    (
                        "HTTP/1.1 200 OK\r\ncontent-type: text/html\r\n"
                        f"content-length: {len(body)}\r\nconnection: close\r\n\r\n"
                    ).encode()
                    + body
                )
                await writer.drain()
            finally:
                writer.close()

        origin = await asyncio.start_server(handle, "127.0.0.1", 0, ssl=origin_ctx)
        oport = origin.sockets[0].getsockname()[1]

        proxy_ca = camod.generate_ca(tmp_path / "ca.pem", tmp_path / "ca.key")
        config = ProxyConfig(
            mode="forward",
            listen_host="127.0.0.1",
            listen_port=0,
            tls_interception=True,
            ca_cert_path=tmp_path / "ca.pem",
            ca_key_path=tmp_path / "ca.key",
        )
        proxy = ForwardProxyServer(
            config, backend=StoreBackend(), ca=proxy_ca, upstream_verify=False
        )
        host, port = await proxy.start()
        try:
            client_ctx = ssl.create_default_context(cafile=str(tmp_path / "ca.pem"))
            client_ctx.check_hostname = False
            async with httpx.AsyncClient(
                proxy=f"http://{host}:{port}", verify=client_ctx
            ) as client:
                reply = await client.get(f"https://127.0.0.1:{oport}/page.html")
            assert reply.status_code == 200
            assert "win.__selfheal" in reply.text
        finally:
            await proxy.stop()
            origin.close()
            await origin.wait_closed()

    asyncio.run(run())


def test_config_validation():
    with pytest.raises(ValueError, match="origin"):
        ProxyConfig(mode="reverse").validate()
    with pytest.raises(ValueError, match="archive"):
        ProxyConfig(mode="replay").validate()
    with pytest.raises(ValueError, match="CA cert"):
        ProxyConfig(mode="forward", tls_interception=True).validate()
    with pytest.raises(ValueError, match="unknown proxy mode"):
        ProxyConfig(mode="sideways").validate()

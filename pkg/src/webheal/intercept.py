"""Forward proxy mode: absolute-form HTTP requests plus CONNECT.

Plain http:// requests are fetched upstream and healed in flight. CONNECT
is either tunneled blindly (no interception) or, when TLS interception is
enabled, terminated locally with a CA-signed leaf certificate so https
traffic flows through the same healing pipeline.

Requests to the reserved beacon prefix are answered locally in every mode
and never reach the upstream server.
"""

from __future__ import annotations

import asyncio
import json
import logging
from typing import Optional
from urllib.parse import urlsplit

import httpx
from pydantic import ValidationError

from .ca import CertificateAuthority
from .proxy import (
    BeaconActivation,
    BeaconError,
    HealingPipeline,
    HttpBackend,
    NullBackend,
    ProxyConfig,
    RESERVED_PREFIX,
    StoreBackend,
    beacon_to_activation,
    beacon_to_error,
)

__all__ = ["ForwardProxyServer"]

log = logging.getLogger("webheal.intercept")

_MAX_HEADER_BYTES = 64 * 1024
_MAX_REQUEST_BODY = 64 * 1024 * 1024


class _BadRequest(Exception):
    pass


async def _read_head(reader: asyncio.StreamReader) -> Optional[tuple]:
    """One request head: (method, target, version, headers). None on EOF."""
    try:
        head = await reader.readuntil(b"\r\n\r\n")
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise _BadRequest("truncated request head") from exc
    except asyncio.LimitOverrunError as exc:
        raise _BadRequest("request head too large") from exc
    if len(head) > _MAX_HEADER_BYTES:
        raise _BadRequest("request head too large")
    lines = head.decode("latin-1").split("\r\n")
    parts = lines[0].split(" ")
    if len(parts) != 3:
        raise _BadRequest(f"malformed request line: {lines[0]!r}")
    method, target, version = parts
    headers = []
    for line in lines[1:]:
        if not line:
            continue
        name, sep, value = line.partition(":")
        if not sep:
            raise _BadRequest(f"malformed header line: {line!r}")
        headers.append((name.strip(), value.strip()))
    return method.upper(), target, version, headers


def _header(headers: list, name: str) -> Optional[str]:
    for key, value in headers:
        if key.lower() == name:
            return value
    return None


async def _read_body(reader: asyncio.StreamReader, headers: list) -> bytes:
    length = _header(headers, "content-length")
    if length is None:
        return b""
    n = int(length)
    if n < 0 or n > _MAX_REQUEST_BODY:
        raise _BadRequest("unacceptable request body length")
    return await reader.readexactly(n) if n else b""


def _write_response(
    writer: asyncio.StreamWriter,
    status: int,
    headers: list,
    body: bytes,
    *,
    head_only: bool = False,
) -> None:
    reason = {200: "OK", 204: "No Content", 404: "Not Found", 502: "Bad Gateway"}.get(
        status, "Status"
    )
    out = [f"HTTP/1.1 {status} {reason}"]
    seen_length = False
    for name, value in headers:
        if name.lower() == "content-length":
            seen_length = True
            value = str(len(body))
        out.append(f"{name}: {value}")
    if not seen_length:
        out.append(f"content-length: {len(body)}")
    writer.write(("\r\n".join(out) + "\r\n\r\n").encode("latin-1"))
    if not head_only:
        writer.write(body)


class ForwardProxyServer:
    """Asyncio forward proxy wired to the shared healing pipeline."""

    def __init__(
        self,
        config: ProxyConfig,
        backend=None,
        ca: Optional[CertificateAuthority] = None,
        upstream_verify=True,
    ) -> None:
        config.validate()
        if config.mode != "forward":
            raise ValueError("ForwardProxyServer requires forward mode")
        if config.tls_interception and ca is None:
            raise ValueError("TLS interception requires a certificate authority")
        if backend is None:
            backend = (
                HttpBackend(config.backend_url) if config.backend_url else NullBackend()
            )
        self.config = config
        self.backend = backend
        self.ca = ca
        self.pipeline = HealingPipeline(config, backend)
        self._client = httpx.AsyncClient(timeout=30.0, verify=upstream_verify)
        self._server: Optional[asyncio.base_events.Server] = None

    @property
    def address(self) -> tuple:
        assert self._server is not None, "server not started"
        sock = self._server.sockets[0]
        return sock.getsockname()[:2]

    async def start(self) -> tuple:
        self._server = await asyncio.start_server(
            self._handle, self.config.listen_host, self.config.listen_port
        )
        return self.address

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        await self._client.aclose()
        await self.backend.aclose()

    async def serve_forever(self) -> None:
        assert self._server is not None, "call start() first"
        await self._server.serve_forever()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            await self._session(reader, writer, scheme=None, host=None)
        except (_BadRequest, ConnectionError, asyncio.IncompleteReadError) as exc:
            log.debug("connection dropped: %s", exc)
        except Exception:
            log.exception("proxy connection failed")
        finally:
            try:
                writer.close()
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def _session(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        scheme: Optional[str],
        host: Optional[str],
    ) -> None:
        """Serve requests on one connection until it closes.

        scheme/host are None on the plain listener (targets are
        absolute-form or CONNECT) and set inside an intercepted tunnel
        (targets are origin-form against that host).
        """
        while True:
            head = await _read_head(reader)
            if head is None:
                return
            method, target, _version, headers = head

            if method == "CONNECT":
                await self._connect(reader, writer, target)
                return

            if scheme is None:
                parts = urlsplit(target)
                if not parts.scheme:
                    # Origin-form on the plain listener: only the reserved
                    # beacon prefix is meaningful here.
                    url = None
                    path = target
                else:
                    url = target
                    path = parts.path
            else:
                url = f"{scheme}://{host}{target}"
                path = urlsplit(target).path

            body = await _read_body(reader, headers)
            if path.startswith(RESERVED_PREFIX):
                status, reply = await self._beacon(method, path, body)
                _write_response(writer, status, [("content-type", "text/plain")], reply)
                await writer.drain()
            elif url is None:
                _write_response(
                    writer, 404, [("content-type", "text/plain")], b"absolute-form required"
                )
                await writer.drain()
            else:
                await self._forward(writer, method, url, headers, body)
            if (_header(headers, "connection") or "").lower() == "close":
                return

    async def _beacon(self, method: str, path: str, body: bytes) -> tuple:
        if method != "POST":
            return 404, b"reserved"
        try:
            payload = json.loads(body.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            return 400, b"malformed beacon"
        try:
            if path == f"{RESERVED_PREFIX}/error":
                beacon = BeaconError(**payload)
                await self.backend.report_error(
                    beacon_to_error(beacon), beacon.page_uuid
                )
                return 204, b""
            if path == f"{RESERVED_PREFIX}/activation":
                await self.backend.report_activation(
                    beacon_to_activation(BeaconActivation(**payload))
                )
                return 204, b""
        except (ValidationError, ValueError, TypeError):
            return 400, b"malformed beacon"
        return 404, b"reserved"

    async def _forward(
        self,
        writer: asyncio.StreamWriter,
        method: str,
        url: str,
        headers: list,
        body: bytes,
    ) -> None:
        from .proxy import _HOP_BY_HOP  # shared constant, not public API

        req_headers = [
            (name, value)
            for name, value in headers
            if name.lower() not in _HOP_BY_HOP and name.lower() != "host"
        ]
        try:
            upstream_req = self._client.build_request(
                method, url, headers=req_headers, content=body
            )
            upstream = await self._client.send(upstream_req, stream=True)
            try:
                raw = b"".join([chunk async for chunk in upstream.aiter_raw()])
            finally:
                await upstream.aclose()
        except httpx.HTTPError as exc:
            _write_response(
                writer,
                502,
                [("content-type", "text/plain")],
                f"upstream failure: {exc}".encode(),
            )
            await writer.drain()
            return
        status, out_headers, out_body = await self.pipeline.process(
            url, upstream.status_code, upstream.headers.multi_items(), raw
        )
        _write_response(
            writer, status, out_headers, out_body, head_only=(method == "HEAD")
        )
        await writer.drain()

    async def _connect(
        self,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
        target: str,
    ) -> None:
        host, _, port_text = target.partition(":")
        port = int(port_text or "443")
        if self.config.tls_interception and self.ca is not None:
            writer.write(b"HTTP/1.1 200 Connection Established\r\n\r\n")
            await writer.drain()
            tls_reader, tls_writer = await _start_tls_server(
                reader, writer, self.ca.server_context(host)
            )
            default = "" if port == 443 else f":{port}"
            await self._session(
                tls_reader, tls_writer, scheme="https", host=f"{host}{default}"
            )
            return
        # No interception: blind byte tunnel.
        try:
            remote_reader, remote_writer = await asyncio.open_connection(host, port)
        except OSError as exc:
            _write_response(
                writer, 502, [("content-type", "text/plain")], str(exc).encode()
            )
            await writer.drain()
            return
        writer.write(b"HTTP/1.1 200 Connection Established\r\n\r\n")
        await writer.drain()
        await _pump_both(reader, writer, remote_reader, remote_writer)


async def _start_tls_server(
    reader: asyncio.StreamReader,
    writer: asyncio.StreamWriter,
    context,
) -> tuple:
    """Upgrade an accepted connection to server-side TLS (3.10 compatible)."""
    loop = asyncio.get_running_loop()
    protocol = writer.transport.get_protocol()
    new_transport = await loop.start_tls(
        writer.transport, protocol, context, server_side=True
    )
    if new_transport is None:
        raise ConnectionError("TLS handshake failed")
    new_writer = asyncio.StreamWriter(new_transport, protocol, reader, loop)
    return reader, new_writer


async def _pump(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
    try:
        while True:
            chunk = await reader.read(65536)
            if not chunk:
                break
            writer.write(chunk)
            await writer.drain()
    except (ConnectionError, OSError):
        pass
    finally:
        try:
            writer.close()
        except (ConnectionError, OSError):
            pass


async def _pump_both(
    client_reader: asyncio.StreamReader,
    client_writer: asyncio.StreamWriter,
    remote_reader: asyncio.StreamReader,
    remote_writer: asyncio.StreamWriter,
) -> None:
    await asyncio.gather(
        _pump(client_reader, remote_writer),
        _pump(remote_reader, client_writer),
    )

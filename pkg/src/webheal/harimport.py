"""Import browser HTTP-archive (HAR) captures into trace archives.

HAR files carry requests and responses but no JavaScript errors; an optional
sidecar error log fills that gap. Duplicate requests for the same
(method, url) keep the first recorded response.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Optional

from .errorintel import classify_error, parse_failure_point
from .model import (
    ContentKind,
    FailurePoint,
    JsError,
    MalformedUrl,
    Resource,
    TraceResource,
    WebTrace,
    normalize_url,
)
from .trace import CorruptArchive, TraceArchive, load_archive, save_archive

__all__ = ["HarImportError", "import_har", "load_error_log"]


class HarImportError(ValueError):
    """The HAR file cannot be converted to a trace archive."""


def _canon(url: str) -> str:
    try:
        return normalize_url(url)
    except MalformedUrl:
        return url


def _entry_body(content: dict) -> bytes:
    text = content.get("text")
    if text is None:
        return b""
    if content.get("encoding") == "base64":
        try:
            return base64.b64decode(text)
        except (ValueError, TypeError) as exc:
            raise HarImportError(f"undecodable base64 body: {exc}") from exc
    return text.encode("utf-8", errors="surrogateescape")


def _entry_headers(response: dict) -> list:
    headers = []
    for item in response.get("headers", []):
        name = item.get("name")
        value = item.get("value", "")
        if name:
            headers.append((name, value))
    return headers


def parse_error_entry(item: dict) -> JsError:
    """One error-log entry: either a structured record or a raw console
    report ({message, source?, line?, column?, stack?, page_url})."""
    if "error_type" in item:
        return JsError.from_dict(item)
    message = item.get("message", "")
    error_type, identifier = classify_error(message)
    fp: Optional[FailurePoint] = None
    if item.get("stack"):
        fp = parse_failure_point(item["stack"])
    if fp is None and item.get("source"):
        line = item.get("line")
        column = item.get("column")
        fp = FailurePoint(
            resource_url=item["source"],
            line=int(line) if line else None,
            column=int(column) - 1 if column else None,
        )
    return JsError(
        error_type=error_type,
        identifier=identifier,
        raw_message=message,
        failure_point=fp,
        page_url=item.get("page_url", ""),
        observed_at=item.get("observed_at", ""),
    )


def load_error_log(path: Path) -> list:
    """Read a sidecar error log: a JSON list of structured or raw entries."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise HarImportError("error log must be a JSON list")
    return [parse_error_entry(item) for item in raw]


def import_har(
    har_path: Path,
    dest_dir: Path,
    *,
    page_url: Optional[str] = None,
    errors_path: Optional[Path] = None,
) -> TraceArchive:
    """Convert a HAR capture into an archive directory and load it back,
    so the result is validated the same way any archive is."""
    try:
        har = json.loads(Path(har_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise HarImportError(f"unreadable HAR file: {exc}") from exc
    log = har.get("log")
    if not isinstance(log, dict):
        raise HarImportError("not a HAR file: no log object")
    entries = log.get("entries", [])
    if not entries:
        raise HarImportError("HAR has no entries")

    resources = []
    seen: set = set()
    first_html: Optional[str] = None
    for entry in entries:
        request = entry.get("request", {})
        response = entry.get("response", {})
        method = str(request.get("method", "GET")).upper()
        url = request.get("url")
        status = int(response.get("status", 0))
        if not url or status == 0:
            continue
        key = (method, _canon(url))
        if key in seen:
            continue
        seen.add(key)
        resource = Resource.build(
            url=url,
            headers=_entry_headers(response),
            body=_entry_body(response.get("content", {})),
        )
        if (
            first_html is None
            and method == "GET"
            and resource.content_kind is ContentKind.Html
        ):
            first_html = url
        resources.append(TraceResource(method=method, status=status, resource=resource))

    page = page_url or first_html
    if page is None:
        raise HarImportError("no HTML document in HAR; pass the page URL explicitly")

    errors = load_error_log(errors_path) if errors_path else []
    pages = log.get("pages") or [{}]
    collected_at = pages[0].get("startedDateTime", "") if pages else ""
    trace = WebTrace(
        page_url=page,
        resources=tuple(resources),
        errors=tuple(errors),
        collected_at=collected_at,
    )
    try:
        save_archive(trace, Path(dest_dir))
        return load_archive(Path(dest_dir))
    except CorruptArchive as exc:
        raise HarImportError(f"HAR does not form a valid archive: {exc}") from exc

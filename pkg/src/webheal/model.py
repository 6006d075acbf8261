"""Shared domain types and canonicalization rules.

Everything here is an immutable value object: safe to share across tasks
without coordination. Serialization is plain JSON with the field names used
by the trace archive, the backend store, and evaluator reports.
"""

from __future__ import annotations

import base64
import enum
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional
from urllib.parse import urlsplit, urlunsplit


class MalformedUrl(ValueError):
    """Raised when a URL cannot be parsed at all."""


class ContentKind(enum.Enum):
    Html = "Html"
    Script = "Script"
    Json = "Json"
    Css = "Css"
    Image = "Image"
    Font = "Font"
    Media = "Media"
    Other = "Other"


class ErrorType(enum.Enum):
    """Console-error message families, ranked by field frequency."""

    NotDefined = "NotDefined"
    CannotReadPropertyOfNull = "CannotReadPropertyOfNull"
    NotAFunction = "NotAFunction"
    UnexpectedToken = "UnexpectedToken"
    CannotSetPropertyOfNull = "CannotSetPropertyOfNull"
    InvalidToken = "InvalidToken"
    UnexpectedIdentifier = "UnexpectedIdentifier"
    ScriptErrorFor = "ScriptErrorFor"
    ManifestError = "ManifestError"
    AdsbygoogleNoSlot = "AdsbygoogleNoSlot"
    Unknown = "Unknown"


class StrategyKind(enum.Enum):
    """The five healing strategies, declared in engine precedence order."""

    HttpsRedirector = "HttpsRedirector"
    LibraryInjector = "LibraryInjector"
    HtmlElementCreator = "HtmlElementCreator"
    ObjectCreator = "ObjectCreator"
    LineSkipper = "LineSkipper"


# Display names used in operator-facing reports.
STRATEGY_DISPLAY_NAMES = {
    StrategyKind.HttpsRedirector: "HTTP/HTTPS Redirector",
    StrategyKind.LibraryInjector: "Library Injector",
    StrategyKind.HtmlElementCreator: "HTML Element Creator",
    StrategyKind.ObjectCreator: "Object Creator",
    StrategyKind.LineSkipper: "Line Skipper",
}

STRATEGY_PRECEDENCE = list(StrategyKind)

_UUID4_RE = re.compile(
    r"^[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}$"
)


def is_page_uuid(text: str) -> bool:
    """Whether text is a canonical lowercase version-4 UUID."""
    return bool(_UUID4_RE.match(text))

# RFC 3986 unreserved characters: decoding these escapes never changes meaning.
_UNRESERVED = (
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~"
)
_PCT_RE = re.compile(r"%([0-9a-fA-F]{2})")

_DEFAULT_PORTS = {"http": "80", "https": "443"}


def _normalize_percent(component: str) -> str:
    """Decode %XX escapes of unreserved chars, uppercase the hex of the rest."""

    def repl(m: re.Match[str]) -> str:
        char = chr(int(m.group(1), 16))
        if char in _UNRESERVED:
            return char
        return "%" + m.group(1).upper()

    return _PCT_RE.sub(repl, component)


def normalize_url(url: str) -> str:
    """Canonicalize a URL for identity comparisons and store lookups.

    Lowercases scheme and host, drops default ports and the fragment,
    preserves the query, and normalizes percent-encoding. Idempotent.
    Relative inputs are normalized as far as their parts allow.
    """
    if not isinstance(url, str) or not url.strip():
        raise MalformedUrl(f"not a URL: {url!r}")
    try:
        parts = urlsplit(url.strip())
    except ValueError as exc:
        raise MalformedUrl(f"cannot parse URL {url!r}: {exc}") from None
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    if parts.netloc:
        netloc = host
        if parts.port is not None:
            port = str(parts.port)
            if _DEFAULT_PORTS.get(scheme) != port:
                netloc += f":{port}"
        if parts.username:
            userinfo = parts.username
            if parts.password:
                userinfo += f":{parts.password}"
            netloc = f"{userinfo}@{netloc}"
    else:
        netloc = ""
    path = _normalize_percent(parts.path)
    if netloc and not path:
        path = "/"
    query = _normalize_percent(parts.query)
    result = urlunsplit((scheme, netloc, path, query, ""))
    if not result:
        raise MalformedUrl(f"no URL left after dropping the fragment: {url!r}")
    return result


def is_absolute_http_url(url: str) -> bool:
    try:
        parts = urlsplit(url)
    except ValueError:
        return False
    return parts.scheme in ("http", "https") and bool(parts.netloc)


_KIND_BY_MIME = {
    "text/html": ContentKind.Html,
    "application/xhtml+xml": ContentKind.Html,
    "application/javascript": ContentKind.Script,
    "application/x-javascript": ContentKind.Script,
    "application/ecmascript": ContentKind.Script,
    "text/javascript": ContentKind.Script,
    "text/ecmascript": ContentKind.Script,
    "application/json": ContentKind.Json,
    "text/json": ContentKind.Json,
    "text/css": ContentKind.Css,
}

# Content types that do not pin down a kind; fall through to the extension.
_AMBIGUOUS_MIME = {"text/plain", "application/octet-stream", ""}

_KIND_BY_EXTENSION = {
    **{ext: ContentKind.Html for ext in (".html", ".htm", ".xhtml")},
    **{ext: ContentKind.Script for ext in (".js", ".mjs")},
    ".json": ContentKind.Json,
    ".css": ContentKind.Css,
    **{
        ext: ContentKind.Image
        for ext in (".png", ".jpg", ".jpeg", ".gif", ".webp", ".svg", ".ico", ".bmp", ".avif")
    },
    **{ext: ContentKind.Font for ext in (".woff", ".woff2", ".ttf", ".otf", ".eot")},
    **{
        ext: ContentKind.Media
        for ext in (".mp3", ".mp4", ".webm", ".ogg", ".wav", ".avi", ".mov", ".m4a", ".m4v")
    },
}


def header_value(headers: Iterable[tuple[str, str]], name: str) -> Optional[str]:
    """First header value matching ``name`` case-insensitively, or None."""
    lname = name.lower()
    for key, value in headers:
        if key.lower() == lname:
            return value
    return None


def classify_content(headers: Iterable[tuple[str, str]], url: str) -> ContentKind:
    """Derive a content kind from headers and URL. Total; never reads the body.

    An explicit Content-Type wins; ambiguous or missing types fall back to
    the URL's path extension; everything else is Other.
    """
    raw = header_value(headers, "Content-Type") or ""
    mime = raw.split(";", 1)[0].strip().lower()
    if mime in _KIND_BY_MIME:
        return _KIND_BY_MIME[mime]
    if mime not in _AMBIGUOUS_MIME:
        if mime.endswith("+json"):
            return ContentKind.Json
        if mime.startswith("image/"):
            return ContentKind.Image
        if mime.startswith("font/") or mime.startswith("application/font") or mime.startswith("application/x-font") or mime == "application/vnd.ms-fontobject":
            return ContentKind.Font
        if mime.startswith("audio/") or mime.startswith("video/"):
            return ContentKind.Media
        return ContentKind.Other
    try:
        path = urlsplit(url).path
    except ValueError:
        path = ""
    dot = path.rfind(".")
    if dot != -1:
        ext = path[dot:].lower()
        if ext in _KIND_BY_EXTENSION:
            return _KIND_BY_EXTENSION[ext]
    return ContentKind.Other


@dataclass(frozen=True)
class Resource:
    """A URL-addressed unit of web content: headers plus body bytes."""

    url: str
    headers: tuple[tuple[str, str], ...]
    body: bytes
    content_kind: ContentKind

    @classmethod
    def build(cls, url: str, headers: Iterable[tuple[str, str]], body: bytes) -> "Resource":
        hdrs = tuple((str(k), str(v)) for k, v in headers)
        return cls(url=url, headers=hdrs, body=body, content_kind=classify_content(hdrs, url))

    def to_dict(self) -> dict[str, Any]:
        return {
            "url": self.url,
            "headers": [list(h) for h in self.headers],
            "body": base64.b64encode(self.body).decode("ascii"),
            "content_kind": self.content_kind.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Resource":
        return cls(
            url=data["url"],
            headers=tuple((h[0], h[1]) for h in data["headers"]),
            body=base64.b64decode(data["body"]),
            content_kind=ContentKind(data["content_kind"]),
        )


@dataclass(frozen=True)
class FailurePoint:
    """Where an uncaught error was thrown: (resource URL, line, column).

    ``resource_url`` is absent for the unloaded-script case. Lines are
    1-based; columns are 0-based (browser stack columns are shifted down by
    one on ingestion). A missing column is recorded as 0.
    """

    resource_url: Optional[str] = None
    line: Optional[int] = None
    column: Optional[int] = None

    def __post_init__(self) -> None:
        if self.line is not None and self.line < 1:
            raise ValueError(f"line must be >= 1, got {self.line}")
        if self.column is not None and self.column < 0:
            raise ValueError(f"column must be >= 0, got {self.column}")

    def to_dict(self) -> dict[str, Any]:
        return {"resource_url": self.resource_url, "line": self.line, "column": self.column}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FailurePoint":
        return cls(
            resource_url=data.get("resource_url"),
            line=data.get("line"),
            column=data.get("column"),
        )


@dataclass(frozen=True)
class JsError:
    """A structured browser console error."""

    error_type: ErrorType
    identifier: Optional[str]
    raw_message: str
    failure_point: Optional[FailurePoint]
    page_url: str
    observed_at: str  # ISO-8601

    def to_dict(self) -> dict[str, Any]:
        return {
            "error_type": self.error_type.value,
            "identifier": self.identifier,
            "raw_message": self.raw_message,
            "failure_point": self.failure_point.to_dict() if self.failure_point else None,
            "page_url": self.page_url,
            "observed_at": self.observed_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "JsError":
        return cls(
            error_type=ErrorType(data["error_type"]),
            identifier=data.get("identifier"),
            raw_message=data["raw_message"],
            failure_point=(
                FailurePoint.from_dict(data["failure_point"])
                if data.get("failure_point")
                else None
            ),
            page_url=data["page_url"],
            observed_at=data["observed_at"],
        )


def _key_escape(part: str) -> str:
    # Keep the identity key injective: escape the separator itself.
    return part.replace("%", "%25").replace("|", "%7C")


def error_identity_key(error: JsError) -> str:
    """Stable identity of an error: type + identifier + location.

    Timestamps are deliberately excluded; traces are compared structurally.
    """
    fp = error.failure_point or FailurePoint()
    if fp.resource_url:
        try:
            location = normalize_url(fp.resource_url)
        except MalformedUrl:
            location = fp.resource_url
    else:
        location = ""
    return "|".join(
        [
            error.error_type.value,
            _key_escape(error.identifier or ""),
            _key_escape(location),
            str(fp.line) if fp.line is not None else "",
            str(fp.column) if fp.column is not None else "",
        ]
    )


@dataclass(frozen=True)
class TraceResource:
    """A trace entry: a resource plus the request metadata that fetched it."""

    method: str
    status: int
    resource: Resource

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method, "status": self.status, **self.resource.to_dict()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TraceResource":
        return cls(method=data["method"], status=int(data["status"]), resource=Resource.from_dict(data))


@dataclass(frozen=True)
class WebTrace:
    """One observed page load: its URL, resources, and console errors."""

    page_url: str
    resources: tuple[TraceResource, ...]
    errors: tuple[JsError, ...]
    collected_at: str  # ISO-8601

    def html_documents(self) -> list[TraceResource]:
        page = normalize_url(self.page_url)
        return [
            tr
            for tr in self.resources
            if tr.resource.content_kind is ContentKind.Html
            and normalize_url(tr.resource.url) == page
        ]

    def unmatched_error_refs(self) -> list[str]:
        """Failure-point URLs that name no recorded resource."""
        known = {normalize_url(tr.resource.url) for tr in self.resources}
        missing = []
        for err in self.errors:
            ref = err.failure_point.resource_url
            if not ref:
                continue
            try:
                canon = normalize_url(ref)
            except MalformedUrl:
                canon = ref
            if canon not in known:
                missing.append(ref)
        return missing

    def to_dict(self) -> dict[str, Any]:
        return {
            "page_url": self.page_url,
            "resources": [tr.to_dict() for tr in self.resources],
            "errors": [e.to_dict() for e in self.errors],
            "collected_at": self.collected_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WebTrace":
        return cls(
            page_url=data["page_url"],
            resources=tuple(TraceResource.from_dict(r) for r in data["resources"]),
            errors=tuple(JsError.from_dict(e) for e in data["errors"]),
            collected_at=data["collected_at"],
        )


@dataclass(frozen=True)
class StrategyActivation:
    """Evidence that a strategy's rewritten code path executed for a page load."""

    page_uuid: str
    strategy: StrategyKind
    target_error: str  # error identity key
    resource_url: str
    occurred_at: str  # ISO-8601

    def __post_init__(self) -> None:
        if not _UUID4_RE.match(self.page_uuid):
            raise ValueError(f"not a canonical v4 UUID: {self.page_uuid!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "page_uuid": self.page_uuid,
            "strategy": self.strategy.value,
            "target_error": self.target_error,
            "resource_url": self.resource_url,
            "occurred_at": self.occurred_at,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StrategyActivation":
        return cls(
            page_uuid=data["page_uuid"],
            strategy=StrategyKind(data["strategy"]),
            target_error=data["target_error"],
            resource_url=data["resource_url"],
            occurred_at=data["occurred_at"],
        )


def dump_record(obj: Any) -> str:
    """One-line JSON for any domain value with a ``to_dict``."""
    return json.dumps(obj.to_dict(), sort_keys=True, separators=(",", ":"))

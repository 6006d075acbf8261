"""Web-trace archives: an on-disk format for recorded page loads.

An archive is one directory per trace:

    manifest.json      page_url, collected_at, errors, resource index
    bodies/<sha256>    response bodies, named by content hash

Bodies are content-addressed so archives diff cleanly and tampering is
detectable at load time. Archives are immutable once written; replay never
mutates them.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .model import (
    ContentKind,
    JsError,
    MalformedUrl,
    Resource,
    TraceResource,
    WebTrace,
    error_identity_key,
    normalize_url,
)

__all__ = [
    "ARCHIVE_VERSION",
    "CorruptArchive",
    "DENIAL_HEADER",
    "DENIAL_STATUS",
    "TraceArchive",
    "load_archive",
    "reproduction_check",
    "save_archive",
]

ARCHIVE_VERSION = "v1"

# Replay responses for never-recorded requests carry this marker so clients
# can tell a replay denial from a recorded 404.
DENIAL_STATUS = 404
DENIAL_HEADER = ("x-selfheal-replay", "denied")


class CorruptArchive(ValueError):
    """Archive validation failure; the message names the failed invariant."""


def _canon(url: str) -> str:
    try:
        return normalize_url(url)
    except MalformedUrl:
        return url


@dataclass(frozen=True)
class TraceArchive:
    """A validated, loaded trace with constant-time resource lookup."""

    path: Path
    trace: WebTrace

    @property
    def page_url(self) -> str:
        return self.trace.page_url

    @property
    def errors(self) -> tuple:
        return self.trace.errors

    def lookup(self, method: str, url: str) -> Optional[TraceResource]:
        """The recorded response for (method, canonical url), if any."""
        return self._index().get((method.upper(), _canon(url)))

    def _index(self) -> dict:
        index = getattr(self, "_lookup_cache", None)
        if index is None:
            index = {
                (tr.method.upper(), _canon(tr.resource.url)): tr
                for tr in self.trace.resources
            }
            object.__setattr__(self, "_lookup_cache", index)
        return index


def save_archive(trace: WebTrace, path: Path) -> None:
    """Write a trace as an archive directory. Refuses duplicate resources."""
    path = Path(path)
    keys = Counter(
        (tr.method.upper(), _canon(tr.resource.url)) for tr in trace.resources
    )
    duplicates = [key for key, n in keys.items() if n > 1]
    if duplicates:
        raise CorruptArchive(
            f"duplicate resource for (method, url): {duplicates[0]!r}"
        )
    bodies = path / "bodies"
    bodies.mkdir(parents=True, exist_ok=True)
    resources = []
    for tr in trace.resources:
        digest = hashlib.sha256(tr.resource.body).hexdigest()
        body_file = bodies / digest
        if not body_file.exists():
            body_file.write_bytes(tr.resource.body)
        resources.append(
            {
                "method": tr.method.upper(),
                "url": tr.resource.url,
                "status": tr.status,
                "headers": [list(h) for h in tr.resource.headers],
                "body": digest,
            }
        )
    manifest = {
        "version": ARCHIVE_VERSION,
        "page_url": trace.page_url,
        "collected_at": trace.collected_at,
        "errors": [error.to_dict() for error in trace.errors],
        "resources": resources,
    }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_archive(path: Path) -> TraceArchive:
    """Load and validate an archive; raises CorruptArchive on the first
    violated invariant."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise CorruptArchive(f"manifest missing: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptArchive(f"manifest unreadable: {exc}") from exc
    if manifest.get("version") != ARCHIVE_VERSION:
        raise CorruptArchive(
            f"unsupported archive version: {manifest.get('version')!r}"
        )
    page_url = manifest.get("page_url")
    if not page_url:
        raise CorruptArchive("manifest has no page_url")

    resources = []
    seen: set = set()
    for entry in manifest.get("resources", []):
        method = str(entry.get("method", "GET")).upper()
        url = entry.get("url")
        if not url:
            raise CorruptArchive("resource entry has no url")
        key = (method, _canon(url))
        if key in seen:
            raise CorruptArchive(f"duplicate resource for (method, url): {key!r}")
        seen.add(key)
        digest = entry.get("body", "")
        body_file = path / "bodies" / digest
        if not body_file.is_file():
            raise CorruptArchive(f"missing body file: {digest}")
        body = body_file.read_bytes()
        if hashlib.sha256(body).hexdigest() != digest:
            raise CorruptArchive(f"body file content does not match its name: {digest}")
        headers = [tuple(h) for h in entry.get("headers", [])]
        resources.append(
            TraceResource(
                method=method,
                status=int(entry.get("status", 200)),
                resource=Resource.build(url=url, headers=headers, body=body),
            )
        )

    page_key = ("GET", _canon(page_url))
    tops = [
        tr
        for tr in resources
        if ("GET", _canon(tr.resource.url)) == page_key
        and tr.resource.content_kind is ContentKind.Html
    ]
    if not tops:
        raise CorruptArchive(f"no top HTML document for page_url: {page_url}")

    errors = []
    for raw in manifest.get("errors", []):
        try:
            errors.append(JsError.from_dict(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptArchive(f"error entry malformed: {exc}") from exc

    trace = WebTrace(
        page_url=page_url,
        resources=tuple(resources),
        errors=tuple(errors),
        collected_at=manifest.get("collected_at", ""),
    )
    return TraceArchive(path=path, trace=trace)


def reproduction_check(archive: TraceArchive, observed_errors: Iterable[JsError]) -> bool:
    """True iff the replayed page produced exactly the recorded errors
    (multiset of identity keys)."""
    recorded = Counter(error_identity_key(e) for e in archive.errors)
    observed = Counter(error_identity_key(e) for e in observed_errors)
    return recorded == observed

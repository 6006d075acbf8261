"""HTML response rewriting.

All operations here are pure text transforms over a decoded HTML document.
The document is never rebuilt from a parse tree: every edit is a splice into
the original text at offsets recovered from a position-tracking parse, so
untouched markup survives byte for byte (attribute order, whitespace,
entities, and tag-soup oddities included).
"""

from __future__ import annotations

import codecs
import json
import re
from dataclasses import dataclass, replace
from html import escape as html_escape
from html.parser import HTMLParser
from importlib import resources
from typing import Optional

from .errorintel import DomQuery, LibraryRule

__all__ = [
    "HtmlDocument",
    "InlineScript",
    "MONITOR_ENDPOINT_PLACEHOLDER",
    "MONITOR_UUID_PLACEHOLDER",
    "build_document",
    "create_missing_element",
    "decode_html_body",
    "default_monitor_snippet",
    "inject_library",
    "inject_monitor",
    "inline_scripts",
    "insecure_subresource_tags",
    "redirect_http_to_https",
    "serialize",
]

MONITOR_UUID_PLACEHOLDER = "__SELFHEAL_PAGE_UUID__"
MONITOR_ENDPOINT_PLACEHOLDER = "__SELFHEAL_ENDPOINT__"

# Tags whose src/href attributes get the http -> https rewrite. Anchors are
# deliberately absent: rewriting navigation links changes the site, not the
# page's own subresource loading.
_REDIRECT_TAGS = frozenset({"script", "link", "img", "iframe"})

# charset=... inside a Content-Type header or a <meta> tag.
# e.g. 'text/html; charset=ISO-8859-1' or '<meta charset="utf-8">'
_CHARSET_PARAM_RE = re.compile(rb"charset\s*=\s*[\"']?([A-Za-z0-9_.:\-]+)", re.IGNORECASE)

# Raw start tag pieces, matched sequentially so a value that happens to
# contain 'src=' text is never mistaken for an attribute.
# e.g. <img → tag open; alt="x" → one attribute token
_TAG_OPEN_RE = re.compile(r"<[a-zA-Z][^\s/>]*")
_ATTR_TOKEN_RE = re.compile(
    r"[\s/]*([^\s/>=]+)(?:\s*=\s*(\"[^\"]*\"|'[^']*'|[^\s>]*))?"
)

# Leading http:// of an attribute value, tolerating the whitespace browsers
# strip from URL attributes. e.g. ' HTTP://a.com' -> ' https://a.com'
_HTTP_PREFIX_RE = re.compile(r"^(\s*)http://", re.IGNORECASE)


@dataclass(frozen=True)
class HtmlDocument:
    """A decoded HTML document plus what is needed to re-encode it."""

    text: str
    encoding: str

    def with_text(self, text: str) -> "HtmlDocument":
        return replace(self, text=text)


@dataclass(frozen=True)
class InlineScript:
    """One inline <script> body with its position in the page text.

    line/column locate the first character of the script source within the
    page (1-based line, 0-based column), so page-level error coordinates can
    be translated into script-local ones.
    """

    start: int
    end: int
    line: int
    column: int
    source: str


def _resolve_encoding(name: str) -> Optional[str]:
    try:
        return codecs.lookup(name).name
    except LookupError:
        return None


def decode_html_body(body: bytes, content_type: Optional[str] = None) -> HtmlDocument:
    """Decode response bytes into an HtmlDocument.

    Charset priority: Content-Type header parameter, then a <meta> charset in
    the first 2048 bytes, then utf-8. Decoding uses surrogateescape so that
    serialize() restores undecodable bytes exactly as they arrived.
    """
    encoding = None
    if content_type:
        match = _CHARSET_PARAM_RE.search(content_type.encode("ascii", "ignore"))
        if match:
            encoding = _resolve_encoding(match.group(1).decode("ascii"))
    if encoding is None:
        match = _CHARSET_PARAM_RE.search(body[:2048])
        if match:
            encoding = _resolve_encoding(match.group(1).decode("ascii"))
    if encoding is None or encoding in ("utf-16", "utf-32"):
        # Multibyte UTFs would need BOM handling that surrogateescape
        # round-tripping does not give us; utf-8 keeps the bytes intact.
        encoding = "utf-8"
    text = body.decode(encoding, errors="surrogateescape")
    return HtmlDocument(text=text, encoding=encoding)


def build_document(body: bytes, content_type: Optional[str] = None) -> HtmlDocument:
    return decode_html_body(body, content_type)


def serialize(doc: HtmlDocument) -> bytes:
    return doc.text.encode(doc.encoding, errors="surrogateescape")


class _Scan(HTMLParser):
    """One positional pass over the document.

    Records absolute offsets for the structural anchors the rewrite
    operations need. html.parser is tolerant of tag soup, which is exactly
    the behavior wanted here: real pages with unclosed tags still scan.
    """

    def __init__(self, text: str) -> None:
        super().__init__(convert_charrefs=True)
        self._text = text
        self._line_starts = [0]
        for i, ch in enumerate(text):
            if ch == "\n":
                self._line_starts.append(i + 1)
        self.head_content_start: Optional[int] = None
        self.body_content_start: Optional[int] = None
        self.body_end_start: Optional[int] = None
        self.first_script_start: Optional[int] = None
        self.ids: set = set()
        self.script_srcs: list = []
        self.redirect_tags: list = []  # (abs_offset, raw_start_tag_text)
        self.inline_scripts: list = []
        self._script_depth = 0
        self._pending_script: Optional[tuple] = None

    def _abs(self) -> int:
        line, col = self.getpos()
        return self._line_starts[line - 1] + col

    # -- tag handling -------------------------------------------------

    def _record_start(self, tag: str, attrs, self_closing: bool) -> None:
        raw = self.get_starttag_text() or ""
        offset = self._abs()
        attr_map = {}
        for name, value in attrs:
            if name not in attr_map:
                attr_map[name] = value
        if "id" in attr_map and attr_map["id"] is not None:
            self.ids.add(attr_map["id"])
        if tag == "head" and self.head_content_start is None:
            self.head_content_start = offset + len(raw)
        elif tag == "body" and self.body_content_start is None:
            self.body_content_start = offset + len(raw)
        if tag == "script":
            if self.first_script_start is None:
                self.first_script_start = offset
            src = attr_map.get("src")
            if src is not None:
                self.script_srcs.append(src.strip())
            elif not self_closing:
                content_start = offset + len(raw)
                self._pending_script = (content_start,)
        if tag in _REDIRECT_TAGS:
            for name in ("src", "href"):
                value = attr_map.get(name)
                if value is not None and value.lstrip().lower().startswith("http://"):
                    self.redirect_tags.append((offset, raw, tag))
                    break

    def handle_starttag(self, tag, attrs):
        self._record_start(tag, attrs, self_closing=False)
        if tag == "script":
            self._script_depth += 1

    def handle_startendtag(self, tag, attrs):
        self._record_start(tag, attrs, self_closing=True)

    def handle_endtag(self, tag):
        if tag == "script" and self._script_depth > 0:
            self._script_depth -= 1
            if self._pending_script is not None:
                (content_start,) = self._pending_script
                content_end = self._abs()
                line = self._text.count("\n", 0, content_start) + 1
                column = content_start - self._line_starts[line - 1]
                self.inline_scripts.append(
                    InlineScript(
                        start=content_start,
                        end=content_end,
                        line=line,
                        column=column,
                        source=self._text[content_start:content_end],
                    )
                )
                self._pending_script = None
        elif tag == "body" and self.body_end_start is None:
            self.body_end_start = self._abs()


def _scan(doc: HtmlDocument) -> _Scan:
    scan = _Scan(doc.text)
    scan.feed(doc.text)
    scan.close()
    return scan


def inline_scripts(doc: HtmlDocument) -> list:
    """All inline script bodies, in document order."""
    return list(_scan(doc).inline_scripts)


def insecure_subresource_tags(doc: HtmlDocument) -> list:
    """Tag names (may repeat) carrying an http:// src or href value."""
    return [tag for _offset, _raw, tag in _scan(doc).redirect_tags]


# -- operations ---------------------------------------------------------


def redirect_http_to_https(doc: HtmlDocument, page_is_https: bool) -> tuple:
    """Rewrite http:// subresource URLs to https:// on an https page.

    Touches only src/href attribute values with an exact http:// prefix on
    script, link, img, and iframe tags. Protocol-relative and data: URLs
    never match. Returns (document, number of attributes rewritten).
    """
    if not page_is_https:
        return doc, 0
    scan = _scan(doc)
    if not scan.redirect_tags:
        return doc, 0
    count = 0
    pieces = []
    cursor = 0
    for offset, raw, _tag in sorted(scan.redirect_tags):
        rewritten, tag_count = _rewrite_tag_urls(raw)
        if tag_count == 0:
            continue
        pieces.append(doc.text[cursor:offset])
        pieces.append(rewritten)
        cursor = offset + len(raw)
        count += tag_count
    if count == 0:
        return doc, 0
    pieces.append(doc.text[cursor:])
    return doc.with_text("".join(pieces)), count


def _rewrite_tag_urls(raw_tag: str) -> tuple:
    open_match = _TAG_OPEN_RE.match(raw_tag)
    if not open_match:
        return raw_tag, 0
    pos = open_match.end()
    pieces = [raw_tag[:pos]]
    count = 0
    while pos < len(raw_tag):
        token = _ATTR_TOKEN_RE.match(raw_tag, pos)
        if not token or token.end() == pos:
            pieces.append(raw_tag[pos:])
            break
        name, value = token.group(1), token.group(2)
        if name.lower() in ("src", "href") and value:
            quote = ""
            inner = value
            if value[:1] in ("\"", "'") and len(value) >= 2:
                quote = value[0]
                inner = value[1:-1]
            replaced, n = _HTTP_PREFIX_RE.subn(r"\1https://", inner, count=1)
            if n:
                pieces.append(raw_tag[pos : token.start(2)])
                pieces.append(quote + replaced + quote)
                pos = token.end()
                count += 1
                continue
        pieces.append(raw_tag[pos : token.end()])
        pos = token.end()
    return "".join(pieces), count


def create_missing_element(doc: HtmlDocument, query: DomQuery) -> tuple:
    """Append a hidden placeholder element for a DOM lookup that found nothing.

    The element lands as the last child of body so it cannot disturb layout
    order; with no body tag it is appended at the end of the document. An id
    already present anywhere in the page is never duplicated. Returns
    (document, created flag).
    """
    scan = _scan(doc)
    if query.argument in scan.ids:
        return doc, False
    element = '<div id="%s" style="display:none"></div>' % html_escape(
        query.argument, quote=True
    )
    insert_at = scan.body_end_start if scan.body_end_start is not None else len(doc.text)
    text = doc.text[:insert_at] + element + doc.text[insert_at:]
    return doc.with_text(text), True


def inject_library(doc: HtmlDocument, rule: LibraryRule) -> tuple:
    """Inject a missing library's script tag as the first child of head.

    With no head tag the script goes immediately before the first script tag
    so it still loads ahead of the code that needs it; with neither, it is
    prepended to the document. A script with the same src is never injected
    twice. Returns (document, injected flag).
    """
    scan = _scan(doc)
    if rule.inject_url in scan.script_srcs:
        return doc, False
    tag = '<script src="%s"></script>' % html_escape(rule.inject_url, quote=True)
    insert_at = _head_insert_point(scan, doc)
    text = doc.text[:insert_at] + tag + doc.text[insert_at:]
    return doc.with_text(text), True


def inject_monitor(
    doc: HtmlDocument,
    page_uuid: str,
    report_endpoint: str,
    snippet: Optional[str] = None,
) -> HtmlDocument:
    """Inject the error monitor as the first element of head.

    The snippet is parameterized with the page uuid and the reporting
    endpoint. Injecting after library injection keeps the required ordering:
    the monitor precedes injected libraries, which precede the original head
    content, so the monitor observes every script that runs after it.
    """
    if snippet is None:
        snippet = default_monitor_snippet()
    body = snippet.replace(
        '"%s"' % MONITOR_UUID_PLACEHOLDER, _js_string(page_uuid)
    ).replace('"%s"' % MONITOR_ENDPOINT_PLACEHOLDER, _js_string(report_endpoint))
    if "</script" in body.lower():
        raise ValueError("monitor snippet must not contain a script end tag")
    tag = "<script>%s</script>" % body
    scan = _scan(doc)
    insert_at = _head_insert_point(scan, doc)
    text = doc.text[:insert_at] + tag + doc.text[insert_at:]
    return doc.with_text(text)


def _head_insert_point(scan: _Scan, doc: HtmlDocument) -> int:
    if scan.head_content_start is not None:
        return scan.head_content_start
    if scan.first_script_start is not None:
        return scan.first_script_start
    return 0


def _js_string(value: str) -> str:
    # json.dumps gives a valid JS string literal; breaking "</" keeps the
    # literal from terminating the surrounding script tag.
    return json.dumps(value).replace("</", "<\\/")


_monitor_cache: Optional[str] = None


def default_monitor_snippet() -> str:
    global _monitor_cache
    if _monitor_cache is None:
        _monitor_cache = (
            resources.files("webheal").joinpath("assets/monitor.js").read_text("utf-8")
        )
    return _monitor_cache

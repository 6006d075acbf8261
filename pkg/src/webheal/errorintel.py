"""Console-error understanding: classification, stack parsing, detection.

Turns raw browser console text into structured errors, pulls failure
points out of stack traces, matches missing-library messages against a
configurable rule set, and recovers the DOM query behind a failed
element lookup.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from . import esparse
from .model import ErrorType, FailurePoint, JsError


class InvalidRule(ValueError):
    """A library rule fails its schema: bad pattern or non-https URL."""


@dataclass(frozen=True)
class LibraryRule:
    pattern: re.Pattern[str]
    library_name: str
    inject_url: str


@dataclass(frozen=True)
class DomQuery:
    kind: str  # only "ById"
    argument: str

    def __post_init__(self) -> None:
        if not self.argument:
            raise ValueError("empty DOM query argument")


def _strip_quotes(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


# Message families in field-frequency rank order; first match wins.
# Each entry: (type, compiled pattern, identifier group or None).
_FAMILY_PATTERNS: list[tuple[ErrorType, re.Pattern[str], Optional[int]]] = [
    # "Uncaught ReferenceError: jQuery is not defined"
    (ErrorType.NotDefined, re.compile(r"(\S+) is not defined"), 1),
    # "Uncaught TypeError: Cannot read property 'id' of null"
    (ErrorType.CannotReadPropertyOfNull, re.compile(r"Cannot read property (\S+) of null"), 1),
    # "Uncaught TypeError: $(...).modal is not a function"
    (ErrorType.NotAFunction, re.compile(r"(\S+(?:\(\.\.\.\)\.\S+)?) is not a function"), 1),
    # "Uncaught SyntaxError: Unexpected token <"
    (ErrorType.UnexpectedToken, re.compile(r"Unexpected token ?(\S*)"), 1),
    # "Uncaught TypeError: Cannot set property test of null"
    (ErrorType.CannotSetPropertyOfNull, re.compile(r"Cannot set property (\S+) of null"), 1),
    # "Uncaught SyntaxError: Invalid or unexpected token"
    (ErrorType.InvalidToken, re.compile(r"Invalid or unexpected token"), None),
    # "Uncaught SyntaxError: Unexpected identifier"
    (ErrorType.UnexpectedIdentifier, re.compile(r"Unexpected identifier"), None),
    # "Script error for: jquery" (loader-reported failure)
    (ErrorType.ScriptErrorFor, re.compile(r"Script error for:?\s+(\S+)"), 1),
    # Manifest rejected by the browser.
    (
        ErrorType.ManifestError,
        re.compile(r"The manifest specifies content that cannot be displayed"),
        None,
    ),
    # "adsbygoogle.push() error: No slot size for availableWidth=0"
    (ErrorType.AdsbygoogleNoSlot, re.compile(r"adsbygoogle\.push\(\) error: No slot"), None),
]

# The four families whose identifier drives a rewriting strategy.
IDENTIFIER_FAMILIES = {
    ErrorType.NotDefined,
    ErrorType.NotAFunction,
    ErrorType.CannotReadPropertyOfNull,
    ErrorType.CannotSetPropertyOfNull,
}


def classify_error(raw_message: str) -> tuple[ErrorType, Optional[str]]:
    """Match a console message against the known families, in rank order.

    Pure and total: anything unrecognized is (Unknown, None).
    """
    if not isinstance(raw_message, str) or not raw_message:
        return ErrorType.Unknown, None
    for error_type, pattern, group in _FAMILY_PATTERNS:
        match = pattern.search(raw_message)
        if not match:
            continue
        if group is None:
            return error_type, None
        identifier = _strip_quotes(match.group(group))
        return error_type, identifier or None
    return ErrorType.Unknown, None


_SYNTHETIC_TEMPLATES = {
    ErrorType.NotDefined: "Uncaught ReferenceError: {id} is not defined",
    ErrorType.CannotReadPropertyOfNull: "Uncaught TypeError: Cannot read property '{id}' of null",
    ErrorType.NotAFunction: "Uncaught TypeError: {id} is not a function",
    ErrorType.UnexpectedToken: "Uncaught SyntaxError: Unexpected token {id}",
    ErrorType.CannotSetPropertyOfNull: "Uncaught TypeError: Cannot set property {id} of null",
    ErrorType.InvalidToken: "Uncaught SyntaxError: Invalid or unexpected token",
    ErrorType.UnexpectedIdentifier: "Uncaught SyntaxError: Unexpected identifier",
    ErrorType.ScriptErrorFor: "Script error for: {id}",
    ErrorType.ManifestError: (
        "The manifest specifies content that cannot be displayed on this browser/platform."
    ),
    ErrorType.AdsbygoogleNoSlot: "adsbygoogle.push() error: No slot size for availableWidth=0",
}


def render_message(error_type: ErrorType, identifier: Optional[str] = None) -> str:
    """Synthesize a canonical console message; used to build fixtures."""
    template = _SYNTHETIC_TEMPLATES.get(error_type)
    if template is None:
        return "Uncaught Error: unclassified"
    return template.format(id=identifier if identifier is not None else "x")


# Short normalized labels, browser prefixes and quoting stripped.
_DISPLAY_TEMPLATES = {
    ErrorType.NotDefined: "{id} is not defined",
    ErrorType.CannotReadPropertyOfNull: "Cannot read property {id} of null",
    ErrorType.NotAFunction: "{id} is not a function",
    ErrorType.UnexpectedToken: "Unexpected token {id}",
    ErrorType.CannotSetPropertyOfNull: "Cannot set property {id} of null",
    ErrorType.InvalidToken: "Invalid or unexpected token",
    ErrorType.UnexpectedIdentifier: "Unexpected identifier",
    ErrorType.ScriptErrorFor: "Script error for: {id}",
    ErrorType.ManifestError: (
        "The manifest specifies content that cannot be displayed on this browser/platform."
    ),
    ErrorType.AdsbygoogleNoSlot: "adsbygoogle.push() error: No slot",
}


def display_message(error_type: ErrorType, identifier: Optional[str] = None) -> str:
    """Human-facing short form of an error family, e.g. for report lines."""
    template = _DISPLAY_TEMPLATES.get(error_type)
    if template is None:
        return "unclassified error"
    return template.format(id=identifier if identifier is not None else "XXX")


# Chrome frame: "    at func (http://x.com/a.js:10:5)" / "    at a.js:10"
_AT_FRAME_RE = re.compile(r"^\s*at\s+(?:async\s+)?(?:new\s+)?(?:.*?\s+\()?(?P<loc>[^()\s]\S*?)\)?\s*$")
# Chrome frame for the page itself: "    at (index):20"
_INDEX_FRAME_RE = re.compile(r"^\s*at\s+(?:.*?\s+\()?(?P<loc>\(index\):\d+(?::\d+)?)\)?\s*$")
# Firefox/Safari frame: "func@http://x.com/a.js:10:5"
_FF_FRAME_RE = re.compile(r"^\s*\S*@(?P<loc>\S+)\s*$")
# Location glued to the message: "$ is not defined at (index):20"
_TRAILING_AT_RE = re.compile(r"\sat\s+(?P<loc>\(index\):\d+(?::\d+)?|\S+:\d+(?::\d+)?)\s*$")

_LOC_LINE_COL_RE = re.compile(r"^(?P<src>.*):(?P<line>\d+):(?P<col>\d+)$")
_LOC_LINE_RE = re.compile(r"^(?P<src>.*):(?P<line>\d+)$")

# Frame sources that name no fetchable resource.
_NON_RESOURCE_SOURCES = {"<anonymous>", "native", "eval", "unknown", ""}


def _parse_location(loc: str) -> Optional[FailurePoint]:
    match = _LOC_LINE_COL_RE.match(loc) or _LOC_LINE_RE.match(loc)
    if not match:
        return None
    src = match.group("src").strip()
    line = int(match.group("line"))
    if line < 1:
        return None
    groups = match.groupdict()
    browser_col = int(groups["col"]) if groups.get("col") else None
    # Browser columns are 1-based; spans in this codebase are 0-based.
    column = max(browser_col - 1, 0) if browser_col is not None else 0
    if src in _NON_RESOURCE_SOURCES:
        return FailurePoint(resource_url=None, line=line, column=column)
    return FailurePoint(resource_url=src, line=line, column=column)


def parse_failure_point(error_text_with_stack: str) -> Optional[FailurePoint]:
    """Topmost parseable stack frame of a console error, or None.

    Accepts the concatenated message + stack text as browsers emit it.
    Never raises; an unlocatable error is an encoded None result.
    """
    if not isinstance(error_text_with_stack, str):
        return None
    for line in error_text_with_stack.splitlines():
        if not line.strip():
            continue
        for pattern in (_INDEX_FRAME_RE, _AT_FRAME_RE, _FF_FRAME_RE, _TRAILING_AT_RE):
            match = pattern.match(line) if pattern is not _TRAILING_AT_RE else pattern.search(line)
            if not match:
                continue
            point = _parse_location(match.group("loc"))
            if point is not None:
                return point
    return None


def load_library_rules(path: Optional[str] = None) -> list[LibraryRule]:
    """Load rules from a JSON file, or the bundled defaults."""
    if path is None:
        text = resources.files("webheal").joinpath("data/library_rules.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidRule(f"rule file is not valid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise InvalidRule("rule file must hold a list of rules")
    rules = []
    for i, entry in enumerate(raw):
        try:
            pattern = re.compile(entry["pattern"])
            library_name = str(entry["library_name"])
            inject_url = str(entry["inject_url"])
        except (KeyError, TypeError, re.error) as exc:
            raise InvalidRule(f"rule #{i}: {exc}") from None
        if not inject_url.startswith("https://"):
            raise InvalidRule(f"rule #{i}: inject_url must use https: {inject_url}")
        rules.append(LibraryRule(pattern=pattern, library_name=library_name, inject_url=inject_url))
    return rules


def detect_missing_library(error: JsError, rules: list[LibraryRule]) -> Optional[LibraryRule]:
    """First rule whose pattern matches the raw message; no fuzzy matching."""
    for rule in rules:
        if rule.pattern.search(error.raw_message):
            return rule
    return None


_BY_ID_ACCESSOR = "getElementById"


def _string_literal_value(node: esparse.Node) -> Optional[str]:
    if node.kind == "Literal" and node["literal_kind"] == "str":
        raw = node["raw"]
        return raw[1:-1]
    return None


def _is_by_id_call(node: esparse.Node) -> bool:
    if node.kind != "CallExpression":
        return False
    callee = node["callee"]
    return (
        callee is not None
        and callee.kind == "MemberExpression"
        and not callee["computed"]
        and callee["object"] is not None
        and callee["object"].kind == "Identifier"
        and callee["object"]["name"] == "document"
        and callee["property"]["name"] == _BY_ID_ACCESSOR
    )


def extract_dom_query(script_source: str, fp: FailurePoint) -> Optional[DomQuery]:
    """The element-by-id lookup at a failure point, if statically resolvable.

    Returns None when the statement has no such lookup or the id is not a
    plain string literal. Raises esparse.ParseError on unparseable source.
    """
    from .jsrewrite import locate_statement  # local import avoids a cycle

    statement = locate_statement(script_source, fp)
    if statement is None:
        return None
    for node in esparse.iter_nodes(statement):
        if not _is_by_id_call(node):
            continue
        args = node["arguments"]
        if len(args) != 1:
            continue
        value = _string_literal_value(args[0])
        if value:
            return DomQuery(kind="ById", argument=value)
    return None

"""Strategy selection and application for one response.

select_strategies() walks the fixed precedence order and claims each known
error for at most one strategy; heal() performs the chosen rewrites and
reports which of them actually changed the body. Both are pure functions of
the context, so identical inputs always produce byte-identical output.

Precedence puts root-cause fixes (redirecting blocked http loads, injecting
a missing library, creating a missing element, initializing a null object)
ahead of suppressing the failing statement outright.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlsplit

from . import jsrewrite
from .errorintel import (
    DomQuery,
    LibraryRule,
    detect_missing_library,
    extract_dom_query,
    load_library_rules,
)
from .esparse import ParseError
from .htmlrewrite import (
    HtmlDocument,
    InlineScript,
    create_missing_element,
    decode_html_body,
    inject_library,
    inject_monitor,
    inline_scripts,
    insecure_subresource_tags,
    redirect_http_to_https,
    serialize,
)
from .jsrewrite import (
    LINE_SKIPPER_TYPES,
    OBJECT_CREATOR_TYPES,
    RewriteEdit,
    RewritePlan,
    apply_plan,
)
from .model import (
    ContentKind,
    ErrorType,
    FailurePoint,
    JsError,
    MalformedUrl,
    Resource,
    StrategyActivation,
    StrategyKind,
    error_identity_key,
    normalize_url,
)

__all__ = [
    "HealingContext",
    "PlannedAction",
    "heal",
    "select_strategies",
]

# Error types whose healed symptom is a script that failed to load; when the
# page itself has http-blocked script tags, the redirector owns these.
_BLOCKED_SCRIPT_TYPES = frozenset({ErrorType.NotDefined, ErrorType.NotAFunction})

# Failure-point URL browsers report for code inline in the page itself.
_INLINE_PAGE_ALIAS = "(index)"

_DEFAULT_REPORT_ENDPOINT = "/__selfheal"


@dataclass(frozen=True)
class HealingContext:
    """Everything heal() may depend on. No hidden state, no clocks."""

    request_url: str
    response: Resource
    known_errors: tuple[JsError, ...]
    page_uuid: str
    request_headers: tuple[tuple[str, str], ...] = ()
    library_rules: Optional[tuple[LibraryRule, ...]] = None
    monitor_snippet: Optional[str] = None
    inject_monitor: bool = True
    report_endpoint: str = _DEFAULT_REPORT_ENDPOINT
    healed_at: str = ""

    def rules(self) -> list[LibraryRule]:
        if self.library_rules is None:
            return load_library_rules()
        return list(self.library_rules)


@dataclass(frozen=True)
class PlannedAction:
    """One strategy application: document-wide when error is None."""

    strategy: StrategyKind
    error: Optional[JsError] = None
    rule: Optional[LibraryRule] = None
    dom_query: Optional[DomQuery] = None
    # Where the failing statement lives: an inline script index for HTML
    # responses, None for a standalone script; fp is already script-local.
    script_index: Optional[int] = None
    local_fp: Optional[FailurePoint] = None


def select_strategies(ctx: HealingContext) -> list[PlannedAction]:
    """Claim each known error for the first strategy that can act on it."""
    return _plan(ctx)[0]


def heal(ctx: HealingContext) -> tuple[Resource, list[StrategyActivation]]:
    """Apply the selected strategies and return the possibly rewritten
    resource plus one activation expectation per rewrite that took effect.

    HTML responses always leave with the monitor and the page uuid, even
    when nothing was healed; any unparseable script is forwarded as-is.
    """
    actions, doc, scripts = _plan(ctx)
    resource = ctx.response
    if resource.content_kind is ContentKind.Html and doc is not None:
        return _heal_html(ctx, actions, doc, scripts)
    if resource.content_kind is ContentKind.Script:
        return _heal_script(ctx, actions)
    return resource, []


# -- selection ------------------------------------------------------------


def _plan(
    ctx: HealingContext,
) -> tuple[list[PlannedAction], Optional[HtmlDocument], list[InlineScript]]:
    resource = ctx.response
    is_html = resource.content_kind is ContentKind.Html
    is_script = resource.content_kind is ContentKind.Script

    doc: Optional[HtmlDocument] = None
    scripts: list[InlineScript] = []
    if is_html:
        doc = decode_html_body(
            resource.body, _content_type(resource.headers)
        )
        scripts = inline_scripts(doc)
    if not (is_html or is_script):
        return [], doc, scripts

    errors = _dedup_errors(ctx.known_errors)
    rules = ctx.rules()
    actions: list[PlannedAction] = []
    claimed: set = set()

    # 1. HTTP->HTTPS redirector: document-wide on an https page whose markup
    # still loads subresources over http.
    if is_html and doc is not None and errors and _is_https(resource.url):
        insecure = insecure_subresource_tags(doc)
        if insecure:
            actions.append(PlannedAction(StrategyKind.HttpsRedirector))
            if "script" in insecure:
                # An http script tag on an https page never loads, so the
                # "X is not defined" symptoms belong to the redirector.
                for error in errors:
                    if error.error_type in _BLOCKED_SCRIPT_TYPES:
                        claimed.add(error_identity_key(error))

    # 2. Library injector: an error matching a known-library message heals at
    # the HTML document, never inside the script that tripped over it.
    for error in errors:
        rule = detect_missing_library(error, rules)
        if rule is None:
            continue
        key = error_identity_key(error)
        if key in claimed:
            continue
        claimed.add(key)
        if is_html:
            actions.append(
                PlannedAction(StrategyKind.LibraryInjector, error, rule=rule)
            )

    # 3. HTML element creator: a null-property error at a statically
    # resolvable document.getElementById('...') call in this page.
    if is_html:
        for error in errors:
            if error.error_type not in OBJECT_CREATOR_TYPES:
                continue
            key = error_identity_key(error)
            if key in claimed:
                continue
            located = _locate_in_html(ctx, error, scripts)
            if located is None:
                continue
            index, local_fp = located
            try:
                query = extract_dom_query(scripts[index].source, local_fp)
            except ParseError:
                continue
            if query is None:
                continue
            claimed.add(key)
            actions.append(
                PlannedAction(
                    StrategyKind.HtmlElementCreator,
                    error,
                    dom_query=query,
                    script_index=index,
                    local_fp=local_fp,
                )
            )

    # 4 and 5. Object creator, then line skipper, on code in this resource.
    for strategy, types, attempt in (
        (StrategyKind.ObjectCreator, OBJECT_CREATOR_TYPES, _object_creator_works),
        (StrategyKind.LineSkipper, LINE_SKIPPER_TYPES, _line_skipper_works),
    ):
        for error in errors:
            if error.error_type not in types:
                continue
            key = error_identity_key(error)
            if key in claimed:
                continue
            if is_html:
                located = _locate_in_html(ctx, error, scripts)
                if located is None:
                    continue
                index, local_fp = located
                source = scripts[index].source
            else:
                if not _fp_in_resource(error, resource.url, is_html=False):
                    continue
                index = None
                local_fp = error.failure_point
                source, _ = _decode_script(resource)
            if local_fp is None or not attempt(source, local_fp, error):
                continue
            claimed.add(key)
            actions.append(
                PlannedAction(
                    strategy, error, script_index=index, local_fp=local_fp
                )
            )

    return actions, doc, scripts


def _object_creator_works(source: str, fp: FailurePoint, error: JsError) -> bool:
    try:
        jsrewrite.apply_object_creator(
            source, fp, error.identifier, error_type=error.error_type
        )
        return True
    except (jsrewrite.RewriteUnsupported, ParseError):
        return False


def _line_skipper_works(source: str, fp: FailurePoint, error: JsError) -> bool:
    try:
        jsrewrite.apply_line_skipper(
            source, fp, error.error_type, error.identifier
        )
        return True
    except (jsrewrite.RewriteUnsupported, ParseError):
        return False


def _dedup_errors(errors: tuple) -> list:
    seen: set = set()
    result = []
    for error in errors:
        key = error_identity_key(error)
        if key in seen:
            continue
        seen.add(key)
        result.append(error)
    return result


def _is_https(url: str) -> bool:
    return urlsplit(url).scheme.lower() == "https"


def _content_type(headers: tuple) -> Optional[str]:
    for name, value in headers:
        if name.lower() == "content-type":
            return value
    return None


def _urls_match(left: str, right: str) -> bool:
    try:
        return normalize_url(left) == normalize_url(right)
    except MalformedUrl:
        return left == right


def _fp_in_resource(error: JsError, resource_url: str, *, is_html: bool) -> bool:
    fp = error.failure_point
    if fp is None or fp.resource_url is None:
        return False
    if fp.resource_url == _INLINE_PAGE_ALIAS:
        return is_html
    return _urls_match(fp.resource_url, resource_url)


def _locate_in_html(
    ctx: HealingContext, error: JsError, scripts: list
) -> Optional[tuple[int, FailurePoint]]:
    """Map a page-coordinate failure point into (inline script index,
    script-local failure point)."""
    if not _fp_in_resource(error, ctx.response.url, is_html=True):
        return None
    fp = error.failure_point
    if fp is None or fp.line is None:
        return None
    column = fp.column or 0
    best: Optional[int] = None
    for i, script in enumerate(scripts):
        end_line = script.line + script.source.count("\n")
        if not (script.line <= fp.line <= end_line):
            continue
        if fp.line == script.line and column and column < script.column:
            continue
        best = i if best is None else best
        # Prefer the rightmost script starting at or before the column.
        if scripts[i].line == fp.line and (
            not column or scripts[i].column <= column
        ):
            best = i
    if best is None:
        return None
    script = scripts[best]
    local_line = fp.line - script.line + 1
    local_col = column - script.column if local_line == 1 else column
    return best, FailurePoint(
        resource_url=None, line=local_line, column=max(local_col, 0)
    )


# -- application ----------------------------------------------------------


def _decode_script(resource: Resource) -> tuple[str, str]:
    content_type = _content_type(resource.headers) or ""
    encoding = "utf-8"
    for part in content_type.split(";")[1:]:
        if "=" in part:
            name, _, value = part.partition("=")
            if name.strip().lower() == "charset":
                candidate = value.strip().strip("\"'")
                try:
                    b"".decode(candidate)
                    encoding = candidate
                except LookupError:
                    pass
    return resource.body.decode(encoding, errors="surrogateescape"), encoding


def _expectation(
    ctx: HealingContext, strategy: StrategyKind, error_key: str
) -> StrategyActivation:
    return StrategyActivation(
        page_uuid=ctx.page_uuid,
        strategy=strategy,
        target_error=error_key,
        resource_url=ctx.response.url,
        occurred_at=ctx.healed_at,
    )


def _error_key(action: PlannedAction) -> str:
    return error_identity_key(action.error) if action.error else ""


def _heal_script(
    ctx: HealingContext, actions: list
) -> tuple[Resource, list[StrategyActivation]]:
    script_actions = [
        a
        for a in actions
        if a.strategy in (StrategyKind.ObjectCreator, StrategyKind.LineSkipper)
    ]
    if not script_actions:
        return ctx.response, []
    source, encoding = _decode_script(ctx.response)
    plan = RewritePlan(
        resource_url=ctx.response.url,
        edits=tuple(
            RewriteEdit(
                strategy=a.strategy,
                fp=a.local_fp,
                error_type=a.error.error_type,
                identifier=a.error.identifier,
                error_key=_error_key(a),
            )
            for a in script_actions
        ),
    )
    try:
        text, applied = apply_plan(source, plan, emit_pings=True)
    except jsrewrite.ParseFailure:
        return ctx.response, []
    if not applied:
        return ctx.response, []
    body = text.encode(encoding, errors="surrogateescape")
    expectations = [
        _expectation(ctx, edit.strategy, edit.error_key) for edit in applied
    ]
    return _with_body(ctx.response, body), expectations


def _heal_html(
    ctx: HealingContext, actions: list, doc: HtmlDocument, scripts: list
) -> tuple[Resource, list[StrategyActivation]]:
    expectations: list[StrategyActivation] = []

    # Inline script rewrites first: they rely on original page coordinates.
    by_script: dict[int, list[PlannedAction]] = {}
    for action in actions:
        if (
            action.strategy in (StrategyKind.ObjectCreator, StrategyKind.LineSkipper)
            and action.script_index is not None
        ):
            by_script.setdefault(action.script_index, []).append(action)
    text = doc.text
    for index in sorted(by_script, reverse=True):
        script = scripts[index]
        plan = RewritePlan(
            resource_url=ctx.response.url,
            edits=tuple(
                RewriteEdit(
                    strategy=a.strategy,
                    fp=a.local_fp,
                    error_type=a.error.error_type,
                    identifier=a.error.identifier,
                    error_key=_error_key(a),
                )
                for a in by_script[index]
            ),
        )
        try:
            rewritten, applied = apply_plan(script.source, plan, emit_pings=True)
        except jsrewrite.ParseFailure:
            continue
        if not applied:
            continue
        text = text[: script.start] + rewritten + text[script.end :]
        expectations.extend(
            _expectation(ctx, edit.strategy, edit.error_key) for edit in applied
        )
    doc = doc.with_text(text)

    for action in actions:
        if action.strategy is StrategyKind.HttpsRedirector:
            doc, count = redirect_http_to_https(doc, page_is_https=True)
            if count:
                expectations.append(
                    _expectation(ctx, StrategyKind.HttpsRedirector, "")
                )

    for action in actions:
        if action.strategy is StrategyKind.HtmlElementCreator:
            doc, created = create_missing_element(doc, action.dom_query)
            if created:
                expectations.append(
                    _expectation(
                        ctx, StrategyKind.HtmlElementCreator, _error_key(action)
                    )
                )

    injected_srcs: set = set()
    for action in actions:
        if action.strategy is StrategyKind.LibraryInjector:
            doc, injected = inject_library(doc, action.rule)
            if injected or action.rule.inject_url in injected_srcs:
                injected_srcs.add(action.rule.inject_url)
                expectations.append(
                    _expectation(
                        ctx, StrategyKind.LibraryInjector, _error_key(action)
                    )
                )

    # Monitor last, at the head insertion point, so it precedes the injected
    # libraries, which precede the page's own scripts.
    if ctx.inject_monitor:
        doc = inject_monitor(
            doc, ctx.page_uuid, ctx.report_endpoint, snippet=ctx.monitor_snippet
        )
    return _with_body(ctx.response, serialize(doc)), expectations


def _with_body(resource: Resource, body: bytes) -> Resource:
    if body == resource.body:
        return resource
    headers = tuple(
        (name, str(len(body)))
        if name.lower() == "content-length"
        else (name, value)
        for name, value in resource.headers
    )
    return Resource(
        url=resource.url,
        headers=headers,
        body=body,
        content_kind=resource.content_kind,
    )

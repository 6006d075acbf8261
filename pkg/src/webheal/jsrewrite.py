"""Position-targeted ECMAScript transforms: statement guarding and
null-variable initialization.

Edits are spliced at exact statement spans reported by the parser, then
the whole result is re-parsed; an edit that does not survive that check
is dropped. The caller therefore only ever sees a parseable rewritten
script or the original text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from . import esparse
from .esparse import DECLARATION_KINDS, STATEMENT_KINDS, Node, ParseError, SourceIndex
from .model import ErrorType, FailurePoint, StrategyKind

# Input that is not a script at all; aborts a whole rewrite plan.
ParseFailure = ParseError


class RewriteUnsupported(Exception):
    """An edit that cannot be applied safely; strategy-inapplicable."""


class UnsupportedStatement(RewriteUnsupported):
    """Wrapping this statement would change name binding (hoisting)."""


class UnsupportedTarget(RewriteUnsupported):
    """The dereferenced base is not a plain variable."""


class StatementNotFound(RewriteUnsupported):
    """No statement covers the failure position."""


LINE_SKIPPER_TYPES = {
    ErrorType.NotDefined,
    ErrorType.NotAFunction,
    ErrorType.CannotReadPropertyOfNull,
    ErrorType.CannotSetPropertyOfNull,
}

OBJECT_CREATOR_TYPES = {
    ErrorType.CannotSetPropertyOfNull,
    ErrorType.CannotReadPropertyOfNull,
}

NULL_PROPERTY_TYPES = OBJECT_CREATOR_TYPES


@dataclass(frozen=True)
class RewriteEdit:
    strategy: StrategyKind
    fp: FailurePoint
    error_type: ErrorType
    identifier: Optional[str]
    error_key: str = ""


@dataclass(frozen=True)
class RewritePlan:
    resource_url: str
    edits: tuple[RewriteEdit, ...] = field(default_factory=tuple)

    def sorted_edits(self) -> list[RewriteEdit]:
        # Descending position: applied edits never shift pending targets.
        return sorted(
            self.edits,
            key=lambda e: (e.fp.line or 0, e.fp.column or 0),
            reverse=True,
        )


def locate_statement(source: str, fp: FailurePoint) -> Optional[Node]:
    """Innermost statement at (line, column); column 0 prefers the first
    statement starting on that line. None when no statement matches.

    Raises ParseFailure when the source is not a parseable script.
    """
    if fp.line is None:
        return None
    program = esparse.parse(source)
    index = SourceIndex(source)
    if fp.line > index.line_count():
        return None
    statements = [n for n in esparse.iter_nodes(program) if n.kind in STATEMENT_KINDS]
    if fp.column == 0 or fp.column is None:
        starters = [s for s in statements if index.line_col(s.start)[0] == fp.line]
        if starters:
            return min(starters, key=lambda s: s.start)
        offset = index.offset(fp.line, 0)
    else:
        offset = index.offset(fp.line, fp.column)
    containing = [s for s in statements if s.start <= offset < s.end]
    if not containing:
        return None
    return max(containing, key=lambda s: (s.start, -s.end))


_IMPURE_KINDS = {
    "CallExpression", "NewExpression", "ImportExpression",
    "TaggedTemplateExpression", "AssignmentExpression", "UpdateExpression",
    "AwaitExpression", "YieldExpression",
}


def _is_call_free(node: Node) -> bool:
    return all(n.kind not in _IMPURE_KINDS for n in esparse.iter_nodes(node))


def _member_property_name(node: Node) -> Optional[str]:
    prop = node["property"]
    if prop is None:
        return None
    if not node["computed"] and prop.kind == "Identifier":
        return prop["name"]
    if node["computed"] and prop.kind == "Literal" and prop["literal_kind"] == "str":
        return prop["raw"][1:-1]
    return None


def _resolve_dereference_base(
    statement: Node, property_name: Optional[str], fp_offset: Optional[int]
) -> Optional[Node]:
    """The object expression whose ``property_name`` access failed."""
    candidates = [
        node
        for node in esparse.iter_nodes(statement)
        if node.kind == "MemberExpression"
        and _member_property_name(node) == property_name
    ]
    if not candidates:
        return None
    if fp_offset is not None:
        covering = [c for c in candidates if c.start <= fp_offset < c.end]
        if covering:
            return max(covering, key=lambda c: c.start)["object"]
    return min(candidates, key=lambda c: c.start)["object"]


def _single_statement_slot(statement: Node) -> bool:
    """True when the statement fills a one-statement body position, where
    splicing in a second statement or a trailing else would re-bind."""
    parent = statement.parent
    if parent is None:
        return False
    return parent.kind not in ("Program", "BlockStatement", "SwitchCase")


def activation_ping(strategy: StrategyKind, error_key: str) -> str:
    """A self-reporting statement executed when a rewrite actually fires."""
    return (
        "window.__selfheal&&window.__selfheal.activation("
        f"{json.dumps(strategy.value)},{json.dumps(error_key)});"
    )


def _guard_expression(source: str, statement: Node, edit: RewriteEdit) -> str:
    if edit.error_type is ErrorType.NotDefined:
        if not edit.identifier:
            raise UnsupportedTarget("no identifier to guard")
        return f"typeof {edit.identifier} != 'undefined' && {edit.identifier}"
    if edit.error_type is ErrorType.NotAFunction:
        if not edit.identifier:
            raise UnsupportedTarget("no identifier to guard")
        return f"typeof {edit.identifier} === 'function'"
    if edit.error_type in NULL_PROPERTY_TYPES:
        index = SourceIndex(source)
        offset = None
        if edit.fp.line is not None and edit.fp.line <= index.line_count():
            offset = index.offset(edit.fp.line, edit.fp.column or 0)
        base = _resolve_dereference_base(statement, edit.identifier, offset)
        if base is None:
            raise UnsupportedTarget(f"no dereference of {edit.identifier!r} at the failure point")
        if base.kind not in ("Identifier", "MemberExpression") or not _is_call_free(base):
            raise UnsupportedTarget("dereference base is not a stable expression")
        return f"{source[base.start:base.end]} != null"
    raise UnsupportedTarget(f"unsupported error type {edit.error_type.value}")


def _validate(rewritten: str) -> None:
    try:
        esparse.parse(rewritten)
    except ParseError as exc:
        raise RewriteUnsupported(f"rewrite does not parse: {exc}") from None


def _wrap_with_guards(
    source: str, statement: Node, guards: list[str],
    pings: list[str], single_slot: bool,
) -> str:
    stmt_text = source[statement.start:statement.end]
    condition = " && ".join(guards)
    wrapped = f"if ({condition}) {{{stmt_text}}}"
    if pings:
        wrapped += " else {" + "".join(pings) + "}"
    if single_slot:
        wrapped = "{" + wrapped + "}"
    return wrapped


def apply_line_skipper(
    source: str,
    fp: FailurePoint,
    error_type: ErrorType,
    identifier: Optional[str],
    *,
    error_key: str = "",
    emit_ping: bool = False,
) -> str:
    """Wrap the failing statement in a definedness guard.

    The guard reproduces the observed failure condition:
    ``if (typeof m != 'undefined' && m) {...}`` for a missing variable,
    ``if (typeof f === 'function') {...}`` for a non-callable, and
    ``if (base != null) {...}`` for a null dereference.
    """
    if error_type not in LINE_SKIPPER_TYPES:
        raise UnsupportedTarget(f"line skipper does not handle {error_type.value}")
    statement = locate_statement(source, fp)
    if statement is None:
        raise StatementNotFound(f"no statement at line {fp.line}")
    if statement.kind in DECLARATION_KINDS:
        raise UnsupportedStatement(f"cannot wrap a {statement.kind}")
    edit = RewriteEdit(StrategyKind.LineSkipper, fp, error_type, identifier, error_key)
    guard = _guard_expression(source, statement, edit)
    pings = [activation_ping(StrategyKind.LineSkipper, error_key)] if emit_ping else []
    wrapped = _wrap_with_guards(
        source, statement, [guard], pings, _single_statement_slot(statement)
    )
    rewritten = source[: statement.start] + wrapped + source[statement.end:]
    _validate(rewritten)
    return rewritten


def _object_creator_insert(
    source: str, statement: Node, edit: RewriteEdit, emit_ping: bool
) -> str:
    index = SourceIndex(source)
    offset = None
    if edit.fp.line is not None and edit.fp.line <= index.line_count():
        offset = index.offset(edit.fp.line, edit.fp.column or 0)
    base = _resolve_dereference_base(statement, edit.identifier, offset)
    if base is None and edit.identifier:
        # The caller may have pre-resolved the base variable itself.
        named = [
            n
            for n in esparse.iter_nodes(statement)
            if n.kind == "MemberExpression"
            and n["object"] is not None
            and n["object"].kind == "Identifier"
            and n["object"]["name"] == edit.identifier
        ]
        if named:
            base = named[0]["object"]
    if base is None:
        raise UnsupportedTarget(f"no dereference of {edit.identifier!r} at the failure point")
    if base.kind != "Identifier":
        raise UnsupportedTarget("only a plain variable can be initialized")
    name = base["name"]
    insert = f"if ({name} == null) {{{name} = {{}};}}"
    if emit_ping:
        ping = activation_ping(StrategyKind.ObjectCreator, edit.error_key)
        insert = f"if ({name} == null) {{{ping}}}" + insert
    return insert


def apply_object_creator(
    source: str,
    fp: FailurePoint,
    identifier: Optional[str],
    *,
    error_type: ErrorType = ErrorType.CannotSetPropertyOfNull,
    error_key: str = "",
    emit_ping: bool = False,
) -> str:
    """Initialize a null variable with an empty object before its use:
    ``if (m == null) {m = {};}`` spliced in front of the failing statement.
    """
    if error_type not in OBJECT_CREATOR_TYPES:
        raise UnsupportedTarget(f"object creator does not handle {error_type.value}")
    statement = locate_statement(source, fp)
    if statement is None:
        raise StatementNotFound(f"no statement at line {fp.line}")
    edit = RewriteEdit(StrategyKind.ObjectCreator, fp, error_type, identifier, error_key)
    insert = _object_creator_insert(source, statement, edit, emit_ping)
    if _single_statement_slot(statement):
        replacement = "{" + insert + " " + source[statement.start:statement.end] + "}"
    else:
        replacement = insert + " " + source[statement.start:statement.end]
    rewritten = source[: statement.start] + replacement + source[statement.end:]
    _validate(rewritten)
    return rewritten


def apply_plan(
    source: str, plan: RewritePlan, *, emit_pings: bool = False
) -> tuple[str, list[RewriteEdit]]:
    """Apply a batch of edits; skipped edits never abort the batch.

    Edits touching the same statement are merged: one guard conjunction,
    one wrap. Raises ParseFailure when the input itself does not parse;
    the caller must then forward the original body unmodified.
    """
    esparse.parse(source)  # unparseable input aborts the whole plan

    # Group edits by the statement they land on, against original positions.
    groups: dict[tuple[int, int], list[RewriteEdit]] = {}
    order: list[tuple[int, int]] = []
    for edit in plan.sorted_edits():
        try:
            statement = locate_statement(source, edit.fp)
        except ParseError:  # pragma: no cover - source parsed above
            raise
        if statement is None:
            continue
        key = (statement.start, statement.end)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(edit)

    text = source
    applied: list[RewriteEdit] = []
    for key in sorted(order, key=lambda k: k[0], reverse=True):
        edits = groups[key]
        candidate, group_applied = _apply_statement_group(text, source, key, edits, emit_pings)
        if candidate is None:
            continue
        try:
            esparse.parse(candidate)
        except ParseError:
            continue  # this group's splice broke the script; drop it
        text = candidate
        applied.extend(group_applied)
    return text, applied


def _apply_statement_group(
    text: str,
    original: str,
    span: tuple[int, int],
    edits: list[RewriteEdit],
    emit_pings: bool,
) -> tuple[Optional[str], list[RewriteEdit]]:
    """Build one statement's replacement from all of its edits."""
    start, end = span
    # Spans refer to the original source; text beyond `end` may have been
    # rewritten already, text before is untouched (descending order).
    statement = locate_statement(original, edits[0].fp)
    if statement is None:
        return None, []
    single_slot = _single_statement_slot(statement)
    inserts: list[str] = []
    guards: list[str] = []
    pings: list[str] = []
    group_applied: list[RewriteEdit] = []
    for edit in edits:
        try:
            if edit.strategy is StrategyKind.ObjectCreator:
                if edit.error_type not in OBJECT_CREATOR_TYPES:
                    raise UnsupportedTarget(edit.error_type.value)
                inserts.append(_object_creator_insert(original, statement, edit, emit_pings))
            elif edit.strategy is StrategyKind.LineSkipper:
                if edit.error_type not in LINE_SKIPPER_TYPES:
                    raise UnsupportedTarget(edit.error_type.value)
                if statement.kind in DECLARATION_KINDS:
                    raise UnsupportedStatement(statement.kind)
                guard = _guard_expression(original, statement, edit)
                if guard not in guards:
                    guards.append(guard)
                if emit_pings:
                    pings.append(activation_ping(StrategyKind.LineSkipper, edit.error_key))
            else:
                raise UnsupportedTarget(f"not a script-level strategy: {edit.strategy.value}")
        except RewriteUnsupported:
            continue
        group_applied.append(edit)
    if not inserts and not guards:
        return None, []
    stmt_text = original[start:end]
    if guards:
        replacement = _wrap_with_guards(original, statement, guards, pings, False)
    else:
        replacement = stmt_text
    if inserts:
        replacement = " ".join(inserts) + " " + replacement
    if single_slot and (inserts or pings):
        replacement = "{" + replacement + "}"
    elif single_slot and guards:
        # A bare `if` wrap in a single-statement slot could capture a
        # following `else`; braces keep the original binding.
        replacement = "{" + replacement + "}"
    return text[:start] + replacement + text[end:], group_applied

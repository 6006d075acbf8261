"""Outcome evaluation: compare original and healed traces, classify what
happened to each page, and aggregate per-error-type and per-strategy tables.

Error identity is the full identity key (type + identifier + location), so
an error that merely moved counts as a different error, not a healed one.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence
from urllib.parse import urlsplit

from .errorintel import display_message
from .model import (
    ErrorType,
    MalformedUrl,
    StrategyActivation,
    StrategyKind,
    STRATEGY_DISPLAY_NAMES,
    WebTrace,
    error_identity_key,
    normalize_url,
)

__all__ = [
    "EvaluationReport",
    "HealingOutcome",
    "OutcomeRow",
    "PageMismatch",
    "StrategyRow",
    "TypeRow",
    "aggregate_by_error_type",
    "aggregate_by_strategy",
    "aggregate_outcomes",
    "compare_traces",
    "evaluate_pairs",
    "registrable_domain",
    "render_report",
    "SUPPORTED_TYPE_COUNTS",
]


class HealingOutcome(enum.Enum):
    AllDisappeared = "AllDisappeared"
    SomeDisappeared = "SomeDisappeared"
    DifferentErrors = "DifferentErrors"
    NoStrategyApplied = "NoStrategyApplied"


class _Tag(enum.Enum):
    """Internal classification; NoChange folds into DifferentErrors for the
    public enum and is reported as an asterisked sub-row."""

    AllDisappeared = "AllDisappeared"
    SomeDisappeared = "SomeDisappeared"
    DifferentErrors = "DifferentErrors"
    NoStrategyApplied = "NoStrategyApplied"
    NoChange = "NoChange"


class PageMismatch(ValueError):
    """compare_traces was handed traces of two different pages."""


# Static metadata: how many error families each strategy can act on. The
# redirector is open-ended (any error caused by a blocked http resource).
SUPPORTED_TYPE_COUNTS = {
    StrategyKind.LineSkipper: "4",
    StrategyKind.ObjectCreator: "2",
    StrategyKind.LibraryInjector: "3",
    StrategyKind.HtmlElementCreator: "2",
    StrategyKind.HttpsRedirector: "NA",
}

_OUTCOME_LABELS = {
    _Tag.AllDisappeared: "All errors have disappeared",
    _Tag.SomeDisappeared: "Some errors have disappeared",
    _Tag.DifferentErrors: "Different errors appear *",
    _Tag.NoStrategyApplied: "No strategy applied",
}

# Common two-level public suffixes; enough to count registrable domains in
# desk-scale corpora without a suffix-list dependency.
_TWO_LEVEL_SUFFIXES = {
    "co.uk", "org.uk", "ac.uk", "gov.uk", "me.uk", "net.uk",
    "com.au", "net.au", "org.au", "edu.au", "gov.au",
    "co.jp", "ne.jp", "or.jp", "ac.jp", "go.jp",
    "com.br", "net.br", "org.br", "gov.br",
    "co.in", "net.in", "org.in", "gen.in", "firm.in",
    "com.cn", "net.cn", "org.cn", "gov.cn",
    "co.nz", "net.nz", "org.nz",
    "co.za", "org.za", "web.za",
    "com.mx", "org.mx", "com.ar", "com.tr", "com.tw",
    "co.kr", "or.kr", "com.sg", "com.hk", "com.my",
    "co.il", "org.il", "com.ua", "com.pl",
}


def _canon(url: str) -> str:
    try:
        return normalize_url(url)
    except MalformedUrl:
        return url


def registrable_domain(url: str) -> str:
    """The registrable domain of a URL's host: one label past the public
    suffix ("a.b.site.co.uk" -> "site.co.uk"). IPs and bare hosts are
    returned whole."""
    host = (urlsplit(url).hostname or "").strip(".").lower()
    if not host:
        return url.lower()
    labels = host.split(".")
    if len(labels) <= 2:
        return host
    if all(part.isdigit() for part in labels):  # IPv4
        return host
    if ".".join(labels[-2:]) in _TWO_LEVEL_SUFFIXES:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def _keys(trace: WebTrace) -> Counter:
    return Counter(error_identity_key(e) for e in trace.errors)


def _compare_tagged(
    original: WebTrace, healed: WebTrace, strategies_applied: int
) -> _Tag:
    if _canon(original.page_url) != _canon(healed.page_url):
        raise PageMismatch(
            f"page mismatch: {original.page_url!r} vs {healed.page_url!r}"
        )
    observed = _keys(original)
    remaining = _keys(healed)
    if strategies_applied == 0:
        return _Tag.NoStrategyApplied
    if not remaining:
        return _Tag.AllDisappeared
    is_submultiset = all(remaining[k] <= observed[k] for k in remaining)
    if not is_submultiset:
        return _Tag.DifferentErrors
    if remaining == observed:
        return _Tag.NoChange
    return _Tag.SomeDisappeared


def compare_traces(
    original: WebTrace, healed: WebTrace, strategies_applied: int
) -> HealingOutcome:
    """Classify a page's healing outcome from its before/after error sets.

    Order-blind, multiset semantics. An unchanged nonempty error set with
    strategies applied counts as DifferentErrors (the page changed without
    healing); reports break that case out as an asterisked sub-row.
    """
    tag = _compare_tagged(original, healed, strategies_applied)
    if tag is _Tag.NoChange:
        return HealingOutcome.DifferentErrors
    return HealingOutcome(tag.value)


@dataclass(frozen=True)
class TypeRow:
    label: str
    pages: int
    domains: int
    initial: int
    healed: int
    improvement: str  # e.g. "59.93%"


@dataclass(frozen=True)
class OutcomeRow:
    label: str
    pages: int
    share: str
    subrow: bool = False


@dataclass(frozen=True)
class StrategyRow:
    strategy: StrategyKind
    label: str
    activations: int
    supported_types: str


def _percent(numerator: int, denominator: int) -> str:
    if denominator == 0:
        return "0.00%"
    return f"{100.0 * numerator / denominator:.2f}%"


def aggregate_by_error_type(pairs: Sequence[tuple]) -> list:
    """Rows (error type, #pages, #domains, #initial, #healed, improvement)
    over (original, healed) trace pairs, plus a totals row.

    An initial error counts as healed when its identity key is gone from
    the healed trace (multiset difference); new errors never add negative
    healing. Types with zero initial errors are omitted.
    """
    pages: dict = defaultdict(set)
    domains: dict = defaultdict(set)
    initial: Counter = Counter()
    healed: Counter = Counter()
    distinct_keys: set = set()

    for original, after in pairs:
        observed = Counter(
            (error_identity_key(e), e.error_type) for e in original.errors
        )
        remaining = Counter(
            (error_identity_key(e), e.error_type) for e in after.errors
        )
        page_types = set()
        for (key, error_type), count in observed.items():
            distinct_keys.add(key)
            page_types.add(error_type)
            initial[error_type] += count
            healed[error_type] += max(0, count - remaining.get((key, error_type), 0))
        for error_type in page_types:
            pages[error_type].add(_canon(original.page_url))
            domains[error_type].add(registrable_domain(original.page_url))

    rows = []
    for error_type in ErrorType:
        if initial[error_type] == 0:
            continue
        rows.append(
            TypeRow(
                label=display_message(error_type),
                pages=len(pages[error_type]),
                domains=len(domains[error_type]),
                initial=initial[error_type],
                healed=healed[error_type],
                improvement=_percent(healed[error_type], initial[error_type]),
            )
        )
    rows.sort(key=lambda r: (-r.pages, -r.initial, r.label))
    total_pages = len({_canon(o.page_url) for o, _ in pairs})
    total_domains = len({registrable_domain(o.page_url) for o, _ in pairs})
    total_initial = sum(initial.values())
    total_healed = sum(healed.values())
    rows.append(
        TypeRow(
            label=f"{len(distinct_keys)} different errors",
            pages=total_pages,
            domains=total_domains,
            initial=total_initial,
            healed=total_healed,
            improvement=_percent(total_healed, total_initial),
        )
    )
    return rows


def aggregate_outcomes(triples: Sequence[tuple]) -> list:
    """Rows for the outcome table over (original, healed, strategies_applied)
    triples; the DifferentErrors row is followed by an asterisked sub-row
    counting pages whose error set did not change at all."""
    tags = Counter(
        _compare_tagged(original, healed, strategies) for original, healed, strategies in triples
    )
    total = sum(tags.values())
    rows = []
    for tag in (_Tag.AllDisappeared, _Tag.SomeDisappeared, _Tag.DifferentErrors, _Tag.NoStrategyApplied):
        count = tags[tag]
        if tag is _Tag.DifferentErrors:
            count += tags[_Tag.NoChange]
        rows.append(OutcomeRow(_OUTCOME_LABELS[tag], count, _percent(count, total)))
        if tag is _Tag.DifferentErrors:
            rows.append(
                OutcomeRow(
                    "* of which the error set was unchanged",
                    tags[_Tag.NoChange],
                    _percent(tags[_Tag.NoChange], total),
                    subrow=True,
                )
            )
    return rows


def aggregate_by_strategy(activations: Iterable[StrategyActivation]) -> list:
    """One row per strategy with its activation count and the static number
    of supported error families; an empty log yields all-zero rows."""
    counts: Counter = Counter(a.strategy for a in activations)
    rows = [
        StrategyRow(
            strategy=kind,
            label=STRATEGY_DISPLAY_NAMES[kind],
            activations=counts[kind],
            supported_types=SUPPORTED_TYPE_COUNTS[kind],
        )
        for kind in StrategyKind
    ]
    rows.sort(key=lambda r: (-r.activations, r.label))
    return rows


@dataclass(frozen=True)
class EvaluationReport:
    type_rows: tuple
    outcome_rows: tuple
    strategy_rows: tuple

    def render(self) -> str:
        return render_report(self.type_rows, self.outcome_rows, self.strategy_rows)


def evaluate_pairs(
    triples: Sequence[tuple],
    activations: Iterable[StrategyActivation] = (),
) -> EvaluationReport:
    """Full evaluation over (original, healed, strategies_applied) triples."""
    pairs = [(original, healed) for original, healed, _ in triples]
    return EvaluationReport(
        type_rows=tuple(aggregate_by_error_type(pairs)),
        outcome_rows=tuple(aggregate_outcomes(triples)),
        strategy_rows=tuple(aggregate_by_strategy(activations)),
    )


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]], *, title: str) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))

    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(
            cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i])
            for i, cell in enumerate(cells)
        ).rstrip()

    lines = [title, fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)


def render_report(
    type_rows: Sequence[TypeRow],
    outcome_rows: Sequence[OutcomeRow],
    strategy_rows: Sequence[StrategyRow],
) -> str:
    """Three aligned plain-text tables: errors by type, outcomes by page,
    activations by strategy."""
    sections = []
    sections.append(
        _table(
            ["Error", "#Pages", "#Domains", "#Errors", "#Healed", "%"],
            [
                [r.label, str(r.pages), str(r.domains), str(r.initial), str(r.healed), r.improvement]
                for r in type_rows
            ],
            title="Healed errors by error type",
        )
    )
    sections.append(
        _table(
            ["Outcome", "#Pages", "%"],
            [
                [("  " if r.subrow else "") + r.label, str(r.pages), r.share]
                for r in outcome_rows
            ],
            title="Healing outcomes by page",
        )
    )
    sections.append(
        _table(
            ["Strategy", "#Activations", "#Supported error types"],
            [
                [r.label, str(r.activations), r.supported_types]
                for r in strategy_rows
            ],
            title="Strategy activations",
        )
    )
    return "\n\n".join(sections) + "\n"

"""Error and activation persistence with effectiveness statistics.

The store is a single append-only JSONL file replayed into memory on open.
Every mutation appends one event line and applies it to the in-memory state
under a lock, so a restart rebuilds exactly the state that produced the last
response. Statistics are derived from the event sequence on demand.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errorintel import display_message
from .model import (
    ErrorType,
    JsError,
    STRATEGY_DISPLAY_NAMES,
    StrategyActivation,
    StrategyKind,
    MalformedUrl,
    error_identity_key,
    normalize_url,
)

__all__ = ["BackendStore", "EffectivenessStat", "ErrorRecord", "StoreError"]


class StoreError(ValueError):
    """A report that cannot be recorded."""


@dataclass
class ErrorRecord:
    """One distinct error (by identity key) and how often it was reported."""

    key: str
    error: JsError
    first_page_uuid: str
    count: int
    first_seq: int
    last_observed_at: str

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "error": self.error.to_dict(),
            "first_page_uuid": self.first_page_uuid,
            "count": self.count,
            "last_observed_at": self.last_observed_at,
        }


@dataclass(frozen=True)
class EffectivenessStat:
    """How one strategy performed against one error on one page.

    loads_with_error_recurrence counts page loads after the first activation
    on which the same error key was reported again; it can never exceed
    subsequent_loads.
    """

    strategy: StrategyKind
    page_url: str
    target_error: str
    activations: int
    subsequent_loads: int
    loads_with_error_recurrence: int

    def __post_init__(self) -> None:
        if self.loads_with_error_recurrence > self.subsequent_loads:
            raise ValueError("recurrences cannot exceed subsequent loads")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "page_url": self.page_url,
            "target_error": self.target_error,
            "activations": self.activations,
            "subsequent_loads": self.subsequent_loads,
            "loads_with_error_recurrence": self.loads_with_error_recurrence,
        }


def _canon(url: Optional[str]) -> Optional[str]:
    if not url:
        return None
    try:
        return normalize_url(url)
    except MalformedUrl:
        return url


# Verb phrases for the developer-facing summary sentences.
_VERB_PHRASES = {
    StrategyKind.HttpsRedirector: "redirected HTTP resources to HTTPS",
    StrategyKind.LibraryInjector: "injected {identifier}",
    StrategyKind.HtmlElementCreator: "created a missing HTML element",
    StrategyKind.ObjectCreator: "initialized a null variable",
    StrategyKind.LineSkipper: "skipped the failing statement",
}


def _unescape_key_field(text: str) -> str:
    return text.replace("%7C", "|").replace("%25", "%")


def _parse_error_key(key: str) -> Optional[tuple]:
    """(error_type, identifier) from an identity key, if well-formed."""
    parts = key.split("|")
    if len(parts) != 5:
        return None
    try:
        error_type = ErrorType(parts[0])
    except ValueError:
        return None
    identifier = _unescape_key_field(parts[1]) or None
    return error_type, identifier


class BackendStore:
    """Thread-safe error/activation store behind the backend service.

    path=None keeps everything in memory (tests, ephemeral runs).
    """

    def __init__(self, path: Optional[os.PathLike] = None) -> None:
        self._path = Path(path) if path is not None else None
        self._lock = threading.RLock()
        self._seq = 0
        self._records: dict[str, ErrorRecord] = {}
        self._error_events: list[tuple] = []  # (seq, page_uuid, JsError, key)
        self._activations: dict[tuple, StrategyActivation] = {}
        self._activation_events: list[tuple] = []  # (seq, StrategyActivation)
        self._file = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            if self._path.exists():
                self._replay_file()
            self._file = open(self._path, "a", encoding="utf-8")

    # -- persistence ----------------------------------------------------

    def _replay_file(self) -> None:
        with open(self._path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                self._apply(event)

    def _append(self, event: dict) -> None:
        if self._file is not None:
            self._file.write(json.dumps(event, sort_keys=True) + "\n")
            self._file.flush()
            os.fsync(self._file.fileno())

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None

    # -- event application ------------------------------------------------

    def _apply(self, event: dict) -> None:
        kind = event["kind"]
        self._seq += 1
        seq = self._seq
        if kind == "error":
            error = JsError.from_dict(event["error"])
            page_uuid = event["page_uuid"]
            key = error_identity_key(error)
            self._error_events.append((seq, page_uuid, error, key))
            record = self._records.get(key)
            if record is None:
                self._records[key] = ErrorRecord(
                    key=key,
                    error=error,
                    first_page_uuid=page_uuid,
                    count=1,
                    first_seq=seq,
                    last_observed_at=error.observed_at,
                )
            else:
                record.count += 1
                record.last_observed_at = error.observed_at
        elif kind == "activation":
            activation = StrategyActivation.from_dict(event["activation"])
            dedup = (
                activation.page_uuid,
                activation.strategy.value,
                activation.target_error,
            )
            if dedup not in self._activations:
                self._activations[dedup] = activation
                self._activation_events.append((seq, activation))
        elif kind == "purge":
            self._records.clear()
            self._error_events.clear()
            self._activations.clear()
            self._activation_events.clear()
        else:
            raise StoreError(f"unknown event kind: {kind!r}")

    # -- operations -------------------------------------------------------

    def record_error(self, error: JsError, page_uuid: str) -> ErrorRecord:
        """Upsert by identity key; repeated reports bump the counter."""
        if not error.page_url:
            raise StoreError("error report without a page URL")
        if not page_uuid:
            raise StoreError("error report without a page uuid")
        event = {"kind": "error", "page_uuid": page_uuid, "error": error.to_dict()}
        with self._lock:
            self._apply(event)
            self._append(event)
            return self._records[error_identity_key(error)]

    def query_errors(self, url: str) -> list[JsError]:
        """Errors whose failure-point resource or page URL matches.

        The url is canonicalized here, so callers may pass what they saw on
        the wire.
        """
        canonical = _canon(url)
        with self._lock:
            matches = []
            for record in sorted(self._records.values(), key=lambda r: r.first_seq):
                error = record.error
                if _canon(error.page_url) == canonical:
                    matches.append(error)
                    continue
                fp_url = error.failure_point.resource_url
                if fp_url and fp_url != "(index)" and _canon(fp_url) == canonical:
                    matches.append(error)
            return matches

    def record_activation(self, activation: StrategyActivation) -> bool:
        """Append an activation; duplicates by (uuid, strategy, error) are
        dropped. Returns whether the event was new."""
        dedup = (
            activation.page_uuid,
            activation.strategy.value,
            activation.target_error,
        )
        event = {"kind": "activation", "activation": activation.to_dict()}
        with self._lock:
            if dedup in self._activations:
                return False
            self._apply(event)
            self._append(event)
            return True

    def known_page_uuid(self, page_uuid: str) -> bool:
        """Whether any error report mentioned this page load."""
        with self._lock:
            return any(uuid == page_uuid for _, uuid, _, _ in self._error_events)

    def purge(self) -> int:
        """Drop every record; returns how many events were discarded."""
        with self._lock:
            dropped = len(self._error_events) + len(self._activation_events)
            event = {"kind": "purge"}
            self._apply(event)
            self._append(event)
            return dropped

    def counts(self) -> dict:
        with self._lock:
            return {
                "errors": len(self._records),
                "error_reports": len(self._error_events),
                "activations": len(self._activation_events),
            }

    # -- statistics ---------------------------------------------------------

    def compute_stats(self) -> list[EffectivenessStat]:
        """Aggregate activations into per-(strategy, page, error) stats.

        A "load" is a distinct page uuid seen in the page's events. Loads
        whose first event comes after a stat's first activation count as
        subsequent; among those, loads that report the same error key again
        count as recurrences.
        """
        with self._lock:
            error_events = list(self._error_events)
            activation_events = list(self._activation_events)

        # first_seen[group][uuid] = earliest seq of any event in that group
        first_seen: dict[str, dict[str, int]] = {}

        def see(group: Optional[str], uuid: str, seq: int) -> None:
            if group is None:
                return
            loads = first_seen.setdefault(group, {})
            if uuid not in loads or seq < loads[uuid]:
                loads[uuid] = seq

        # A recurrence joins both its page group and the failing resource's
        # group, so script-level stats see page reloads too.
        error_key_events: dict[str, list[tuple]] = {}
        for seq, uuid, error, key in error_events:
            page_group = _canon(error.page_url)
            see(page_group, uuid, seq)
            fp_url = error.failure_point.resource_url
            if fp_url and fp_url != "(index)":
                see(_canon(fp_url), uuid, seq)
            error_key_events.setdefault(key, []).append((seq, uuid))

        triples: dict[tuple, list[tuple]] = {}
        for seq, activation in activation_events:
            group = _canon(activation.resource_url) or activation.resource_url
            see(group, activation.page_uuid, seq)
            triple = (activation.strategy, group, activation.target_error)
            triples.setdefault(triple, []).append((seq, activation.page_uuid))

        stats = []
        for (strategy, group, key), events in triples.items():
            first_activation_seq = min(seq for seq, _ in events)
            loads = first_seen.get(group, {})
            subsequent = {
                uuid
                for uuid, seen_at in loads.items()
                if seen_at > first_activation_seq
            }
            recurrences = {
                uuid
                for seq, uuid in error_key_events.get(key, [])
                if seq > first_activation_seq and uuid in subsequent
            }
            stats.append(
                EffectivenessStat(
                    strategy=strategy,
                    page_url=group,
                    target_error=key,
                    activations=len(events),
                    subsequent_loads=len(subsequent),
                    loads_with_error_recurrence=len(recurrences),
                )
            )
        stats.sort(
            key=lambda s: (-s.activations, s.page_url, s.strategy.value, s.target_error)
        )
        return stats

    def summaries(self) -> list[str]:
        """One developer-facing sentence per stat, most activated first."""
        lines = []
        with self._lock:
            records = dict(self._records)
        for stat in self.compute_stats():
            lines.append(_summary_line(stat, records.get(stat.target_error)))
        return lines


def _summary_line(stat: EffectivenessStat, record: Optional[ErrorRecord]) -> str:
    if record is not None:
        error_type = record.error.error_type
        identifier = record.error.identifier
        message = (
            display_message(error_type, identifier)
            if error_type is not ErrorType.Unknown
            else record.error.raw_message
        )
    else:
        parsed = _parse_error_key(stat.target_error) if stat.target_error else None
        if parsed is not None:
            error_type, identifier = parsed
            message = display_message(error_type, identifier)
        else:
            error_type, identifier = None, None
            message = "mixed content" if not stat.target_error else stat.target_error
    verb = _VERB_PHRASES[stat.strategy].format(
        identifier=identifier or "the missing library"
    )
    times = "time" if stat.activations == 1 else "times"
    return (
        f"The strategy {STRATEGY_DISPLAY_NAMES[stat.strategy]} has {verb} "
        f"{stat.activations} {times} in the page {stat.page_url} "
        f"to handle the error {message}"
    )

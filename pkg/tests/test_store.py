"""Store semantics: upsert, canonical querying, stats, persistence, concurrency."""

import threading
import uuid as uuidlib

import pytest

from webheal.model import (
    ErrorType,
    FailurePoint,
    JsError,
    StrategyActivation,
    StrategyKind,
)
from webheal.store import BackendStore, EffectivenessStat, StoreError


def uuid4():
    return str(uuidlib.uuid4())


def make_error(
    identifier="jQuery",
    error_type=ErrorType.NotDefined,
    fp_url="https://site.example/app.js",
    line=3,
    column=0,
    page="https://site.example/gallery.html",
):
    return JsError(
        error_type=error_type,
        identifier=identifier,
        raw_message=f"Uncaught ReferenceError: {identifier} is not defined",
        failure_point=FailurePoint(resource_url=fp_url, line=line, column=column),
        page_url=page,
        observed_at="2024-01-01T00:00:00Z",
    )


def make_activation(key, page_uuid=None, page="https://site.example/gallery.html"):
    return StrategyActivation(
        page_uuid=page_uuid or uuid4(),
        strategy=StrategyKind.LibraryInjector,
        target_error=key,
        resource_url=page,
        occurred_at="2024-01-02T00:00:00Z",
    )


# -- record_error ------------------------------------------------------------


def test_first_report_creates_record_with_count_one():
    store = BackendStore()
    record = store.record_error(make_error(), uuid4())
    assert record.count == 1


def test_repeated_report_bumps_counter_same_record():
    store = BackendStore()
    first = store.record_error(make_error(), uuid4())
    second = store.record_error(make_error(), uuid4())
    assert second.key == first.key
    assert second.count == 2
    assert store.counts()["errors"] == 1


def test_distinct_errors_get_distinct_records():
    store = BackendStore()
    store.record_error(make_error("jQuery"), uuid4())
    store.record_error(make_error("angular"), uuid4())
    assert store.counts()["errors"] == 2


def test_report_without_page_url_rejected():
    store = BackendStore()
    with pytest.raises(StoreError):
        store.record_error(make_error(page=""), uuid4())


# -- query_errors -------------------------------------------------------------


def test_query_unknown_url_is_empty():
    assert BackendStore().query_errors("https://nowhere.example/") == []


def test_query_matches_page_and_resource_urls():
    store = BackendStore()
    store.record_error(make_error(), uuid4())
    by_page = store.query_errors("https://site.example/gallery.html")
    by_resource = store.query_errors("https://site.example/app.js")
    assert len(by_page) == 1
    assert len(by_resource) == 1
    assert by_page[0] == by_resource[0]


def test_query_is_canonicalizing():
    store = BackendStore()
    store.record_error(make_error(), uuid4())
    assert len(store.query_errors("HTTPS://SITE.EXAMPLE:443/gallery.html")) == 1


def test_query_inline_alias_attaches_to_page_only():
    store = BackendStore()
    store.record_error(make_error(fp_url="(index)", line=4), uuid4())
    assert len(store.query_errors("https://site.example/gallery.html")) == 1
    assert store.query_errors("https://other.example/") == []


# -- activations --------------------------------------------------------------


def test_activation_dedup_by_uuid_strategy_error():
    store = BackendStore()
    record = store.record_error(make_error(), uuid4())
    activation = make_activation(record.key)
    assert store.record_activation(activation) is True
    assert store.record_activation(activation) is False
    assert store.counts()["activations"] == 1


def test_activation_for_unseen_uuid_stored():
    store = BackendStore()
    activation = make_activation("NotDefined|x|https://a.example/a.js|1|0")
    assert store.record_activation(activation) is True
    assert store.known_page_uuid(activation.page_uuid) is False


# -- stats ---------------------------------------------------------------------


def test_stats_empty_store():
    assert BackendStore().compute_stats() == []
    assert BackendStore().summaries() == []


def test_stat_invariant_enforced():
    with pytest.raises(ValueError):
        EffectivenessStat(
            strategy=StrategyKind.LineSkipper,
            page_url="https://a.example/",
            target_error="k",
            activations=1,
            subsequent_loads=1,
            loads_with_error_recurrence=2,
        )


def test_scripted_sequence_three_activations_five_loads_one_recurrence():
    store = BackendStore()
    page = "https://site.example/gallery.html"
    record = store.record_error(make_error(page=page), uuid4())
    key = record.key

    first_healed = uuid4()
    store.record_activation(make_activation(key, first_healed, page))

    # Five later loads: two heal again, one sees the error recur, two are
    # silent (fully healed, nothing to report).
    later = [uuid4() for _ in range(5)]
    store.record_activation(make_activation(key, later[0], page))
    store.record_activation(make_activation(key, later[1], page))
    store.record_error(make_error(page=page), later[2])
    store.record_activation(
        StrategyActivation(later[3], StrategyKind.LineSkipper, "other", page, "")
    )
    store.record_activation(
        StrategyActivation(later[4], StrategyKind.LineSkipper, "other", page, "")
    )

    stats = {
        (s.strategy, s.target_error): s for s in store.compute_stats()
    }
    stat = stats[(StrategyKind.LibraryInjector, key)]
    assert stat.activations == 3
    assert stat.subsequent_loads == 5
    assert stat.loads_with_error_recurrence == 1


def test_recurrence_before_activation_does_not_count():
    store = BackendStore()
    page = "https://site.example/p.html"
    record = store.record_error(make_error(page=page), uuid4())
    store.record_activation(make_activation(record.key, page=page))
    stats = store.compute_stats()
    assert stats[0].loads_with_error_recurrence == 0


def test_summary_line_matches_backend_message_shape():
    store = BackendStore()
    page = "https://site.example/gallery.html"
    record = store.record_error(make_error(page=page), uuid4())
    for _ in range(22):
        store.record_activation(make_activation(record.key, page=page))
    line = store.summaries()[0]
    assert line == (
        "The strategy Library Injector has injected jQuery 22 times "
        f"in the page {page} "
        "to handle the error jQuery is not defined"
    )


def test_summary_singular_time():
    store = BackendStore()
    record = store.record_error(make_error(), uuid4())
    store.record_activation(make_activation(record.key))
    assert " 1 time in the page " in store.summaries()[0]


def test_summary_verbs_per_strategy():
    store = BackendStore()
    page = "https://site.example/p.html"
    cases = {
        StrategyKind.HttpsRedirector: "has redirected HTTP resources to HTTPS",
        StrategyKind.HtmlElementCreator: "has created a missing HTML element",
        StrategyKind.ObjectCreator: "has initialized a null variable",
        StrategyKind.LineSkipper: "has skipped the failing statement",
    }
    record = store.record_error(
        make_error("style", ErrorType.CannotReadPropertyOfNull, page=page), uuid4()
    )
    for strategy in cases:
        store.record_activation(
            StrategyActivation(
                uuid4(),
                strategy,
                record.key if strategy is not StrategyKind.HttpsRedirector else "",
                page,
                "",
            )
        )
    lines = "\n".join(store.summaries())
    for strategy, verb in cases.items():
        assert verb in lines
    assert "to handle the error mixed content" in lines
    assert "to handle the error Cannot read property style of null" in lines


# -- persistence -----------------------------------------------------------------


def test_restart_preserves_records_and_stats(tmp_path):
    path = tmp_path / "store.jsonl"
    store = BackendStore(path)
    page = "https://site.example/p.html"
    record = store.record_error(make_error(page=page), uuid4())
    store.record_error(make_error(page=page), uuid4())
    store.record_activation(make_activation(record.key, page=page))
    before_errors = [e.to_dict() for e in store.query_errors(page)]
    before_stats = [s.to_dict() for s in store.compute_stats()]
    before_counts = store.counts()
    store.close()

    reopened = BackendStore(path)
    assert [e.to_dict() for e in reopened.query_errors(page)] == before_errors
    assert [s.to_dict() for s in reopened.compute_stats()] == before_stats
    assert reopened.counts() == before_counts
    assert reopened.query_errors(page)[0].raw_message == make_error().raw_message
    reopened.close()


def test_purge_clears_and_survives_restart(tmp_path):
    path = tmp_path / "store.jsonl"
    store = BackendStore(path)
    store.record_error(make_error(), uuid4())
    dropped = store.purge()
    assert dropped == 1
    assert store.counts()["errors"] == 0
    store.close()
    reopened = BackendStore(path)
    assert reopened.counts()["errors"] == 0
    reopened.close()


# -- concurrency -------------------------------------------------------------------


def test_concurrent_writers_deterministic_counts(tmp_path):
    store = BackendStore(tmp_path / "store.jsonl")
    writers = 16
    per_writer = 50
    barrier = threading.Barrier(writers)

    def work(i):
        barrier.wait()
        for j in range(per_writer):
            store.record_error(make_error(identifier=f"lib{j % 5}"), uuid4())

    threads = [threading.Thread(target=work, args=(i,)) for i in range(writers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    counts = store.counts()
    assert counts["errors"] == 5
    assert counts["error_reports"] == writers * per_writer
    for record_errors in store.query_errors("https://site.example/gallery.html"), :
        assert len(record_errors) == 5
    store.close()

    reopened = BackendStore(tmp_path / "store.jsonl")
    assert reopened.counts() == counts
    reopened.close()

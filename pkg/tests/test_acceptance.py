"""End-to-end acceptance checks.

One test per acceptance criterion, each with its pinned tolerance and
runtime budget. The fixture corpus under tests/fixtures/corpus is
generated by scripts/make_corpus.py and checked in; these tests consume
the checked-in bytes.
"""

from __future__ import annotations

import asyncio
import json
import re
import socket
import time
import uuid
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from urllib.parse import urlsplit

import httpx
import pytest

from webheal.backend import BackendStore
from webheal.evaluate import HealingOutcome, aggregate_by_error_type, compare_traces
from webheal.jsrewrite import apply_line_skipper, apply_object_creator
from webheal.model import (
    ErrorType,
    FailurePoint,
    JsError,
    Resource,
    StrategyActivation,
    StrategyKind,
    TraceResource,
    WebTrace,
)
from webheal.proxy import ProxyConfig, StoreBackend, build_replay_app, build_reverse_app
from webheal.trace import DENIAL_HEADER, load_archive

CORPUS = Path(__file__).parent / "fixtures" / "corpus"
STAMP = "2026-08-17T00:00:00+00:00"

UUID_RE = re.compile(
    r"[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}"
)
UUID_PLACEHOLDER = "00000000-0000-4000-8000-000000000000"

# Comparison is token-identical: whitespace differences are immaterial,
# everything else must match exactly.
TOKEN_RE = re.compile(r"'[^']*'|\"[^\"]*\"|\w+|[^\w\s]")


def tokens(text: str) -> list:
    return TOKEN_RE.findall(text)


def contains_tokens(haystack: str, needle: str) -> bool:
    hay, ned = tokens(haystack), tokens(needle)
    return any(hay[i : i + len(ned)] == ned for i in range(len(hay) - len(ned) + 1))


def err(
    i: int,
    error_type: ErrorType = ErrorType.NotDefined,
    page: str = "https://site.example/",
) -> JsError:
    identifier = f"sym{i}"
    return JsError(
        error_type=error_type,
        identifier=identifier,
        raw_message=f"Uncaught ReferenceError: {identifier} is not defined",
        failure_point=FailurePoint(resource_url=page, line=i, column=0),
        page_url=page,
        observed_at=STAMP,
    )


def trace(errors, page: str = "https://site.example/") -> WebTrace:
    return WebTrace(
        page_url=page, resources=(), errors=tuple(errors), collected_at=STAMP
    )


def corpus_manifest() -> dict:
    return json.loads((CORPUS / "corpus.json").read_text(encoding="utf-8"))


def url_path(url: str) -> str:
    parts = urlsplit(url)
    return parts.path + (f"?{parts.query}" if parts.query else "")


def replay_app(archive_path: Path, *, heal: bool = True, monitor: bool = True):
    archive = load_archive(archive_path)
    config = ProxyConfig(
        mode="replay",
        archive_path=archive_path,
        heal_enabled=heal,
        monitor_enabled=monitor,
    )
    return build_replay_app(config, archive), archive


async def fetch_many(app, requests):
    """GET/POST the given (method, url) pairs; list of (status, body)."""
    transport = httpx.ASGITransport(app=app)
    out = []
    async with httpx.AsyncClient(transport=transport, base_url="http://t") as client:
        for method, url in requests:
            response = await client.request(method, url_path(url))
            out.append((response.status_code, response.content, response.headers))
    return out


def test_guard_text_exactness():
    """The three documented rewrite examples come out token-identical."""
    started = time.monotonic()

    healed = apply_line_skipper(
        "if(m){}",
        FailurePoint(resource_url=None, line=1, column=0),
        ErrorType.NotDefined,
        "m",
    )
    expected = "if (typeof m != 'undefined' && m) {if(m){}}"
    assert tokens(healed) == tokens(expected)

    healed = apply_line_skipper(
        "var func = null; func()",
        FailurePoint(resource_url=None, line=1, column=17),
        ErrorType.NotAFunction,
        "func",
    )
    assert contains_tokens(healed, "if (typeof func === 'function') {func()}")

    healed = apply_object_creator(
        "var m = null; m.test = '';",
        FailurePoint(resource_url=None, line=1, column=14),
        "test",
        error_type=ErrorType.CannotSetPropertyOfNull,
    )
    assert contains_tokens(healed, "if (m == null) {m = {};}")
    # the guard is added before the property write, not after
    assert healed.index("m == null") < healed.index("m.test")

    assert time.monotonic() - started < 1.0


def test_fixture_corpus_healing():
    """Every corpus fixture heals: rewritten bodies match golden files."""
    started = time.monotonic()
    manifest = corpus_manifest()
    fixtures = manifest["fixtures"]

    assert len(fixtures) >= 25
    per_strategy = Counter(f["strategy"] for f in fixtures)
    for kind in StrategyKind:
        assert per_strategy[kind.value] >= 5, f"under-covered: {kind.value}"

    async def run() -> int:
        healed_pages = 0
        for fixture in fixtures:
            app, archive = replay_app(CORPUS / fixture["archive"])
            assert len(archive.errors) == 1  # single-error supported-type fixture
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://t"
            ) as client:
                fully_healed = True
                for golden in fixture["goldens"]:
                    response = await client.get(url_path(golden["url"]))
                    assert response.status_code == 200
                    body = UUID_RE.sub(
                        UUID_PLACEHOLDER, response.content.decode("utf-8")
                    ).encode("utf-8")
                    expected = (CORPUS / golden["file"]).read_bytes()
                    assert body == expected, (
                        f"{fixture['name']}: healed body diverged from "
                        f"{golden['file']}"
                    )
                    text = body.decode("utf-8")
                    for marker in golden["markers"]:
                        present = marker in text
                        fully_healed = fully_healed and present
                        assert present, f"{fixture['name']}: missing {marker!r}"
                healed_pages += fully_healed
        return healed_pages

    healed_pages = asyncio.run(run())
    assert healed_pages == len(fixtures)  # 100% of single-error fixtures
    assert time.monotonic() - started < 120.0


def test_improvement_formula_oracle():
    """307 initial / 184 healed renders improvement '59.93%' exactly."""
    pairs = []
    for i in range(1, 308):
        original = trace([err(i)], page=f"https://p{i}.example/")
        if i <= 184:
            after = trace([], page=f"https://p{i}.example/")
        else:
            after = trace([err(i)], page=f"https://p{i}.example/")
        pairs.append((original, after))

    rows = aggregate_by_error_type(pairs)
    row = next(r for r in rows if r.label == "XXX is not defined")
    assert row.initial == 307
    assert row.healed == 184
    assert row.improvement == "59.93%"


def test_outcome_classifier_totality():
    """10,000 random (original, healed, strategies) triples each land in
    exactly one outcome, and the subset/superset edges match the
    classification rules."""
    started = time.monotonic()
    rng = __import__("random").Random(20260817)
    pool = [err(i) for i in range(1, 9)]
    page = "https://site.example/"

    def random_trace():
        return trace(rng.choices(pool, k=rng.randint(0, 5)), page=page)

    outcomes = Counter()
    for _ in range(10_000):
        original = random_trace()
        healed = random_trace()
        strategies = rng.randint(0, 2)
        outcome = compare_traces(original, healed, strategies)
        assert isinstance(outcome, HealingOutcome)
        outcomes[outcome] += 1

        observed = Counter(id(e) for e in original.errors)
        remaining = Counter(id(e) for e in healed.errors)
        if strategies == 0:
            expected = HealingOutcome.NoStrategyApplied
        elif not remaining:
            expected = HealingOutcome.AllDisappeared
        elif any(remaining[k] > observed[k] for k in remaining):
            expected = HealingOutcome.DifferentErrors
        elif remaining == observed:
            expected = HealingOutcome.DifferentErrors
        else:
            expected = HealingOutcome.SomeDisappeared
        assert outcome is expected

    assert set(outcomes) == set(HealingOutcome)  # every category reachable
    assert time.monotonic() - started < 10.0


def test_proxy_transparency():
    """Empty backend + monitor off: proxying is bit-exact pass-through."""
    started = time.monotonic()
    manifest = corpus_manifest()
    mixed = manifest["mixed"]
    requests = mixed["requests"]
    assert len(requests) == 200

    archive_path = CORPUS / mixed["archive"]
    archive = load_archive(archive_path)
    direct_cfg = ProxyConfig(
        mode="replay",
        archive_path=archive_path,
        heal_enabled=False,
        monitor_enabled=False,
    )
    direct_app = build_replay_app(direct_cfg, archive)
    origin_parts = urlsplit(mixed["page_url"])
    proxy_cfg = ProxyConfig(
        mode="reverse",
        origin=f"{origin_parts.scheme}://{origin_parts.netloc}",
        monitor_enabled=False,
    )
    proxy_app = build_reverse_app(
        proxy_cfg,
        StoreBackend(),  # empty: nothing known, nothing to heal
        upstream_transport=httpx.ASGITransport(app=direct_app),
    )

    async def snapshot(app):
        transport = httpx.ASGITransport(app=app)
        out = []
        async with httpx.AsyncClient(
            transport=transport, base_url="http://t"
        ) as client:
            for method, url in requests:
                async with client.stream(method, url_path(url)) as response:
                    body = b"".join([c async for c in response.aiter_raw()])
                    headers = Counter(
                        (k.lower(), v) for k, v in response.headers.multi_items()
                    )
                    out.append((response.status_code, body, headers))
        return out

    async def run():
        return await snapshot(direct_app), await snapshot(proxy_app)

    direct, proxied = asyncio.run(run())
    for (method, url), a, b in zip(requests, direct, proxied):
        assert a == b, f"{method} {url} changed in transit"
    assert time.monotonic() - started < 30.0


def test_fail_open_on_malformed_scripts(tmp_path):
    """Scripts that cannot be parsed are forwarded byte-identically even
    when the backend knows errors in them; the proxy introduces no 5xx."""
    from webheal.trace import save_archive

    host = "https://broken.example"
    page_url = f"{host}/index.html"
    malformed = {
        f"{host}/a.js": b"function broken( {\n",
        f"{host}/b.js": b"var s = 'unterminated\n",
        f"{host}/c.js": b"if (x > 3 { skip(); }\n",
        f"{host}/d.js": b"obj..field = 1;\n",
    }
    html = b"<!doctype html>\n<html><head></head><body><p>broken</p></body></html>\n"
    resources = [
        TraceResource(
            method="GET",
            status=200,
            resource=Resource.build(
                url=page_url, headers=[("content-type", "text/html")], body=html
            ),
        )
    ]
    errors = []
    for i, (url, body) in enumerate(malformed.items(), start=1):
        resources.append(
            TraceResource(
                method="GET",
                status=200,
                resource=Resource.build(
                    url=url,
                    headers=[("content-type", "application/javascript")],
                    body=body,
                ),
            )
        )
        errors.append(
            JsError(
                error_type=ErrorType.NotDefined,
                identifier=f"ghost{i}",
                raw_message=f"Uncaught ReferenceError: ghost{i} is not defined",
                failure_point=FailurePoint(resource_url=url, line=1, column=0),
                page_url=page_url,
                observed_at=STAMP,
            )
        )
    archive_dir = tmp_path / "broken"
    save_archive(
        WebTrace(
            page_url=page_url,
            resources=tuple(resources),
            errors=tuple(errors),
            collected_at=STAMP,
        ),
        archive_dir,
    )

    app, _ = replay_app(archive_dir, monitor=False)
    requests = [("GET", page_url)] + [("GET", url) for url in malformed]
    results = asyncio.run(fetch_many(app, requests))

    statuses = [status for status, _, _ in results]
    assert all(status < 500 for status in statuses)
    assert statuses[0] == 200
    # page has no healable content and the monitor is off: untouched too
    assert results[0][1] == html
    for (url, original), (status, body, _) in zip(malformed.items(), results[1:]):
        assert status == 200
        assert body == original, f"{url} was modified despite parse failure"


def test_backend_concurrent_consistency(tmp_path):
    """16 writers x 500 mixed ops give deterministic counts; a restart
    leaves the on-disk store bit-exact."""
    store_path = tmp_path / "store.jsonl"
    store = BackendStore(store_path)

    error_pool = [err(i) for i in range(1, 41)]
    page_uuids = [str(uuid.UUID(int=i, version=4)) for i in range(1, 17)]
    activation_pool = [
        StrategyActivation(
            page_uuid=page_uuids[i % 16],
            strategy=StrategyKind.LineSkipper,
            target_error=f"target-{i}",
            resource_url="https://site.example/app.js",
            occurred_at=STAMP,
        )
        for i in range(10)
    ]

    def hammer(thread: int) -> None:
        for op in range(500):
            pick = thread * 250 + op // 2
            if op % 2 == 0:
                store.record_error(
                    error_pool[pick % len(error_pool)], page_uuids[thread]
                )
            else:
                store.record_activation(activation_pool[pick % len(activation_pool)])

    with ThreadPoolExecutor(max_workers=16) as pool:
        for future in [pool.submit(hammer, t) for t in range(16)]:
            future.result()

    counts = store.counts()
    assert counts["errors"] == len(error_pool)
    assert counts["error_reports"] == 16 * 250
    assert counts["activations"] == len(activation_pool)
    before_keys = sorted(
        e.raw_message for e in store.query_errors("https://site.example/")
    )
    store.close()

    first_bytes = store_path.read_bytes()
    reopened = BackendStore(store_path)
    assert reopened.counts() == counts
    after_keys = sorted(
        e.raw_message for e in reopened.query_errors("https://site.example/")
    )
    assert after_keys == before_keys
    reopened.close()
    assert store_path.read_bytes() == first_bytes


def test_replay_hermeticity(monkeypatch):
    """With outbound networking disabled, every fixture replay still works
    and unrecorded URLs get the denial marker."""

    def refuse(*args, **kwargs):
        raise OSError("outbound networking is disabled in this test")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    with pytest.raises(OSError):
        socket.create_connection(("127.0.0.1", 9), timeout=0.1)

    manifest = corpus_manifest()
    denial_name, denial_value = DENIAL_HEADER

    async def run():
        for fixture in manifest["fixtures"]:
            app, archive = replay_app(CORPUS / fixture["archive"])
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://t"
            ) as client:
                for recorded in archive.trace.resources:
                    response = await client.request(
                        recorded.method, url_path(recorded.resource.url)
                    )
                    assert response.status_code == recorded.status
                response = await client.get("/never-recorded-anywhere.js")
                assert response.status_code == 404
                assert response.headers.get(denial_name) == denial_value

        mixed = manifest["mixed"]
        app, _ = replay_app(CORPUS / mixed["archive"], heal=False, monitor=False)
        results = await fetch_many(app, mixed["requests"])
        assert all(status < 500 or status == 503 for status, _, _ in results)
        statuses = Counter(status for status, _, _ in results)
        assert statuses[404] > 0 and statuses[503] > 0  # recorded ones replay as-is

    asyncio.run(run())


@pytest.mark.skip(reason="needs a scripted browser; none is available here")
def test_monitor_capture_under_scripted_browser():
    """A browser loading a page that throws 'm is not defined' must send
    exactly one error beacon, then at least one activation ping after a
    healed reload; an error-free page sends zero beacons."""
    raise NotImplementedError
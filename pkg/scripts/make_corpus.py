"""Generate the checked-in fixture corpus under tests/fixtures/corpus:

- 25 single-error trace archives, five per healing strategy, each with a
  page whose recorded error the strategy can heal;
- golden healed bodies produced by running each archive through the
  replay server with healing on (page uuids normalized to a placeholder,
  since every response mints a fresh one);
- a 200-resource mixed-content archive for the transparency check;
- corpus.json describing all of it for the tests.

Deterministic: rerunning writes identical bytes.
"""

from __future__ import annotations

import asyncio
import gzip
import json
import random
import re
import shutil
import sys
from pathlib import Path
from urllib.parse import urlsplit

import httpx

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from webheal.model import (  # noqa: E402
    ErrorType,
    FailurePoint,
    JsError,
    Resource,
    TraceResource,
    WebTrace,
)
from webheal.proxy import ProxyConfig, build_replay_app  # noqa: E402
from webheal.trace import save_archive, load_archive  # noqa: E402

STAMP = "2026-08-17T00:00:00+00:00"
UUID_RE = re.compile(
    r"[0-9a-f]{8}-[0-9a-f]{4}-4[0-9a-f]{3}-[89ab][0-9a-f]{3}-[0-9a-f]{12}"
)
UUID_PLACEHOLDER = "00000000-0000-4000-8000-000000000000"

PAGE_TEMPLATE = """<!doctype html>
<html>
<head><title>{title}</title></head>
<body>
<h1>{title}</h1>
{body}
</body>
</html>
"""


def get(url: str, body: bytes, content_type: str, status: int = 200, headers=()):
    hdrs = [("content-type", content_type), *headers]
    return TraceResource(
        method="GET",
        status=status,
        resource=Resource.build(url=url, headers=hdrs, body=body),
    )


def fp_at(text: str, needle: str, url: str) -> FailurePoint:
    idx = text.index(needle)
    line = text.count("\n", 0, idx) + 1
    col = idx - (text.rfind("\n", 0, idx) + 1)
    return FailurePoint(resource_url=url, line=line, column=col)


def error(error_type, identifier, message, fp, page_url) -> JsError:
    return JsError(
        error_type=error_type,
        identifier=identifier,
        raw_message=message,
        failure_point=fp,
        page_url=page_url,
        observed_at=STAMP,
    )


class Fixture:
    def __init__(self, name, strategy, trace, goldens):
        # goldens: list of (url, markers substrings expected in healed body)
        self.name = name
        self.strategy = strategy
        self.trace = trace
        self.goldens = goldens


def page_fixture(name, strategy, inline, err_builder, goldens_extra=(), extra_body=""):
    """Fixture whose error lives in an inline script of the page."""
    host = f"https://{name}.example"
    page_url = f"{host}/index.html"
    body = f"<script>\n{inline}\n</script>{extra_body}"
    html = PAGE_TEMPLATE.format(title=name, body=body)
    err = err_builder(html, page_url)
    trace = WebTrace(
        page_url=page_url,
        resources=(get(page_url, html.encode(), "text/html; charset=utf-8"),),
        errors=(err,),
        collected_at=STAMP,
    )
    return Fixture(name, strategy, trace, [(page_url, list(goldens_extra))])


def script_fixture(name, strategy, js, err_builder, markers):
    """Fixture whose error lives in an external script."""
    host = f"https://{name}.example"
    page_url = f"{host}/index.html"
    js_url = f"{host}/app.js"
    html = PAGE_TEMPLATE.format(
        title=name, body='<script src="app.js"></script>'
    )
    err = err_builder(js, js_url, page_url)
    trace = WebTrace(
        page_url=page_url,
        resources=(
            get(page_url, html.encode(), "text/html; charset=utf-8"),
            get(js_url, js.encode(), "application/javascript"),
        ),
        errors=(err,),
        collected_at=STAMP,
    )
    return Fixture(name, strategy, trace, [(js_url, list(markers))])


def not_defined(identifier):
    def build(js, js_url, page_url):
        return error(
            ErrorType.NotDefined,
            identifier,
            f"Uncaught ReferenceError: {identifier} is not defined",
            fp_at(js, f"{identifier}(", js_url),
            page_url,
        )

    return build


def fixtures() -> list:
    out = []

    # -- line skipper: its four supported error families -------------------
    out.append(
        script_fixture(
            "line-skipper-01",
            "LineSkipper",
            "// menu bootstrap\nopenMenu();\nconsole.log('menu wired');\n",
            not_defined("openMenu"),
            [
                "if (typeof openMenu != 'undefined' && openMenu) {openMenu();}",
                '"LineSkipper"',
                "console.log('menu wired');",
            ],
        )
    )
    out.append(
        script_fixture(
            "line-skipper-02",
            "LineSkipper",
            "var widget = {};\nwidget.render();\nconsole.log('rendered');\n",
            lambda js, js_url, page_url: error(
                ErrorType.NotAFunction,
                "widget.render",
                "Uncaught TypeError: widget.render is not a function",
                fp_at(js, "widget.render();", js_url),
                page_url,
            ),
            ["if (typeof widget.render === 'function') {widget.render();}"],
        )
    )
    out.append(
        script_fixture(
            "line-skipper-03",
            "LineSkipper",
            "var cfg = {options: null};\ncfg.options.count = 1;\n",
            lambda js, js_url, page_url: error(
                ErrorType.CannotSetPropertyOfNull,
                "count",
                "Uncaught TypeError: Cannot set property 'count' of null",
                fp_at(js, "cfg.options.count", js_url),
                page_url,
            ),
            ["if (cfg.options != null) {cfg.options.count = 1;}"],
        )
    )
    out.append(
        script_fixture(
            "line-skipper-04",
            "LineSkipper",
            "var app = {cart: {total: null}};\napp.cart.total.refresh();\n",
            lambda js, js_url, page_url: error(
                ErrorType.CannotReadPropertyOfNull,
                "refresh",
                "Uncaught TypeError: Cannot read property 'refresh' of null",
                fp_at(js, "app.cart.total.refresh", js_url),
                page_url,
            ),
            ["if (app.cart.total != null) {app.cart.total.refresh();}"],
        )
    )
    out.append(
        page_fixture(
            "line-skipper-05",
            "LineSkipper",
            "startTour();",
            lambda html, page_url: error(
                ErrorType.NotDefined,
                "startTour",
                "Uncaught ReferenceError: startTour is not defined",
                fp_at(html, "startTour();", page_url),
                page_url,
            ),
            goldens_extra=[
                "if (typeof startTour != 'undefined' && startTour) {startTour();}",
                "win.__selfheal",
            ],
        )
    )

    # -- object creator: null-property errors with identifier bases --------
    out.append(
        script_fixture(
            "object-creator-01",
            "ObjectCreator",
            "var m = null; m.test = '';\n",
            lambda js, js_url, page_url: error(
                ErrorType.CannotSetPropertyOfNull,
                "test",
                "Uncaught TypeError: Cannot set property 'test' of null",
                fp_at(js, "m.test", js_url),
                page_url,
            ),
            ["if (m == null) {m = {};}", '"ObjectCreator"'],
        )
    )
    out.append(
        script_fixture(
            "object-creator-02",
            "ObjectCreator",
            "var v = data.items;\nconsole.log(v);\n",
            lambda js, js_url, page_url: error(
                ErrorType.CannotReadPropertyOfNull,
                "items",
                "Uncaught TypeError: Cannot read property 'items' of null",
                fp_at(js, "data.items", js_url),
                page_url,
            ),
            ["if (data == null) {data = {};}"],
        )
    )
    out.append(
        page_fixture(
            "object-creator-03",
            "ObjectCreator",
            "profile.name = 'guest';",
            lambda html, page_url: error(
                ErrorType.CannotSetPropertyOfNull,
                "name",
                "Uncaught TypeError: Cannot set property 'name' of null",
                fp_at(html, "profile.name", page_url),
                page_url,
            ),
            goldens_extra=["if (profile == null) {profile = {};}", "win.__selfheal"],
        )
    )
    out.append(
        script_fixture(
            "object-creator-04",
            "ObjectCreator",
            "cache.entries = [];\nconsole.log('cached');\n",
            lambda js, js_url, page_url: error(
                ErrorType.CannotSetPropertyOfNull,
                "entries",
                "Uncaught TypeError: Cannot set property 'entries' of null",
                fp_at(js, "cache.entries", js_url),
                page_url,
            ),
            ["if (cache == null) {cache = {};}"],
        )
    )
    out.append(
        script_fixture(
            "object-creator-05",
            "ObjectCreator",
            "var t = session.token;\nconsole.log(t);\n",
            lambda js, js_url, page_url: error(
                ErrorType.CannotReadPropertyOfNull,
                "token",
                "Uncaught TypeError: Cannot read property 'token' of null",
                fp_at(js, "session.token", js_url),
                page_url,
            ),
            ["if (session == null) {session = {};}"],
        )
    )

    # -- library injector: messages matching the bundled rule file ---------
    libraries = [
        ("library-injector-01", "jQuery", "jQuery(function () { jQuery('.gallery').show(); });",
         "https://code.jquery.com/jquery-3.6.4.min.js"),
        ("library-injector-02", "$", "$('.menu').toggle();",
         "https://code.jquery.com/jquery-3.6.4.min.js"),
        ("library-injector-03", "angular", "angular.module('shop', []);",
         "https://ajax.googleapis.com/ajax/libs/angularjs/1.8.3/angular.min.js"),
        ("library-injector-04", "React", "React.createElement('div');",
         "https://cdnjs.cloudflare.com/ajax/libs/react/17.0.2/umd/react.production.min.js"),
        ("library-injector-05", "Backbone", "var Item = Backbone.Model.extend({});",
         "https://cdnjs.cloudflare.com/ajax/libs/backbone.js/1.4.1/backbone-min.js"),
    ]
    for name, ident, inline, inject_url in libraries:
        out.append(
            page_fixture(
                name,
                "LibraryInjector",
                inline,
                lambda html, page_url, ident=ident, inline=inline: error(
                    ErrorType.NotDefined,
                    ident,
                    f"Uncaught ReferenceError: {ident} is not defined",
                    fp_at(html, inline, page_url),
                    page_url,
                ),
                goldens_extra=[f'<script src="{inject_url}"></script>', "win.__selfheal"],
            )
        )

    # -- html element creator: unresolvable getElementById lookups ---------
    elements = [
        ("html-element-creator-01", "document.getElementById('cart-total').innerHTML = '0';",
         ErrorType.CannotSetPropertyOfNull, "innerHTML", "set", "cart-total"),
        ("html-element-creator-02", "var q = document.getElementById('search-box').value;",
         ErrorType.CannotReadPropertyOfNull, "value", "read", "search-box"),
        ("html-element-creator-03", "document.getElementById('banner').style.display = 'none';",
         ErrorType.CannotReadPropertyOfNull, "style", "read", "banner"),
        ("html-element-creator-04", "document.getElementById('buy-btn').onclick = function () {};",
         ErrorType.CannotSetPropertyOfNull, "onclick", "set", "buy-btn"),
        ("html-element-creator-05", "document.getElementById('footer-year').textContent = '2026';",
         ErrorType.CannotSetPropertyOfNull, "textContent", "set", "footer-year"),
    ]
    for name, inline, etype, ident, verb, element_id in elements:
        message = (
            f"Uncaught TypeError: Cannot {verb} property '{ident}' of null"
            if verb == "set"
            else f"Uncaught TypeError: Cannot read property '{ident}' of null"
        )
        out.append(
            page_fixture(
                name,
                "HtmlElementCreator",
                inline,
                lambda html, page_url, etype=etype, ident=ident, message=message, inline=inline: error(
                    etype, ident, message, fp_at(html, inline, page_url), page_url
                ),
                goldens_extra=[
                    f'<div id="{element_id}" style="display:none"></div>',
                    "win.__selfheal",
                ],
            )
        )

    # -- https redirector: https pages loading scripts over http -----------
    redirects = [
        ("https-redirector-01", "initCarousel", "", ErrorType.NotDefined),
        ("https-redirector-02", "chartInit",
         '\n<img src="http://{host}/logo.png">', ErrorType.NotDefined),
        ("https-redirector-03", "site.boot", "", ErrorType.NotAFunction),
        ("https-redirector-04", "loadFeed",
         '\n<link rel="stylesheet" href="http://{host}/site.css">', ErrorType.NotDefined),
        ("https-redirector-05", "renderMap",
         '\n<iframe src="http://{host}/widget.html"></iframe>', ErrorType.NotDefined),
    ]
    for name, ident, extra, etype in redirects:
        host = f"{name}.example"
        page_url = f"https://{host}/index.html"
        lib_url = f"https://{host}/lib.js"
        if etype is ErrorType.NotAFunction:
            inline = f"var site = {{}};\n{ident}();"
            lib_js = "site.boot = function () {};\n"
            message = f"Uncaught TypeError: {ident} is not a function"
        else:
            inline = f"{ident}();"
            lib_js = f"function {ident}() {{}}\n"
            message = f"Uncaught ReferenceError: {ident} is not defined"
        body = (
            f'<script src="http://{host}/lib.js"></script>'
            + extra.format(host=host)
            + f"\n<script>\n{inline}\n</script>"
        )
        html = PAGE_TEMPLATE.format(title=name, body=body)
        err = error(
            etype, ident, message, fp_at(html, f"{ident}();", page_url), page_url
        )
        trace = WebTrace(
            page_url=page_url,
            resources=(
                get(page_url, html.encode(), "text/html; charset=utf-8"),
                get(lib_url, lib_js.encode(), "application/javascript"),
            ),
            errors=(err,),
            collected_at=STAMP,
        )
        markers = [f'<script src="https://{host}/lib.js"></script>', "win.__selfheal"]
        out.append(Fixture(name, "HttpsRedirector", trace, [(page_url, markers)]))

    return out


def mixed_trace() -> tuple:
    """One archive with 200 resources of mixed kinds, statuses, headers."""
    host = "https://mixed.example"
    page_url = f"{host}/index.html"
    html = PAGE_TEMPLATE.format(title="mixed", body="<p>transparency corpus</p>")
    resources = [get(page_url, html.encode(), "text/html; charset=utf-8")]
    requests = [["GET", page_url]]

    for i in range(198):
        url = f"{host}/r/{i:03d}"
        status = 200
        if i % 13 == 5:
            status = 404
        elif i % 29 == 11:
            status = 503
        kind = i % 8
        headers = []
        if kind == 0:
            body = f"var v{i} = {i};\n".encode()
            ctype = "application/javascript"
        elif kind == 1:
            body = f"function broken{i}( {{\n".encode()
            ctype = "application/javascript"
        elif kind == 2:
            body = f"body {{ margin: {i}px; }}\n".encode()
            ctype = "text/css"
        elif kind == 3:
            body = json.dumps({"i": i, "ok": True}).encode()
            ctype = "application/json"
        elif kind == 4:
            body = random.Random(i).randbytes(256)
            ctype = "image/png"
        elif kind == 5:
            body = gzip.compress(f"var gz{i} = '{i}';\n".encode(), mtime=0)
            ctype = "application/javascript"
            headers.append(("content-encoding", "gzip"))
        elif kind == 6:
            body = f"<html><body><p>frame {i}</p></body></html>".encode()
            ctype = "text/html"
        else:
            body = f"resource {i}\n".encode()
            ctype = "text/plain"
            headers.append(("content-security-policy", "default-src 'self'"))
            headers.append(("set-cookie", f"a{i}=1"))
            headers.append(("set-cookie", f"b{i}=2"))
        if i % 31 == 7:
            status = 301
            headers.append(("location", f"{host}/r/{(i + 1) % 198:03d}"))
        resources.append(get(url, body, ctype, status=status, headers=headers))
        requests.append(["GET", url])

    post_url = f"{host}/submit"
    resources.append(
        TraceResource(
            method="POST",
            status=201,
            resource=Resource.build(
                url=post_url,
                headers=[("content-type", "application/json")],
                body=b'{"accepted": true}',
            ),
        )
    )
    requests.append(["POST", post_url])
    assert len(resources) == 200
    trace = WebTrace(
        page_url=page_url,
        resources=tuple(resources),
        errors=(),
        collected_at=STAMP,
    )
    return trace, requests


def normalize(body: bytes) -> bytes:
    return UUID_RE.sub(UUID_PLACEHOLDER, body.decode("utf-8")).encode("utf-8")


def heal_through_replay(archive_path: Path, urls: list) -> dict:
    archive = load_archive(archive_path)
    config = ProxyConfig(mode="replay", archive_path=archive_path)
    app = build_replay_app(config, archive)

    async def fetch() -> dict:
        transport = httpx.ASGITransport(app=app)
        bodies = {}
        async with httpx.AsyncClient(
            transport=transport, base_url="http://replay"
        ) as client:
            for url in urls:
                parts = urlsplit(url)
                path = parts.path + (f"?{parts.query}" if parts.query else "")
                response = await client.get(path)
                assert response.status_code == 200, (url, response.status_code)
                bodies[url] = response.content
        return bodies

    return asyncio.run(fetch())


def main() -> int:
    root = Path(__file__).resolve().parent.parent
    dest = root / "tests" / "fixtures" / "corpus"
    if dest.exists():
        shutil.rmtree(dest)
    dest.mkdir(parents=True)

    manifest = {"fixtures": [], "mixed": None}

    for fixture in fixtures():
        archive_path = dest / fixture.name
        save_archive(fixture.trace, archive_path)
        urls = [url for url, _ in fixture.goldens]
        healed = heal_through_replay(archive_path, urls)
        golden_dir = dest / "golden" / fixture.name
        golden_dir.mkdir(parents=True)
        goldens = []
        for url, markers in fixture.goldens:
            body = normalize(healed[url])
            text = body.decode("utf-8")
            original = next(
                r.resource.body
                for r in fixture.trace.resources
                if r.resource.url == url
            )
            assert body != original, f"{fixture.name}: {url} not healed"
            for marker in markers:
                assert marker in text, f"{fixture.name}: missing {marker!r} in {url}"
            filename = Path(urlsplit(url).path).name or "index.html"
            (golden_dir / filename).write_bytes(body)
            goldens.append(
                {
                    "url": url,
                    "file": f"golden/{fixture.name}/{filename}",
                    "markers": markers,
                }
            )
        manifest["fixtures"].append(
            {
                "name": fixture.name,
                "strategy": fixture.strategy,
                "archive": fixture.name,
                "page_url": fixture.trace.page_url,
                "goldens": goldens,
            }
        )
        print(f"built {fixture.name}")

    trace, requests = mixed_trace()
    save_archive(trace, dest / "mixed-200")
    manifest["mixed"] = {
        "archive": "mixed-200",
        "page_url": trace.page_url,
        "requests": requests,
    }
    print(f"built mixed-200 ({len(requests)} requests)")

    (dest / "corpus.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {dest / 'corpus.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

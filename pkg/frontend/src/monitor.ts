// In-page monitor. Injected as the first script of every proxied page, so
// it must parse and run under plain ES5 (keep to var/function syntax; the
// bundler only strips types) and must never throw into the page.

export interface XhrLike {
  open(method: string, url: string, async: boolean): void;
  setRequestHeader(name: string, value: string): void;
  send(body: string): void;
}

export interface SelfHealApi {
  page_uuid: string;
  activation(strategy: string, errorKey: string): void;
}

export type OnError = (
  message: unknown,
  source: unknown,
  line: unknown,
  column: unknown,
  error: unknown
) => unknown;

export interface MonitorWindow {
  __selfheal?: SelfHealApi;
  XMLHttpRequest: new () => XhrLike;
  location?: { href: string };
  onerror?: OnError | null;
  addEventListener?(type: string, listener: (event: unknown) => void): void;
}

interface ErrorBeacon {
  page_uuid: string;
  page_url: string;
  message: string;
  source: string;
  line: number | null;
  column: number | null;
  stack: string;
  occurred_at: string;
}

// Each text field is clipped here, and the whole serialized beacon is
// capped at the same limit by shortening the stack (the largest field).
var MAX_FIELD = 65536;

function clip(text: unknown): string {
  var s = text == null ? "" : String(text);
  return s.length > MAX_FIELD ? s.slice(0, MAX_FIELD) : s;
}

function capPayload(payload: ErrorBeacon): ErrorBeacon {
  // Trim the stack first, then the other text fields; JSON escaping can
  // only grow text, so cutting `over` characters is always enough. The
  // fixed fields (uuid, timestamp, numbers, keys) stay far below the cap.
  var order: ("stack" | "message" | "source" | "page_url")[] = [
    "stack", "message", "source", "page_url"
  ];
  for (var i = 0; i < order.length; i++) {
    var over = JSON.stringify(payload).length - MAX_FIELD;
    if (over <= 0) { return payload; }
    var keep = payload[order[i]].length - over;
    payload[order[i]] = keep > 0 ? payload[order[i]].slice(0, keep) : "";
  }
  return payload;
}

export function installSelfHealMonitor(
  win: MonitorWindow,
  pageUuid: string,
  endpoint: string
): void {
  if (win.__selfheal) { return; }

  function post(path: string, payload: object): void {
    try {
      var xhr = new win.XMLHttpRequest();
      xhr.open("POST", endpoint + path, true);
      xhr.setRequestHeader("Content-Type", "application/json");
      xhr.send(JSON.stringify(payload));
    } catch (ignored) {}
  }

  function reportError(
    message: unknown,
    source: unknown,
    line: unknown,
    column: unknown,
    stack: unknown
  ): void {
    post("/error", capPayload({
      page_uuid: pageUuid,
      page_url: clip(win.location && win.location.href),
      message: clip(message),
      source: clip(source),
      line: typeof line === "number" ? line : null,
      column: typeof column === "number" ? column : null,
      stack: clip(stack),
      occurred_at: new Date().toISOString()
    }));
  }

  win.__selfheal = {
    page_uuid: pageUuid,
    activation: function (strategy: string, errorKey: string): void {
      post("/activation", {
        page_uuid: pageUuid,
        strategy: clip(strategy),
        target_error: clip(errorKey),
        resource_url: clip(win.location && win.location.href),
        occurred_at: new Date().toISOString()
      });
    }
  };

  var prevOnError = win.onerror;
  win.onerror = function (this: unknown, message, source, line, column, error) {
    try {
      var stack = error && (error as { stack?: unknown }).stack;
      reportError(message, source, line, column, stack);
    } catch (ignored) {}
    if (typeof prevOnError === "function") {
      try {
        return prevOnError.call(this, message, source, line, column, error);
      } catch (ignored2) {}
    }
    return false;
  };

  // Errors thrown before this runs cannot be captured; the proxy puts the
  // snippet first in head to make that window as small as possible.
  if (typeof win.addEventListener === "function") {
    win.addEventListener("unhandledrejection", function (event) {
      try {
        var reason = event && (event as { reason?: unknown }).reason;
        var cast = reason as { message?: unknown; stack?: unknown } | null;
        var message = cast && cast.message ? cast.message : String(reason);
        reportError(message, "", null, null, cast && cast.stack);
      } catch (ignored) {}
    });
  }
}

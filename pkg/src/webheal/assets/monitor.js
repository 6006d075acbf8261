(function (win) {
  "use strict";
  if (win.__selfheal) { return; }
  var PAGE_UUID = "__SELFHEAL_PAGE_UUID__";
  var ENDPOINT = "__SELFHEAL_ENDPOINT__";
  var MAX_FIELD = 65536;

  function clip(text) {
    text = text == null ? "" : String(text);
    return text.length > MAX_FIELD ? text.slice(0, MAX_FIELD) : text;
  }

  function post(path, payload) {
    try {
      var xhr = new XMLHttpRequest();
      xhr.open("POST", ENDPOINT + path, true);
      xhr.setRequestHeader("Content-Type", "application/json");
      xhr.send(JSON.stringify(payload));
    } catch (ignored) {}
  }

  function reportError(message, source, line, column, stack) {
    post("/error", {
      page_uuid: PAGE_UUID,
      page_url: clip(win.location && win.location.href),
      message: clip(message),
      source: clip(source),
      line: typeof line === "number" ? line : null,
      column: typeof column === "number" ? column : null,
      stack: clip(stack),
      occurred_at: new Date().toISOString()
    });
  }

  win.__selfheal = {
    page_uuid: PAGE_UUID,
    activation: function (strategy, errorKey) {
      post("/activation", {
        page_uuid: PAGE_UUID,
        strategy: clip(strategy),
        target_error: clip(errorKey),
        resource_url: clip(win.location && win.location.href),
        occurred_at: new Date().toISOString()
      });
    }
  };

  var prevOnError = win.onerror;
  win.onerror = function (message, source, line, column, error) {
    try {
      reportError(message, source, line, column, error && error.stack);
    } catch (ignored) {}
    if (typeof prevOnError === "function") {
      try { return prevOnError.apply(this, arguments); } catch (ignored2) {}
    }
    return false;
  };

  if (typeof win.addEventListener === "function") {
    win.addEventListener("unhandledrejection", function (event) {
      try {
        var reason = event && event.reason;
        var message = reason && reason.message ? reason.message : String(reason);
        reportError(message, "", null, null, reason && reason.stack);
      } catch (ignored) {}
    });
  }
})(window);

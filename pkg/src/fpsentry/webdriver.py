"""Minimal W3C WebDriver wire client.

Talks plain JSON-over-HTTP to an automation endpoint. Only the handful
of commands the crawler needs are wrapped, and every command issued is
kept in command_log so a run can be audited afterwards for the
no-interaction guarantee: navigation and session management only, no
element lookups, clicks, or key events.
"""

from __future__ import annotations

import json
import socket
import urllib.error
import urllib.request

ABOUT_BLANK = "about:blank"

# error codes that always mean the browser session is gone
CRASH_ERRORS = ("invalid session id", "session not created")
# "unknown error" is overloaded: drivers use it for dead tabs and for
# plain navigation failures alike, so the message has to disambiguate
CRASH_HINTS = ("crash", "browser has closed", "session deleted")
TIMEOUT_ERROR = "timeout"


class WebDriverError(RuntimeError):
    def __init__(self, error: str, message: str = ""):
        super().__init__("%s: %s" % (error, message) if message else error)
        self.error = error
        self.message = message

    @property
    def is_timeout(self) -> bool:
        return self.error == TIMEOUT_ERROR

    @property
    def is_crash(self) -> bool:
        if self.error in CRASH_ERRORS:
            return True
        return self.error == "unknown error" and any(
            hint in self.message.lower() for hint in CRASH_HINTS)


class WebDriverConnectionError(WebDriverError):
    """Endpoint unreachable or connection dropped mid-command."""

    def __init__(self, message: str):
        super().__init__("connection", message)

    @property
    def is_crash(self) -> bool:
        return True


class WebDriverClient:
    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.command_log: list[tuple[str, str]] = []
        # the automation endpoint is reached directly, never via a proxy
        self._opener = urllib.request.build_opener(
            urllib.request.ProxyHandler({}))

    def _command(self, method: str, path: str, payload: dict | None = None,
                 timeout: float | None = None):
        self.command_log.append((method, path))
        body = json.dumps(payload).encode("utf-8") if payload is not None else None
        req = urllib.request.Request(self.endpoint + path, data=body, method=method)
        if body is not None:
            req.add_header("Content-Type", "application/json")
        try:
            with self._opener.open(req, timeout=timeout or self.timeout) as resp:
                doc = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            try:
                doc = json.loads(exc.read().decode("utf-8"))
                value = doc.get("value") or {}
                raise WebDriverError(value.get("error", "http %d" % exc.code),
                                     value.get("message", "")) from exc
            except (ValueError, KeyError):
                raise WebDriverError("http %d" % exc.code, str(exc)) from exc
        except (urllib.error.URLError, socket.timeout, ConnectionError, OSError) as exc:
            raise WebDriverConnectionError(str(exc)) from exc
        return doc.get("value")

    def status(self) -> dict:
        return self._command("GET", "/status")

    def new_session(self, capabilities: dict) -> str:
        value = self._command("POST", "/session",
                              {"capabilities": {"alwaysMatch": capabilities}})
        return value["sessionId"]

    def delete_session(self, session_id: str):
        self._command("DELETE", "/session/%s" % session_id)

    def navigate(self, session_id: str, url: str, timeout: float | None = None):
        self._command("POST", "/session/%s/url" % session_id, {"url": url},
                      timeout=timeout)

    def current_url(self, session_id: str) -> str:
        return self._command("GET", "/session/%s/url" % session_id)

    def set_timeouts(self, session_id: str, page_load_ms: int):
        self._command("POST", "/session/%s/timeouts" % session_id,
                      {"pageLoad": page_load_ms})

    def execute(self, session_id: str, script: str, args: list | None = None):
        return self._command("POST", "/session/%s/execute/sync" % session_id,
                             {"script": script, "args": args or []})


INTERACTION_PATH_MARKERS = ("/element", "/actions", "/click", "/value", "/keys",
                            "/touch", "/buttondown", "/buttonup")


def interaction_commands(command_log) -> list[tuple[str, str]]:
    """Commands that would constitute page interaction; expected empty."""
    return [(method, path) for method, path in command_log
            if any(marker in path for marker in INTERACTION_PATH_MARKERS)]

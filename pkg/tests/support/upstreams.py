"""Local origin servers and proxy-side request helpers for tests."""

from __future__ import annotations

import http.client
import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit


class RecordingServer:
    """HTTP(S) origin that remembers every request it serves.

    The default response is a small JSON echo emitted with
    send_response_only, so no volatile Date/Server headers get in the
    way of byte-level comparisons. Pass respond= to script a different
    reply; it runs after the request is recorded.
    """

    def __init__(self, respond=None, tls_context=None):
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def _handle(self):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                entry = {
                    "method": self.command,
                    "path": self.path,
                    "body": body,
                    "headers": dict(self.headers.items()),
                }
                with outer._lock:
                    outer.requests.append(entry)
                if respond is not None:
                    respond(self, entry)
                    return
                payload = json.dumps({
                    "method": self.command,
                    "path": self.path,
                    "body": body.decode("latin-1"),
                }).encode("utf-8")
                self.send_response_only(200, "OK")
                self.send_header("Content-Type", "application/json")
                self.send_header("X-Upstream", "recording")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                if self.command != "HEAD":
                    self.wfile.write(payload)

            do_GET = _handle
            do_POST = _handle
            do_HEAD = _handle
            do_PUT = _handle
            do_DELETE = _handle

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        if tls_context is not None:
            self.server.socket = tls_context.wrap_socket(self.server.socket,
                                                          server_side=True)
        self.port = self.server.server_address[1]
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def snapshot(self) -> list[dict]:
        with self._lock:
            return list(self.requests)

    def payload_texts(self) -> list[str]:
        """Path + decoded body of everything delivered, for leak checks."""
        out = []
        for entry in self.snapshot():
            out.append(entry["path"] + "\n" + entry["body"].decode("utf-8", "replace"))
        return out

    def close(self):
        self.server.shutdown()
        self.server.server_close()


class RawEchoServer:
    """Bare TCP server speaking a canned 101 upgrade, then echoing bytes."""

    def __init__(self):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(4)
        self.port = self.sock.getsockname()[1]
        self.handshakes: list[bytes] = []
        self._accepting = True
        self.thread = threading.Thread(target=self._serve, daemon=True)
        self.thread.start()

    def _serve(self):
        while self._accepting:
            try:
                conn, _addr = self.sock.accept()
            except OSError:
                return
            threading.Thread(target=self._session, args=(conn,), daemon=True).start()

    def _session(self, conn):
        try:
            buf = b""
            while b"\r\n\r\n" not in buf:
                chunk = conn.recv(4096)
                if not chunk:
                    return
                buf += chunk
            self.handshakes.append(buf)
            conn.sendall(b"HTTP/1.1 101 Switching Protocols\r\n"
                         b"Upgrade: websocket\r\nConnection: Upgrade\r\n\r\n")
            while True:
                chunk = conn.recv(4096)
                if not chunk:
                    return
                conn.sendall(chunk)
        except OSError:
            pass
        finally:
            conn.close()

    def close(self):
        self._accepting = False
        try:
            self.sock.close()
        except OSError:
            pass


def via_proxy(proxy_port: int, method: str, url: str, body: bytes = b"",
              headers: dict | None = None, timeout: float = 10.0):
    """Issue one absolute-URI request through the proxy.

    Returns (status, reason, header list, body bytes).
    """
    target = urlsplit(url)
    conn = http.client.HTTPConnection("127.0.0.1", proxy_port, timeout=timeout)
    try:
        conn.putrequest(method, url, skip_host=True, skip_accept_encoding=True)
        conn.putheader("Host", target.netloc)
        for name, value in (headers or {}).items():
            conn.putheader(name, value)
        if body or method in ("POST", "PUT", "PATCH"):
            conn.putheader("Content-Length", str(len(body)))
        conn.endheaders(body if body else None)
        resp = conn.getresponse()
        data = b"" if method == "HEAD" else resp.read()
        return resp.status, resp.reason, resp.getheaders(), data
    finally:
        conn.close()


def via_proxy_tls(proxy_port: int, method: str, host: str, selector: str,
                  cafile: str, body: bytes = b"", headers: dict | None = None,
                  timeout: float = 10.0):
    """CONNECT through the proxy, then speak TLS to the intercepted host."""
    import ssl

    ctx = ssl.create_default_context(cafile=cafile)
    conn = http.client.HTTPSConnection("127.0.0.1", proxy_port, context=ctx,
                                       timeout=timeout)
    conn.set_tunnel(host, 443)
    try:
        extra = dict(headers or {})
        extra.setdefault("Host", host)
        conn.request(method, selector, body=body if body else None, headers=extra)
        resp = conn.getresponse()
        data = b"" if method == "HEAD" else resp.read()
        return resp.status, resp.reason, resp.getheaders(), data
    finally:
        conn.close()

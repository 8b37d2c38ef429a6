"""Capturing HTTP(S) forward proxy.

The proxy relays browser traffic untouched in observe mode and records
every GET, POST, and HEAD request that falls inside a declared visit
window. A small control origin (default ``fpsentry.control``) lets the
crawl driver open and close those windows over plain HTTP through the
same listener, which keeps page-origin attribution unambiguous: one
active site per proxy at a time.

HTTPS inspection, when enabled, terminates TLS with a locally generated
root (see tlscert) and re-encrypts upstream. Without it, CONNECT is a
blind byte tunnel and nothing inside is recorded. WebSocket upgrades are
tunneled untouched either way; only their byte volume is counted.

In block mode a request whose payload matches at least one core profile
attribute is answered with an empty 403 and never forwarded.
"""

from __future__ import annotations

import dataclasses
import http.client
import json
import logging
import socket
import ssl
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

from .capture import (
    DELIVERY_BLOCKED,
    DELIVERY_FAILED,
    DELIVERY_OK,
    METHODS,
    VERDICT_BLOCKED,
    VERDICT_FORWARDED,
    CaptureLogError,
    CaptureLogWriter,
    CaptureRecord,
    read_log,
    record_to_dict,
    visit_end_entry,
    visit_start_entry,
)
from .catalog import Catalog, DeviceProfile
from .detector import DetectorPipeline, FingerprintingEvent
from .tlscert import CertAuthority, CredentialError

log = logging.getLogger(__name__)

MODE_OBSERVE = "observe"
MODE_BLOCK = "block"
MODES = (MODE_OBSERVE, MODE_BLOCK)

CONTROL_HOST = "fpsentry.control"

# request bodies larger than this are relayed but not inspected
MAX_INSPECT_BODY = 32 * 1024 * 1024

_HOP_BY_HOP = {
    "connection", "proxy-connection", "keep-alive", "proxy-authenticate",
    "proxy-authorization", "te", "trailer", "trailers", "transfer-encoding",
    "upgrade",
}


class ProxyError(RuntimeError):
    """Startup or configuration failure."""


@dataclass(frozen=True)
class Verdict:
    decision: str
    event: FingerprintingEvent | None = None

    @property
    def blocked(self) -> bool:
        return self.decision == VERDICT_BLOCKED


def on_request(record: CaptureRecord, mode: str, pipeline: DetectorPipeline):
    """Inspect one captured request; returns (Verdict, Inspection).

    Block mode blocks exactly the requests whose payload carries at
    least one core attribute; everything else is forwarded in both
    modes.
    """
    inspection = pipeline.inspect(query=record.query_bytes, body=record.body_bytes)
    event = pipeline.classify(record, inspection)
    if mode == MODE_BLOCK and event is not None:
        return Verdict(VERDICT_BLOCKED, event), inspection
    return Verdict(VERDICT_FORWARDED, event), inspection


@dataclass
class ProxyConfig:
    port: int = 0
    host: str = "127.0.0.1"
    mode: str = MODE_OBSERVE
    https_inspect: bool = False
    log_path: str | None = None
    catalog: Catalog | None = None
    profile: DeviceProfile | None = None
    ca: CertAuthority | None = None
    control_host: str = CONTROL_HOST
    static_origin: str | None = None
    host_aliases: dict = field(default_factory=dict)
    upstream_ca: str | None = None
    upstream_verify: bool = True
    upstream_timeout: float = 15.0
    log_header_extra: dict | None = None


def _load_log_state(path):
    """Continue sequence numbers and the dedup set from an existing log."""
    seq = 0
    seen = set()
    try:
        for entry in read_log(path):
            if entry.get("record_type") == "capture":
                seq = max(seq, int(entry.get("seq", 0)))
                seen.add((entry.get("page_origin", ""), entry.get("digest", "")))
    except (FileNotFoundError, CaptureLogError):
        pass
    return seq, seen


class _ProxyServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, config: ProxyConfig, pipeline: DetectorPipeline):
        self.config = config
        self.pipeline = pipeline
        self.writer = None
        self._seq = 0
        self._seen = set()
        self._state_lock = threading.Lock()
        self.active_site: str | None = None
        self._visit_count = 0
        self.tunneled_bytes = 0
        self.upstream_context = self._build_upstream_context()
        super().__init__((config.host, config.port), _ProxyRequestHandler)
        # no requests are handled until serve_forever runs, so the log
        # can be opened after the bind attempt
        if config.log_path:
            self._seq, self._seen = _load_log_state(config.log_path)
            self.writer = CaptureLogWriter(config.log_path,
                                           header_extra=config.log_header_extra)

    def _build_upstream_context(self):
        if self.config.upstream_ca:
            return ssl.create_default_context(cafile=self.config.upstream_ca)
        ctx = ssl.create_default_context()
        if not self.config.upstream_verify:
            ctx.check_hostname = False
            ctx.verify_mode = ssl.CERT_NONE
        return ctx

    def resolve(self, hostname: str, port: int):
        """Map a logical destination to a connectable address."""
        alias = self.config.host_aliases.get(hostname.lower())
        if alias is not None:
            return alias
        return hostname, port

    # -- visit windows ------------------------------------------------

    def begin_visit(self, site: str):
        with self._state_lock:
            self.active_site = site
            self._visit_count = 0
        self._append(visit_start_entry(site))

    def end_visit(self, status: str, load_time: float, revisited: bool):
        with self._state_lock:
            site = self.active_site
            count = self._visit_count
            self.active_site = None
            self._visit_count = 0
        if site is not None:
            self._append(visit_end_entry(site, status, load_time, count,
                                         revisited=revisited))
        return {"site": site, "capture_count": count}

    def current_origin(self) -> str | None:
        with self._state_lock:
            if self.active_site is not None:
                return self.active_site
        return self.config.static_origin

    def add_tunneled(self, n: int):
        with self._state_lock:
            self.tunneled_bytes += n

    # -- log plumbing -------------------------------------------------

    def _append(self, entry: dict):
        if self.writer is not None:
            self.writer.append(entry)

    def record_capture(self, record: CaptureRecord, verdict: Verdict,
                       delivery: str, inspection):
        """Assign a sequence number and persist; dedups repeat payloads.

        Returns True when a new record was appended. A (origin, digest)
        pair already present in the log, e.g. re-sent after a crash and
        revisit, is skipped so replays never double-count.
        """
        with self._state_lock:
            key = (record.page_origin, record.digest())
            if key in self._seen:
                return False
            self._seen.add(key)
            self._seq += 1
            final = dataclasses.replace(record, sequence_no=self._seq)
            if self.active_site == record.page_origin:
                self._visit_count += 1
        self._append(record_to_dict(final, verdict.decision, delivery, inspection))
        return True

    def close(self):
        self.shutdown()
        self.server_close()
        if self.writer is not None:
            self.writer.close()


class _ProxyRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # unbuffered reads so a CONNECT handover never swallows TLS bytes
    rbufsize = 0

    server: _ProxyServer
    intercepted: tuple[str, int] | None = None

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    # BaseHTTPRequestHandler dispatches on do_<METHOD>
    def _dispatch(self):
        try:
            self._handle_exchange()
        except (ConnectionError, ssl.SSLError, socket.timeout) as exc:
            log.debug("client connection dropped: %s", exc)
            self.close_connection = True

    do_GET = _dispatch
    do_POST = _dispatch
    do_HEAD = _dispatch
    do_PUT = _dispatch
    do_DELETE = _dispatch
    do_OPTIONS = _dispatch
    do_PATCH = _dispatch

    # -- request plumbing ----------------------------------------------

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self.rfile.read(min(remaining, 65536))
            if not chunk:
                break
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _read_chunked(self) -> bytes:
        body = []
        while True:
            line = self.rfile.readline(65536).strip()
            size = int(line.split(b";", 1)[0] or b"0", 16)
            if size == 0:
                while True:
                    trailer = self.rfile.readline(65536)
                    if trailer in (b"\r\n", b"\n", b""):
                        break
                break
            body.append(self._read_exact(size))
            self.rfile.readline(65536)
        return b"".join(body)

    def _read_body(self) -> bytes:
        if "chunked" in self.headers.get("Transfer-Encoding", "").lower():
            return self._read_chunked()
        length = self.headers.get("Content-Length")
        if not length:
            return b""
        return self._read_exact(int(length))

    def _send_simple(self, status: int, reason: str, payload: bytes = b"",
                     content_type: str = "application/json"):
        self.send_response_only(status, reason)
        if payload:
            self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload and self.command != "HEAD":
            self.wfile.write(payload)

    # -- target resolution ----------------------------------------------

    def _split_target(self):
        """Returns (scheme, host, port, selector) for this request."""
        if self.intercepted is not None:
            host, port = self.intercepted
            header_host = (self.headers.get("Host") or "").rsplit(":", 1)[0]
            return "https", (header_host or host), port, self.path
        if self.path.startswith("http://") or self.path.startswith("https://"):
            parts = urlsplit(self.path)
            selector = parts.path or "/"
            if parts.query:
                selector += "?" + parts.query
            port = parts.port or (443 if parts.scheme == "https" else 80)
            return parts.scheme, parts.hostname or "", port, selector
        # origin-form request straight at the listener (control traffic)
        host = (self.headers.get("Host") or "").rsplit(":", 1)[0]
        return "http", host, 80, self.path

    # -- control origin --------------------------------------------------

    def _handle_control(self, selector: str, body: bytes):
        server = self.server
        path = urlsplit(selector).path
        if self.command == "POST" and path == "/visit":
            try:
                site = json.loads(body.decode("utf-8"))["site"]
            except (ValueError, KeyError):
                self._send_simple(400, "Bad Request", b'{"error": "missing site"}')
                return
            server.begin_visit(site)
            self._send_simple(200, "OK", json.dumps({"ok": True, "site": site}).encode())
        elif self.command == "POST" and path == "/visit/end":
            info = {}
            if body:
                try:
                    info = json.loads(body.decode("utf-8"))
                except ValueError:
                    info = {}
            result = server.end_visit(
                status=info.get("status", "loaded"),
                load_time=float(info.get("load_time", 0.0)),
                revisited=bool(info.get("revisited", False)))
            self._send_simple(200, "OK", json.dumps(result).encode())
        elif self.command == "GET" and path == "/healthz":
            payload = {"ok": True, "mode": server.config.mode,
                       "active_site": server.current_origin(),
                       "https_inspect": server.config.https_inspect}
            self._send_simple(200, "OK", json.dumps(payload).encode())
        else:
            self._send_simple(404, "Not Found", b'{"error": "unknown control path"}')

    # -- the main exchange -------------------------------------------------

    def _handle_exchange(self):
        scheme, host, port, selector = self._split_target()
        body = self._read_body()
        if host == self.server.config.control_host:
            self._handle_control(selector, body)
            return
        if not host:
            self._send_simple(400, "Bad Request")
            return
        if self.headers.get("Upgrade", "").lower() == "websocket":
            self._tunnel_upgrade(scheme, host, port, selector, body)
            return

        record = None
        inspection = None
        verdict = Verdict(VERDICT_FORWARDED)
        origin = self.server.current_origin()
        query = urlsplit(selector).query.encode("utf-8")
        # empty-payload requests carry no data worth recording
        in_scope = (self.command in METHODS
                    and bool(query or body)
                    and len(body) <= MAX_INSPECT_BODY)
        if in_scope:
            record = CaptureRecord(
                sequence_no=0,
                page_origin=origin or "",
                destination_host=host,
                destination_path=urlsplit(selector).path or "/",
                method=self.command,
                scheme=scheme,
                query_bytes=query,
                body_bytes=body,
                referer=self.headers.get("Referer", ""),
                content_type=self.headers.get("Content-Type", ""),
                timestamp=time.time(),
            )
            verdict, inspection = on_request(record, self.server.config.mode,
                                             self.server.pipeline)

        if verdict.blocked:
            # never forwarded; empty failure answer so pages do not hang
            if origin is not None:
                self.server.record_capture(record, verdict, DELIVERY_BLOCKED,
                                           inspection)
            self._send_simple(403, "Forbidden")
            return

        upstream_reply = self._exchange(scheme, host, port, selector, body)
        delivery = DELIVERY_OK if upstream_reply is not None else DELIVERY_FAILED
        # persist before answering so the log never lags the browser
        if record is not None and origin is not None:
            self.server.record_capture(record, verdict, delivery, inspection)
        if upstream_reply is None:
            self._send_simple(502, "Bad Gateway")
        else:
            self._relay(upstream_reply)

    def _upstream_socket(self, scheme, host, port):
        real_host, real_port = self.server.resolve(host, port)
        raw = socket.create_connection((real_host, real_port),
                                       timeout=self.server.config.upstream_timeout)
        if scheme != "https":
            return raw
        try:
            return self.server.upstream_context.wrap_socket(raw, server_hostname=host)
        except Exception:
            raw.close()
            raise

    def _exchange(self, scheme, host, port, selector, body):
        """Send to the destination; returns (status, reason, headers, data) or None."""
        conn = http.client.HTTPConnection(host, port,
                                          timeout=self.server.config.upstream_timeout)
        try:
            conn.sock = self._upstream_socket(scheme, host, port)
            conn.putrequest(self.command, selector, skip_host=True,
                            skip_accept_encoding=True)
            saw_host = False
            for name, value in self.headers.items():
                lower = name.lower()
                if lower in _HOP_BY_HOP or lower == "content-length":
                    continue
                if lower == "host":
                    saw_host = True
                conn.putheader(name, value)
            if not saw_host:
                conn.putheader("Host", host if port in (80, 443)
                               else "%s:%d" % (host, port))
            if body or self.command in ("POST", "PUT", "PATCH"):
                conn.putheader("Content-Length", str(len(body)))
            conn.endheaders(body if body else None)
            resp = conn.getresponse()
            data = b"" if self.command == "HEAD" else resp.read()
            return resp.status, resp.reason, resp.getheaders(), data
        except (OSError, http.client.HTTPException) as exc:
            log.debug("upstream %s:%d failed: %s", host, port, exc)
            return None
        finally:
            conn.close()

    def _relay(self, upstream_reply):
        status, reason, headers, data = upstream_reply
        self.send_response_only(status, reason)
        keep_length = self.command == "HEAD" or status in (204, 304)
        for name, value in headers:
            lower = name.lower()
            if lower in _HOP_BY_HOP:
                continue
            if lower == "content-length" and not keep_length:
                continue
            self.send_header(name, value)
        if not keep_length:
            self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        if data:
            self.wfile.write(data)

    # -- tunnels ---------------------------------------------------------

    def do_CONNECT(self):
        host, _, port_text = self.path.partition(":")
        port = int(port_text or "443")
        if not self.server.config.https_inspect:
            self._blind_tunnel(host, port)
            return
        self.send_response_only(200, "Connection Established")
        self.end_headers()
        self.close_connection = True
        try:
            ctx = self.server.config.ca.server_context(host)
            tls = ctx.wrap_socket(self.connection, server_side=True)
        except (ssl.SSLError, OSError) as exc:
            log.debug("interception handshake with %s failed: %s", host, exc)
            return
        _serve_intercepted(tls, self.client_address, self.server, host, port)

    def _blind_tunnel(self, host, port):
        self.close_connection = True
        try:
            upstream = socket.create_connection(
                self.server.resolve(host, port),
                timeout=self.server.config.upstream_timeout)
        except OSError:
            self.send_response_only(502, "Bad Gateway")
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        self.send_response_only(200, "Connection Established")
        self.end_headers()
        self.wfile.flush()
        _splice(self.connection, upstream, self.server)

    def _tunnel_upgrade(self, scheme, host, port, selector, body):
        """WebSocket handshakes pass through as-is; frames are not inspected."""
        self.close_connection = True
        try:
            upstream = self._upstream_socket(scheme, host, port)
        except OSError:
            self._send_simple(502, "Bad Gateway")
            return
        lines = ["%s %s HTTP/1.1" % (self.command, selector)]
        for name, value in self.headers.items():
            if name.lower() == "proxy-connection":
                continue
            lines.append("%s: %s" % (name, value))
        handshake = ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + body
        try:
            upstream.sendall(handshake)
        except OSError:
            upstream.close()
            self._send_simple(502, "Bad Gateway")
            return
        _splice(self.connection, upstream, self.server)


def _serve_intercepted(tls_sock, client_address, server, host, port):
    """Run the normal handler loop over a freshly terminated TLS stream."""
    handler = _ProxyRequestHandler.__new__(_ProxyRequestHandler)
    handler.intercepted = (host, port)
    try:
        _ProxyRequestHandler.__init__(handler, tls_sock, client_address, server)
    except (ConnectionError, ssl.SSLError, socket.timeout):
        pass
    finally:
        try:
            tls_sock.close()
        except OSError:
            pass


def _splice(a, b, server):
    """Copy bytes both ways until either side closes; counts volume only."""

    def pump(src, dst):
        total = 0
        try:
            while True:
                chunk = src.recv(65536)
                if not chunk:
                    break
                dst.sendall(chunk)
                total += len(chunk)
        except OSError:
            pass
        finally:
            server.add_tunneled(total)
            for sock in (src, dst):
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

    threads = [threading.Thread(target=pump, args=(a, b), daemon=True),
               threading.Thread(target=pump, args=(b, a), daemon=True)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for sock in (a, b):
        try:
            sock.close()
        except OSError:
            pass


@dataclass
class ProxyHandle:
    server: _ProxyServer
    thread: threading.Thread
    config: ProxyConfig

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def url(self) -> str:
        return "http://%s:%d" % (self.config.host, self.port)

    def close(self):
        self.server.close()
        self.thread.join(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class ControlClient:
    """Talks to the proxy's control origin through the proxy port."""

    def __init__(self, proxy_host: str, proxy_port: int,
                 control_host: str = CONTROL_HOST, timeout: float = 10.0):
        self.proxy_host = proxy_host
        self.proxy_port = proxy_port
        self.control_host = control_host
        self.timeout = timeout

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        body = json.dumps(payload).encode("utf-8") if payload is not None else b""
        conn = http.client.HTTPConnection(self.proxy_host, self.proxy_port,
                                          timeout=self.timeout)
        try:
            conn.putrequest(method, "http://%s%s" % (self.control_host, path),
                            skip_host=True, skip_accept_encoding=True)
            conn.putheader("Host", self.control_host)
            if body:
                conn.putheader("Content-Type", "application/json")
            conn.putheader("Content-Length", str(len(body)))
            conn.endheaders(body if body else None)
            resp = conn.getresponse()
            data = resp.read()
            if resp.status != 200:
                raise ProxyError("control %s %s failed: %d %s"
                                 % (method, path, resp.status, data[:200]))
            return json.loads(data.decode("utf-8")) if data else {}
        finally:
            conn.close()

    def begin_visit(self, site: str) -> dict:
        return self._request("POST", "/visit", {"site": site})

    def end_visit(self, status: str = "loaded", load_time: float = 0.0,
                  revisited: bool = False) -> dict:
        return self._request("POST", "/visit/end",
                             {"status": status, "load_time": load_time,
                              "revisited": revisited})

    def healthz(self) -> dict:
        return self._request("GET", "/healthz")


def start_proxy(config: ProxyConfig) -> ProxyHandle:
    """Bind and serve in a background thread; raises ProxyError on bad setup."""
    if config.mode not in MODES:
        raise ProxyError("unknown mode %r" % config.mode)
    if config.catalog is None or config.profile is None:
        raise ProxyError("proxy needs a catalog and a device profile")
    if config.https_inspect and config.ca is None:
        raise CredentialError("https inspection enabled but no interception "
                              "credential was provided")
    pipeline = DetectorPipeline(config.catalog, config.profile)
    try:
        server = _ProxyServer(config, pipeline)
    except OSError as exc:
        raise ProxyError("cannot listen on %s:%d: %s"
                         % (config.host, config.port, exc)) from exc
    thread = threading.Thread(target=server.serve_forever,
                              name="fpsentry-proxy", daemon=True)
    thread.start()
    return ProxyHandle(server=server, thread=thread, config=config)

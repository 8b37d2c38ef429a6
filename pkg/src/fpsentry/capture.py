"""Append-only capture log: request records, visit windows, verdicts.

The log is newline-delimited JSON. The first record is a header carrying
the log format version and run metadata; after that come visit markers
(written when the crawler declares a visit window) and capture records,
one per intercepted in-scope request. Writes are flushed per record so a
crash can only ever lose the line being written, never corrupt earlier
ones; the reader tolerates a torn trailing line for the same reason.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

LOG_VERSION = 1

METHODS = ("GET", "POST", "HEAD")
SCHEMES = ("http", "https")

VERDICT_FORWARDED = "forwarded"
VERDICT_BLOCKED = "blocked"

DELIVERY_OK = "ok"
DELIVERY_FAILED = "failed"
DELIVERY_BLOCKED = "blocked"


class CaptureLogError(ValueError):
    """Log unreadable, version-incompatible, or structurally broken."""


@dataclass(frozen=True)
class CaptureRecord:
    """One intercepted GET/POST/HEAD request."""

    sequence_no: int
    page_origin: str
    destination_host: str
    destination_path: str
    method: str
    scheme: str
    query_bytes: bytes = b""
    body_bytes: bytes = b""
    referer: str = ""
    content_type: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError("method must be one of %s, got %r" % (", ".join(METHODS), self.method))
        if self.scheme not in SCHEMES:
            raise ValueError("scheme must be http or https, got %r" % self.scheme)

    @property
    def payload_size(self) -> int:
        return len(self.query_bytes) + len(self.body_bytes)

    def digest(self) -> str:
        """Content digest used for duplicate suppression across resumes."""
        h = hashlib.sha256()
        for part in (self.page_origin, self.destination_host, self.destination_path,
                     self.method, self.scheme):
            h.update(part.encode("utf-8", "surrogateescape"))
            h.update(b"\x00")
        h.update(self.query_bytes)
        h.update(b"\x00")
        h.update(self.body_bytes)
        return h.hexdigest()[:16]


def record_to_dict(record: CaptureRecord, verdict: str, delivery: str,
                   inspection=None) -> dict:
    """Serialize a capture record plus its verdict for the log."""
    entry = {
        "record_type": "capture",
        "seq": record.sequence_no,
        "page_origin": record.page_origin,
        "destination_host": record.destination_host,
        "destination_path": record.destination_path,
        "method": record.method,
        "scheme": record.scheme,
        "query": record.query_bytes.decode("utf-8", "replace"),
        "body_b64": base64.b64encode(record.body_bytes).decode("ascii"),
        "referer": record.referer,
        "content_type": record.content_type,
        "payload_size": record.payload_size,
        "timestamp": record.timestamp,
        "digest": record.digest(),
        "verdict": verdict,
        "delivery": delivery,
        "fingerprinting": False,
        "hits": [],
        "fp_ids": [],
    }
    if inspection is not None:
        entry["fingerprinting"] = inspection.is_fingerprinting
        for part in inspection.parts:
            for h in part.hits:
                entry["hits"].append({
                    "attribute": h.attribute_id,
                    "part": part.source_part,
                    "layer": h.layer_index,
                    "offset": h.byte_offset,
                    "text": h.matched_text,
                    "kind": h.detector_kind,
                })
            for f in part.fp_ids:
                entry["fp_ids"].append({
                    "label": f.label,
                    "value": f.value,
                    "part": part.source_part,
                    "layer": f.layer_index,
                })
    return entry


class CaptureLogWriter:
    """Serialized appender; one instance owns the log file.

    All proxy worker threads funnel through append(), which holds a lock
    for the write+flush so records never interleave. On an IO error the
    writer flips to degraded mode: the proxy keeps forwarding traffic but
    nothing more is persisted, and the condition is surfaced once.
    """

    def __init__(self, path, header_extra=None):
        self.path = str(path)
        self._lock = threading.Lock()
        self.degraded = False
        self._fh = open(self.path, "a", encoding="utf-8")
        if self._fh.tell() == 0:
            header = {
                "record_type": "header",
                "log_version": LOG_VERSION,
                "created_at": time.time(),
            }
            header.update(header_extra or {})
            self._write(header)

    def _write(self, entry: dict):
        line = json.dumps(entry, separators=(",", ":"), sort_keys=True)
        self._fh.write(line + "\n")
        self._fh.flush()

    def append(self, entry: dict) -> bool:
        """Append one record. Returns False when running degraded."""
        with self._lock:
            if self.degraded:
                return False
            try:
                self._write(entry)
                return True
            except (OSError, ValueError) as exc:  # ValueError: write on closed file
                self.degraded = True
                log.error("capture log write failed (%s); continuing without recording", exc)
                return False

    def close(self):
        with self._lock:
            try:
                self._fh.close()
            except OSError:
                pass


def read_log(path, require_header=True):
    """Yield log records as dicts, tolerating a torn trailing line.

    Raises CaptureLogError for a missing/incompatible header. A line that
    fails to parse ends iteration with a warning: everything before it is
    a valid prefix (the crash-recovery property of the writer).
    """
    first = True
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                entry = json.loads(stripped)
            except json.JSONDecodeError:
                log.warning("%s:%d: unparseable record, treating as torn tail", path, lineno)
                return
            if first:
                first = False
                if require_header:
                    if entry.get("record_type") != "header":
                        raise CaptureLogError("%s: first record is not a header" % path)
                    version = entry.get("log_version")
                    if version != LOG_VERSION:
                        raise CaptureLogError(
                            "%s: log version %r unsupported (want %d)" % (path, version, LOG_VERSION))
            yield entry
    if first and require_header:
        raise CaptureLogError("%s: empty log" % path)


def read_capture_digests(path):
    """(page_origin, digest) pairs already present in a log.

    Used on startup so a resumed run never re-records a capture it
    already has. Missing file means an empty set.
    """
    seen = set()
    try:
        for entry in read_log(path):
            if entry.get("record_type") == "capture":
                seen.add((entry.get("page_origin", ""), entry.get("digest", "")))
    except FileNotFoundError:
        pass
    return seen


def visit_start_entry(site: str) -> dict:
    return {"record_type": "visit", "site": site, "started_at": time.time()}


def visit_end_entry(site: str, status: str, load_time: float,
                    capture_count: int, revisited: bool = False) -> dict:
    return {
        "record_type": "visit_end",
        "site": site,
        "status": status,
        "load_time": load_time,
        "capture_count": capture_count,
        "revisited": revisited,
        "ended_at": time.time(),
    }


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()

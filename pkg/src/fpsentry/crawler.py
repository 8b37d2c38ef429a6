"""Site-list crawl driver.

Visits each site once through the capturing proxy: declare the visit to
the proxy, navigate, wait for document-complete (the navigate command
returns when the page load finishes), hold the page open for the
post-load delay so late beacons still fire, then park on about:blank
and close the visit window. Crashed or navigation-failed sites are
retried once with a fresh browser session; timeouts are not retried.

Progress is checkpointed atomically every N sites so a killed run can
resume at the first unvisited site without duplicating captures (the
proxy dedups replayed payloads by content digest).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

from .proxy import CONTROL_HOST, ControlClient
from .webdriver import ABOUT_BLANK, WebDriverClient, WebDriverError

log = logging.getLogger(__name__)

OUTCOME_LOADED = "loaded"
OUTCOME_TIMED_OUT = "timed_out"
OUTCOME_CRASHED = "browser_crashed"
OUTCOME_NAV_ERROR = "navigation_error"
OUTCOMES = (OUTCOME_LOADED, OUTCOME_TIMED_OUT, OUTCOME_CRASHED, OUTCOME_NAV_ERROR)

CHECKPOINT_VERSION = 1


class CrawlError(RuntimeError):
    pass


class CheckpointError(CrawlError):
    """Checkpoint unusable; carries the last intact fallback if any."""

    def __init__(self, message: str, last_intact: str | None = None):
        super().__init__(message)
        self.last_intact = last_intact


@dataclass
class CrawlConfig:
    sites: tuple
    webdriver_url: str
    proxy_host: str
    proxy_port: int
    post_load_delay: float = 3.0
    page_timeout: float = 20.0
    checkpoint_every: int = 200
    max_retries_per_site: int = 1
    checkpoint_path: str | None = None
    control_host: str = CONTROL_HOST

    def __post_init__(self):
        self.sites = tuple(self.sites)
        if not self.sites:
            raise CrawlError("site list is empty")
        if self.post_load_delay < 0:
            raise CrawlError("post_load_delay must be >= 0")
        if self.page_timeout <= 0:
            raise CrawlError("page_timeout must be positive")
        if self.checkpoint_every < 1:
            raise CrawlError("checkpoint_every must be >= 1")


@dataclass(frozen=True)
class VisitOutcome:
    site: str
    status: str
    load_time: float
    capture_count: int
    revisited: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "VisitOutcome":
        return cls(site=data["site"], status=data["status"],
                   load_time=data["load_time"],
                   capture_count=data["capture_count"],
                   revisited=data.get("revisited", False))


@dataclass
class CrawlReport:
    outcomes: list
    resumed_from: int = 0

    @property
    def status_counts(self) -> dict:
        counts = {status: 0 for status in OUTCOMES}
        for outcome in self.outcomes:
            counts[outcome.status] += 1
        return counts

    @property
    def total_captures(self) -> int:
        return sum(o.capture_count for o in self.outcomes)


def site_url(site: str) -> str:
    return site if "://" in site else "http://" + site


def site_hostname(site: str) -> str:
    if "://" in site:
        site = site.split("://", 1)[1]
    host = site.split("/", 1)[0]
    return host.rsplit(":", 1)[0] if ":" in host else host


def load_site_list(path) -> tuple:
    """One site per line; blanks and # comments ignored."""
    sites = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                sites.append(line)
    return tuple(sites)


def convert_ranked_csv(src, dst):
    """Strip rank columns from a top-sites CSV into a plain site list.

    Accepts `rank,domain` rows (extra columns ignored) and writes one
    hostname per line, preserving order. Returns the number of sites.
    """
    count = 0
    with open(src, encoding="utf-8") as inp, open(dst, "w", encoding="utf-8") as out:
        for line in inp:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            domain = parts[1].strip() if len(parts) > 1 else parts[0].strip()
            if not domain or domain.lower() in ("domain", "site", "host"):
                continue
            out.write(domain + "\n")
            count += 1
    return count


def _sites_digest(sites) -> str:
    h = hashlib.sha256()
    for site in sites:
        h.update(site.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


@dataclass
class CrawlState:
    next_index: int = 0
    outcomes: list = field(default_factory=list)
    sites_digest: str = ""


def write_checkpoint(path, state: CrawlState):
    """Atomic write; the previous generation is kept at path + '.prev'."""
    payload = json.dumps({
        "version": CHECKPOINT_VERSION,
        "next_index": state.next_index,
        "sites_digest": state.sites_digest,
        "outcomes": [o.to_dict() for o in state.outcomes],
        "written_at": time.time(),
    }, indent=2, sort_keys=True)
    path = str(path)
    if os.path.exists(path):
        prev_tmp = path + ".prev.tmp"
        with open(path, "rb") as cur, open(prev_tmp, "wb") as out:
            out.write(cur.read())
        os.replace(prev_tmp, path + ".prev")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(payload + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _parse_checkpoint(path) -> CrawlState:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version %r" % doc.get("version"))
    outcomes = [VisitOutcome.from_dict(o) for o in doc["outcomes"]]
    return CrawlState(next_index=int(doc["next_index"]), outcomes=outcomes,
                      sites_digest=doc["sites_digest"])


def resume(path) -> CrawlState | None:
    """Load crawl state; None when no checkpoint exists yet.

    A corrupt checkpoint is never silently skipped: the error names the
    last intact generation (the .prev file) when one parses.
    """
    path = str(path)
    if not os.path.exists(path):
        return None
    try:
        return _parse_checkpoint(path)
    except (ValueError, KeyError, TypeError) as exc:
        prev = path + ".prev"
        last_intact = None
        try:
            _parse_checkpoint(prev)
            last_intact = prev
        except (OSError, ValueError, KeyError, TypeError):
            pass
        raise CheckpointError(
            "checkpoint %s is corrupt (%s); last intact checkpoint: %s"
            % (path, exc, last_intact or "none"), last_intact=last_intact) from exc


class Crawler:
    def __init__(self, config: CrawlConfig):
        self.config = config
        self.client = WebDriverClient(config.webdriver_url)
        self.control = ControlClient(config.proxy_host, config.proxy_port,
                                     control_host=config.control_host)
        self._session: str | None = None

    # -- session management -------------------------------------------

    def _capabilities(self) -> dict:
        proxy_addr = "%s:%d" % (self.config.proxy_host, self.config.proxy_port)
        return {
            "proxy": {"proxyType": "manual",
                      "httpProxy": proxy_addr, "sslProxy": proxy_addr},
            "acceptInsecureCerts": True,
            "timeouts": {"pageLoad": int(self.config.page_timeout * 1000)},
        }

    def _ensure_session(self) -> str:
        if self._session is None:
            self._session = self.client.new_session(self._capabilities())
        return self._session

    def _drop_session(self):
        if self._session is not None:
            try:
                self.client.delete_session(self._session)
            except WebDriverError:
                pass
            self._session = None

    # -- visiting -------------------------------------------------------

    def visit(self, site: str, revisited: bool = False) -> VisitOutcome:
        """One site, one visit window. Crash surfaces as status=browser_crashed."""
        session = self._ensure_session()
        hostname = site_hostname(site)
        self.control.begin_visit(hostname)
        status = OUTCOME_LOADED
        started = time.monotonic()
        try:
            # navigate returns once the document-complete signal fires
            self.client.navigate(session, site_url(site),
                                 timeout=self.config.page_timeout + 10)
            load_time = time.monotonic() - started
        except WebDriverError as exc:
            load_time = time.monotonic() - started
            if exc.is_timeout:
                status = OUTCOME_TIMED_OUT
            elif exc.is_crash:
                status = OUTCOME_CRASHED
                self._session = None
            else:
                status = OUTCOME_NAV_ERROR
        if status == OUTCOME_LOADED and self.config.post_load_delay > 0:
            time.sleep(self.config.post_load_delay)
        if status != OUTCOME_CRASHED:
            try:
                # leaving the page cancels anything still pending in it
                self.client.navigate(session, ABOUT_BLANK)
            except WebDriverError:
                self._session = None
        info = self.control.end_visit(status=status, load_time=round(load_time, 3),
                                      revisited=revisited)
        return VisitOutcome(site=site, status=status, load_time=round(load_time, 3),
                            capture_count=int(info.get("capture_count") or 0),
                            revisited=revisited)

    def _visit_with_retry(self, site: str) -> VisitOutcome:
        outcome = self.visit(site)
        retries = 0
        while (outcome.status in (OUTCOME_CRASHED, OUTCOME_NAV_ERROR)
               and retries < self.config.max_retries_per_site):
            retries += 1
            log.info("revisiting %s after %s", site, outcome.status)
            outcome = self.visit(site, revisited=True)
        return outcome

    # -- the loop ---------------------------------------------------------

    def run(self) -> CrawlReport:
        config = self.config
        state = CrawlState(sites_digest=_sites_digest(config.sites))
        if config.checkpoint_path:
            loaded = resume(config.checkpoint_path)
            if loaded is not None:
                if loaded.sites_digest != state.sites_digest:
                    raise CrawlError("checkpoint was written for a different "
                                     "site list; refusing to resume")
                state = loaded
        resumed_from = state.next_index
        try:
            self.client.status()
        except WebDriverError as exc:
            raise CrawlError("automation endpoint unreachable: %s" % exc) from exc

        visited_since_checkpoint = 0
        try:
            for index in range(state.next_index, len(config.sites)):
                outcome = self._visit_with_retry(config.sites[index])
                state.outcomes.append(outcome)
                state.next_index = index + 1
                visited_since_checkpoint += 1
                if (config.checkpoint_path
                        and visited_since_checkpoint >= config.checkpoint_every):
                    write_checkpoint(config.checkpoint_path, state)
                    visited_since_checkpoint = 0
        finally:
            if config.checkpoint_path:
                write_checkpoint(config.checkpoint_path, state)
            self._drop_session()
        return CrawlReport(outcomes=list(state.outcomes), resumed_from=resumed_from)


def run_crawl(config: CrawlConfig) -> CrawlReport:
    return Crawler(config).run()

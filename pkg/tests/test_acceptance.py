"""Acceptance gate: one test per headline guarantee, one verdict line each.

Every test here checks a user-visible promise end to end, with its own
ground truth (hand-built payload corpus, fixture-site plans, the
independent aggregation checker) rather than the implementation's
intermediate state. Stated runtime budgets are asserted, not assumed.
"""

import base64
import json
import random
import subprocess
import sys
import time
import urllib.parse
from contextlib import contextmanager
from pathlib import Path

import pytest

from fpsentry.analytics import aggregate
from fpsentry.capture import read_log
from fpsentry.catalog import load_catalog
from fpsentry.crawler import CrawlConfig, resume, run_crawl, site_hostname
from fpsentry.detector import AttributeHit, DetectorPipeline, classify_message
from fpsentry.proxy import MODE_BLOCK, MODE_OBSERVE, ProxyConfig, start_proxy
from fpsentry.tlscert import CertAuthority

from support.browser_sim import BrowserSim
from support.fixture_cluster import (
    DECOY_CDN,
    TRACKER_A,
    TRACKER_B,
    FixtureCluster,
    capture_key,
)
from support.profiles import PROFILE_DATA

REPO = Path(__file__).resolve().parent.parent
SYNTHETIC_LOG = REPO / "tests" / "data" / "synthetic_capture_log.jsonl"
ORACLE = REPO / "tools" / "stats_oracle.py"
RULES_FILE = REPO / "src" / "fpsentry" / "data" / "public_suffix_rules.dat"

# the seventeen automatically detectable attributes, spelled out rather
# than imported so a catalog regression cannot vouch for itself
CORE_SEVENTEEN = (
    "resolution", "os", "os_version", "user_agent", "browser_name",
    "browser_version", "webgl_renderer", "webgl_vendor", "webgl_version",
    "gpu", "gpu_vendor", "installed_plugins", "language", "geolocation",
    "city", "ip_addresses", "charset",
)

CATEGORY_COUNTS = {"WebGL": 114, "Features": 66, "Media": 41,
                   "Miscellaneous": 35, "InputOutput": 20, "Network": 10}


@contextmanager
def verdict(name):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print("[ACCEPTANCE] %-36s FAIL (%.1fs)" % (name, time.monotonic() - started))
        raise
    print("[ACCEPTANCE] %-36s PASS (%.1fs)" % (name, time.monotonic() - started))


# -- 1. detector golden corpus ---------------------------------------------


def _attribute_value_text(attr: str) -> str:
    value = PROFILE_DATA[attr]
    if attr == "geolocation":
        return "lat=%s&lon=%s" % (value[0], value[1])
    if isinstance(value, list):
        return value[0]
    return value


def _carriers(text: str):
    return {
        "plain": text,
        "percent": urllib.parse.quote("v=" + text, safe=""),
        "form": urllib.parse.urlencode({"v": text}),
        "json": json.dumps({"v": text}),
        "base64": json.dumps(
            {"blob": base64.b64encode(("v=" + text).encode()).decode()}),
    }


DECOYS = [
    "name=1280088.jpeg",
    "1280088.jpeg",
    "res=12800x10240",
    "v=9999x9999",
    "lang=en-US",
    "lat=51.4167",
    "lon=-0.5667",
    "ua=Mozilla/5.0 (Windows NT 10.0; Win64; x64)",
    "os=Linux2",
    "city=Eghamton",
    "q=1024.jpg",
    "build=20100101",
    "gpu=NVIDIA",
]


def test_detector_golden_corpus(catalog, profile):
    with verdict("detector golden corpus"):
        pipeline = DetectorPipeline(catalog, profile)
        started = time.monotonic()
        cases = 0

        for attr in CORE_SEVENTEEN:
            text = _attribute_value_text(attr)
            for carrier, payload in _carriers(text).items():
                inspection = pipeline.inspect(body=payload.encode("utf-8"))
                found = set(inspection.core_attribute_ids)
                assert attr in found, (attr, carrier, payload)
                cases += 1

        for decoy in DECOYS:
            inspection = pipeline.inspect(body=decoy.encode("utf-8"))
            assert inspection.core_attribute_ids == (), (decoy, inspection.all_hits)
            cases += 1

        elapsed = time.monotonic() - started
        assert cases >= 40 + len(DECOYS)
        assert len(DECOYS) >= 10
        assert elapsed < 10.0, "corpus took %.2fs" % elapsed


# -- 2. event criterion conformance ----------------------------------------


def test_event_criterion_conformance(catalog):
    with verdict("event criterion conformance"):
        core_ids = [d.id for d in catalog.core]
        aux_ids = [d.id for d in catalog if not d.core][:40]
        record = object()

        def hit(attr_id):
            return AttributeHit(attribute_id=attr_id, matched_text="x",
                                layer_index=0, byte_offset=0,
                                detector_kind="profile")

        def check(core_subset, aux_subset):
            hits = [hit(a) for a in core_subset] + [hit(a) for a in aux_subset]
            event = classify_message(record, hits)
            if core_subset:
                assert event is not None
                assert set(event.core_attribute_ids) == set(core_subset)
            else:
                assert event is None

        # the edges: nothing, every single attribute alone, all seventeen
        check([], [])
        check([], aux_ids[:5])
        check(core_ids, [])
        for attr in core_ids:
            check([attr], [])

        rng = random.Random(20260819)
        for _ in range(10000):
            core_subset = rng.sample(core_ids, rng.randint(0, 4))
            aux_subset = rng.sample(aux_ids, rng.randint(0, 4))
            check(core_subset, aux_subset)


# -- 3. aggregation equals the independent checker ---------------------------


def test_aggregation_matches_oracle(rules):
    with verdict("aggregation oracle equivalence"):
        started = time.monotonic()
        stats = aggregate(SYNTHETIC_LOG, rules)
        mine = json.loads(stats.to_json())

        out = subprocess.run(
            [sys.executable, str(ORACLE), "--log", str(SYNTHETIC_LOG),
             "--rules", str(RULES_FILE)],
            capture_output=True, text=True, check=True)
        oracle = json.loads(out.stdout)

        assert mine == oracle
        elapsed = time.monotonic() - started
        assert elapsed < 30.0, "aggregation check took %.2fs" % elapsed


# -- 4/5/7. live crawls over the fixture cluster ------------------------------


def _start_stack(tmp_path, catalog, profile, mode, name, with_tls=True):
    ca = None
    upstream_ca = None
    if with_tls:
        ca = CertAuthority.generate()
        cert_path, _key = ca.save(tmp_path / ("ca-%s" % name))
        upstream_ca = cert_path
    cluster = FixtureCluster(ca=ca)
    log_path = tmp_path / ("%s.jsonl" % name)
    config = ProxyConfig(port=0, mode=mode, https_inspect=with_tls,
                         log_path=str(log_path), catalog=catalog,
                         profile=profile, ca=ca, host_aliases=cluster.aliases,
                         upstream_ca=upstream_ca, upstream_timeout=5.0)
    handle = start_proxy(config)
    return cluster, handle, log_path


def _crawl(cluster, handle, sim, sites, delay, **kw):
    config = CrawlConfig(sites=sites, webdriver_url=sim.url,
                         proxy_host="127.0.0.1", proxy_port=handle.port,
                         post_load_delay=delay, page_timeout=10.0, **kw)
    return run_crawl(config)


def _captures(log_path):
    return [e for e in read_log(log_path) if e.get("record_type") == "capture"]


def test_end_to_end_fixture_crawl(catalog, profile, tmp_path):
    with verdict("end-to-end fixture crawl"):
        started = time.monotonic()
        cluster, handle, log_path = _start_stack(tmp_path, catalog, profile,
                                                 MODE_OBSERVE, "e2e")
        sim = BrowserSim()
        try:
            sites = cluster.site_list()
            assert len(sites) >= 10
            report = _crawl(cluster, handle, sim, sites, delay=3.0)
            assert len(report.outcomes) == len(sites)

            expected = cluster.expected_captures(post_load_delay=3.0)
            got = _captures(log_path)
            missed = {e.key() for e in expected} - {capture_key(c) for c in got}
            spurious = {capture_key(c) for c in got} - {e.key() for e in expected}
            assert not missed, missed
            assert not spurious, spurious

            by_key = {capture_key(c): c for c in got}
            for exp in expected:
                entry = by_key[exp.key()]
                assert entry["fingerprinting"] is exp.fingerprinting
                assert exp.must_have <= {h["attribute"] for h in entry["hits"]}

            # the delayed beacon is inside the window at delay=3 above;
            # at delay=0 the navigation away cancels it
            late = [e for e in expected if e.min_delay > 0]
            assert late and all(e.key() in by_key for e in late)
        finally:
            sim.close()
            handle.close()
            cluster.close()

        cluster2, handle2, log2 = _start_stack(tmp_path, catalog, profile,
                                               MODE_OBSERVE, "e2e-nodelay",
                                               with_tls=False)
        sim2 = BrowserSim()
        try:
            report = _crawl(cluster2, handle2, sim2, ["late-beacon.test"], delay=0.0)
            assert report.outcomes[0].capture_count == 0
            assert _captures(log2) == []
        finally:
            sim2.close()
            handle2.close()
            cluster2.close()

        elapsed = time.monotonic() - started
        assert elapsed < 300.0, "fixture crawl took %.1fs" % elapsed


def _core_value_strings():
    values = []
    for attr in CORE_SEVENTEEN:
        value = PROFILE_DATA[attr]
        if attr == "geolocation":
            values.extend(str(v) for v in value)
        elif isinstance(value, list):
            values.extend(value)
        else:
            values.append(value)
    return values


def test_blocking_soundness_and_minimality(catalog, profile, tmp_path):
    with verdict("blocking soundness/minimality"):
        cluster, handle, log_path = _start_stack(tmp_path, catalog, profile,
                                                 MODE_BLOCK, "block")
        sim = BrowserSim()
        try:
            report = _crawl(cluster, handle, sim, cluster.site_list(), delay=3.0)
            assert len(report.outcomes) == len(cluster.sites)

            # soundness: nothing carrying a profile value reached a receiver
            for text in cluster.delivered_texts():
                lowered = text.lower()
                for value in _core_value_strings():
                    assert value.lower() not in lowered, (value, text)

            # minimality: every clean request arrived, and only those
            delivered = {(d["host"], d["path"].split("?")[0], d["method"])
                         for d in cluster.delivered}
            assert delivered == {
                (DECOY_CDN, "/img/1280088.jpeg", "GET"),
                (TRACKER_A, "/id", "POST"),
                (TRACKER_B, "/id", "POST"),
                (TRACKER_A, "/caps", "POST"),
            }

            # and the blocked attempts are all on the record
            blocked = {capture_key(c) for c in _captures(log_path)
                       if c["verdict"] == "blocked"}
            expected_blocked = {e.key() for e in
                                cluster.expected_captures(post_load_delay=3.0)
                                if e.fingerprinting}
            assert blocked == expected_blocked
        finally:
            sim.close()
            handle.close()
            cluster.close()


def test_catalog_conformance():
    with verdict("catalog conformance"):
        catalog = load_catalog()
        assert len(catalog) == sum(CATEGORY_COUNTS.values()) == 286
        assert catalog.category_counts() == CATEGORY_COUNTS
        assert tuple(sorted(d.id for d in catalog.core)) == tuple(sorted(CORE_SEVENTEEN))


def test_crash_recovery(catalog, profile, tmp_path):
    with verdict("crash recovery"):
        cluster, handle, log_path = _start_stack(tmp_path, catalog, profile,
                                                 MODE_OBSERVE, "recovery",
                                                 with_tls=False)
        sim = BrowserSim()
        try:
            # the delayed-beacon site would leave a timer racing across the
            # kill boundary; recovery semantics don't need it
            sites = [s for s in cluster.site_list() if s != "late-beacon.test"]
            sites_file = tmp_path / "recovery_sites.txt"
            sites_file.write_text("\n".join(sites) + "\n")
            checkpoint = tmp_path / "recovery.json"

            proc = subprocess.Popen(
                [sys.executable, "-m", "fpsentry.cli", "crawl",
                 "--sites", str(sites_file),
                 "--proxy", "127.0.0.1:%d" % handle.port,
                 "--webdriver", sim.url,
                 "--delay", "1", "--timeout", "5",
                 "--checkpoint-every", "1",
                 "--resume", str(checkpoint)],
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
            try:
                deadline = time.monotonic() + 60
                while time.monotonic() < deadline:
                    try:
                        state = resume(checkpoint)
                    except Exception:
                        state = None
                    if state is not None and state.next_index >= 3:
                        break
                    time.sleep(0.05)
                proc.kill()
            finally:
                proc.wait(timeout=10)

            killed_at = resume(checkpoint).next_index
            assert 3 <= killed_at < len(sites), "kill landed at %d" % killed_at

            config = CrawlConfig(sites=tuple(sites), webdriver_url=sim.url,
                                 proxy_host="127.0.0.1", proxy_port=handle.port,
                                 post_load_delay=1.0, page_timeout=5.0,
                                 checkpoint_path=str(checkpoint))
            report = run_crawl(config)
            assert report.resumed_from == killed_at

            # complete visit set, in order
            final = resume(checkpoint)
            assert [o.site for o in final.outcomes] == sites

            # no duplicated captures across the kill boundary
            entries = _captures(log_path)
            keys = [(e["page_origin"], e["digest"]) for e in entries]
            assert len(keys) == len(set(keys))

            crawled = {site_hostname(s) for s in sites}
            expected = {e.key() for e in cluster.expected_captures(1.0)
                        if e.page_origin in crawled}
            assert {capture_key(e) for e in entries} == expected
        finally:
            sim.close()
            handle.close()
            cluster.close()

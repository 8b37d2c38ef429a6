#!/usr/bin/env python3
"""Generate the bundled synthetic capture log used by aggregation tests.

The log is fully deterministic: fixed site plan, fixed timestamps, no
wall clock anywhere. It covers every site category the summary metrics
distinguish (exclusively third-party, exclusively first-party, both,
non-fingerprinting, timed-out, idle) plus all three transport modes and
a cross-domain shared fingerprint id. Hit lists are produced by the real
detector pipeline so records look exactly like proxy output.

Usage: make_synthetic_log.py --out tests/data/synthetic_capture_log.jsonl
"""

import argparse
import base64
import json

from fpsentry.capture import CaptureLogWriter, CaptureRecord, record_to_dict
from fpsentry.catalog import load_catalog, loads_profile
from fpsentry.detector import DetectorPipeline

T0 = 1754006400.0  # fixed epoch base so regeneration is byte-identical

PROFILE = {
    "resolution": "1280x1024",
    "os": "Linux",
    "os_version": "6.8.0",
    "user_agent": "Mozilla/5.0 (X11; Linux x86_64; rv:126.0) Gecko/20100101 Firefox/126.0",
    "browser_name": "Firefox",
    "browser_version": "126.0",
    "webgl_renderer": "ANGLE (NVIDIA GeForce GTX 1660 Direct3D11 vs_5_0 ps_5_0)",
    "webgl_vendor": "Google Inc. (NVIDIA)",
    "webgl_version": "WebGL 1.0 (OpenGL ES 2.0 Chromium)",
    "gpu": "NVIDIA GeForce GTX 1660",
    "gpu_vendor": "NVIDIA Corporation",
    "installed_plugins": ["PDF Viewer", "Chromium PDF Viewer"],
    "language": "en-GB",
    "geolocation": [51.4167, -0.5667],
    "city": "Egham",
    "ip_addresses": ["203.0.113.42"],
    "charset": "windows-1252",
}

UA = PROFILE["user_agent"]
B64_RES = base64.b64encode(b"1280x1024").decode()

# (method, query, body, content_type); every template transmits at least
# one core attribute
FP_TEMPLATES = [
    ("POST", "", "sr=1280x1024&lang=en-GB", "application/x-www-form-urlencoded"),
    ("GET", "cs=windows-1252&ua=" + UA.replace(" ", "%20"), "", ""),
    ("POST", "", json.dumps({"webgl": {
        "renderer": PROFILE["webgl_renderer"],
        "vendor": PROFILE["webgl_vendor"],
        "version": PROFILE["webgl_version"]}}), "application/json"),
    ("POST", "", json.dumps({"res": B64_RES, "city": "Egham"}), "application/json"),
    ("POST", "", "lat=51.4167&lon=-0.5667", "application/x-www-form-urlencoded"),
    ("POST", "", json.dumps({"plugins": PROFILE["installed_plugins"],
                             "gpu": PROFILE["gpu"]}), "application/json"),
    ("GET", "ip=203.0.113.42&city=Egham", "", ""),
    ("POST", "", "vendor=NVIDIA Corporation&osv=6.8.0&alphaBits=8", "application/x-www-form-urlencoded"),
    ("POST", "", json.dumps({"ua": UA, "os": "Linux"}), "application/json"),
    ("HEAD", "cs=windows-1252", "", ""),
]

CLEAN_TEMPLATES = [
    ("GET", "page=home&cb=873624", "", ""),
    ("POST", "", "evt=click&x=12&y=88", "application/x-www-form-urlencoded"),
    ("POST", "", json.dumps({"article": "cooking-101", "ref": "newsletter"}), "application/json"),
    ("GET", "q=weather+tomorrow", "", ""),
]

# tracker -> transport behaviour; "alternate" produces a mixed fingerprinter
TRACKERS = [
    ("metrics.trackmax.net", "http"),
    ("beacon.fproc.co.uk", "https"),
    ("collect.adsight.io", "alternate"),
    ("stats.pixelsense.com", "https"),
    ("t.quantify.org", "http"),
]

THIRD_SITES = ["portal-alpha.com", "gazette-beta.net", "shop-gamma.co.uk",
               "blog-delta.org", "forum-epsilon.io", "market-zeta.de", "stream-eta.fr"]
FIRST_SITES = ["bank-theta.com", "webmail-iota.net", "intranet-kappa.co.uk"]
BOTH_SITES = ["megastore-lambda.com", "tabloid-mu.co.uk", "wiki-nu.org", "games-xi.io"]
CLEAN_SITES = ["recipes-omicron.com", "travel-pi.net", "docs-rho.org", "sports-sigma.fr"]
TIMEOUT_SITES = ["slowpoke-tau.com", "molasses-upsilon.net"]
IDLE_SITES = ["static-phi.org", "placeholder-chi.net"]

SHARED_ID = "deadbeefcafe1234"
LONE_ID = "fedcba9876543210"
SHORT_ID = "ab12"


class Generator:
    def __init__(self, writer, pipeline):
        self.writer = writer
        self.pipeline = pipeline
        self.seq = 0
        self.captures = 0
        self.clock = T0

    def tick(self):
        self.clock += 0.8
        return self.clock

    def capture(self, site, host, path, method, query, body, content_type, scheme):
        self.seq += 1
        record = CaptureRecord(
            sequence_no=self.seq, page_origin=site, destination_host=host,
            destination_path=path, method=method, scheme=scheme,
            query_bytes=query.encode(), body_bytes=body.encode(),
            content_type=content_type, referer="https://%s/" % site,
            timestamp=self.tick(),
        )
        inspection = self.pipeline.inspect(query=record.query_bytes, body=record.body_bytes)
        self.writer.append(record_to_dict(record, "forwarded", "ok", inspection))
        self.captures += 1
        return inspection

    def fp_capture(self, site, host, template_index, scheme, extra_body=""):
        method, query, body, ctype = FP_TEMPLATES[template_index % len(FP_TEMPLATES)]
        if extra_body:
            body = (body + "&" + extra_body) if body else extra_body
        inspection = self.capture(site, host, "/collect", method, query, body, ctype, scheme)
        assert inspection.is_fingerprinting, (site, host, template_index)

    def clean_capture(self, site, host, template_index, scheme="https"):
        method, query, body, ctype = CLEAN_TEMPLATES[template_index % len(CLEAN_TEMPLATES)]
        inspection = self.capture(site, host, "/asset", method, query, body, ctype, scheme)
        assert not inspection.is_fingerprinting, (site, host, template_index)

    def visit(self, site, status="loaded", body=None):
        started = self.tick()
        self.writer.append({"record_type": "visit", "site": site, "started_at": started})
        before = self.captures
        if body:
            body()
        self.writer.append({
            "record_type": "visit_end", "site": site, "status": status,
            "load_time": 0.6 if status == "loaded" else 20.0,
            "capture_count": self.captures - before,
            "revisited": False, "ended_at": self.tick(),
        })


def tracker_scheme(tracker_index, k):
    name, mode = TRACKERS[tracker_index]
    if mode == "alternate":
        return name, ("http" if k % 2 == 0 else "https")
    return name, mode


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    catalog = load_catalog()
    profile = loads_profile(json.dumps(PROFILE))
    pipeline = DetectorPipeline(catalog, profile)

    writer = CaptureLogWriter(args.out, header_extra={
        "created_at": T0,
        "proxy_mode": "observe",
        "catalog_version": 1,
        "generator": "make_synthetic_log",
    })
    gen = Generator(writer, pipeline)

    for i, site in enumerate(THIRD_SITES):
        def body(i=i, site=site):
            for k in range(12 + (i % 4)):
                tracker, scheme = tracker_scheme((i + k) % len(TRACKERS), k)
                gen.fp_capture(site, tracker, i * 3 + k, scheme)
            for k in range(2 + (i % 2)):
                gen.clean_capture(site, "cdn.staticassets.net", i + k)
        gen.visit(site, body=body)

    for i, site in enumerate(FIRST_SITES):
        def body(i=i, site=site):
            for k in range(7 + i):
                gen.fp_capture(site, "metrics.%s" % site, i * 2 + k, "https")
            gen.clean_capture(site, "cdn.staticassets.net", i)
        gen.visit(site, body=body)

    for i, site in enumerate(BOTH_SITES):
        def body(i=i, site=site):
            for k in range(5):
                tracker, scheme = tracker_scheme((i + 2 * k) % len(TRACKERS), k + 1)
                gen.fp_capture(site, tracker, i * 5 + k, scheme)
            for k in range(3):
                gen.fp_capture(site, "www.%s" % site, i * 5 + 3 + k, "https")
            gen.clean_capture(site, "cdn.staticassets.net", i)
        gen.visit(site, body=body)

    for i, site in enumerate(CLEAN_SITES):
        def body(i=i, site=site):
            for k in range(6 + (i % 3)):
                host = "cdn.staticassets.net" if k % 2 else "img.%s" % site
                gen.clean_capture(site, host, i + k)
        gen.visit(site, body=body)

    gen.visit(TIMEOUT_SITES[0], status="timed_out")

    def molasses_body():
        gen.clean_capture(TIMEOUT_SITES[1], "cdn.staticassets.net", 1)
        gen.clean_capture(TIMEOUT_SITES[1], "img.%s" % TIMEOUT_SITES[1], 2)
    gen.visit(TIMEOUT_SITES[1], status="timed_out", body=molasses_body)

    for site in IDLE_SITES:
        gen.visit(site)

    # shared fingerprint id at two distinct tracker domains, a lone id at
    # one, and an id too short to count
    def sharing_body():
        gen.fp_capture("portal-alpha.com", "metrics.trackmax.net", 0, "http",
                       extra_body="fp=" + SHARED_ID)
        gen.fp_capture("portal-alpha.com", "collect.adsight.io", 1, "http",
                       extra_body="fp=" + LONE_ID)
    gen.visit("portal-alpha.com", body=sharing_body)

    def sharing_body2():
        gen.fp_capture("gazette-beta.net", "stats.pixelsense.com", 4, "https",
                       extra_body="fingerprint=" + SHARED_ID)
        gen.fp_capture("gazette-beta.net", "t.quantify.org", 2, "http",
                       extra_body="fp=" + SHORT_ID)
    gen.visit("gazette-beta.net", body=sharing_body2)

    writer.close()

    sites = (len(THIRD_SITES) + len(FIRST_SITES) + len(BOTH_SITES) +
             len(CLEAN_SITES) + len(TIMEOUT_SITES) + len(IDLE_SITES))
    print("sites=%d captures=%d seq=%d -> %s" % (sites, gen.captures, gen.seq, args.out))
    assert sites >= 20 and gen.captures >= 200, "coverage targets not met"


if __name__ == "__main__":
    main()

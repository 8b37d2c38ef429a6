#!/usr/bin/env python3
"""Brute-force reference checker for capture-log summary statistics.

Recomputes every summary field directly from the raw JSON lines with no
shared code: its own log reading, its own suffix-rule matching, its own
counting. Used to cross-check the package's aggregation; keep this file
free of fpsentry imports.

Usage: stats_oracle.py --log capture.jsonl --rules public_suffix_rules.dat
"""

import argparse
import hashlib
import json
import re
import sys

CORE_ATTRIBUTES = [
    "resolution", "os", "os_version", "user_agent", "browser_name",
    "browser_version", "webgl_renderer", "webgl_vendor", "webgl_version",
    "gpu", "gpu_vendor", "installed_plugins", "language", "geolocation",
    "city", "ip_addresses", "charset",
]

IPV4 = re.compile(r"^\d{1,3}(\.\d{1,3}){3}$")


def load_rules(path):
    exact, wildcard, exception = set(), set(), set()
    version = ""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("//"):
                m = re.search(r"version:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            token = line.split()[0].lower()
            if token.startswith("!"):
                exception.add(token[1:])
            elif token.startswith("*."):
                wildcard.add(token[2:])
            else:
                exact.add(token)
    return version, exact, wildcard, exception


def public_suffix_label_count(labels, exact, wildcard, exception):
    best = 1  # implicit * rule
    for i in range(len(labels)):
        tail = labels[i:]
        name = ".".join(tail)
        if name in exception:
            return len(tail) - 1
        if name in exact:
            best = max(best, len(tail))
        if len(tail) >= 2 and ".".join(tail[1:]) in wildcard:
            best = max(best, len(tail))
    return best


def registrable(host, psl):
    _version, exact, wildcard, exception = psl
    host = host.lower().rstrip(".")
    if not host or ":" in host or IPV4.match(host):
        return None
    labels = host.split(".")
    count = public_suffix_label_count(labels, exact, wildcard, exception)
    if len(labels) <= count:
        return None
    return ".".join(labels[-(count + 1):])


def recipient(host, psl):
    return registrable(host, psl) or host.lower().rstrip(".")


def same_party(origin, dest, psl):
    o = origin.lower().rstrip(".")
    d = dest.lower().rstrip(".")
    ro, rd = registrable(o, psl), registrable(d, psl)
    if ro is None or rd is None:
        return o == d
    return ro == rd


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                break  # torn tail
    if not records or records[0].get("record_type") != "header":
        sys.exit("oracle: log has no header record")
    if records[0].get("log_version") != 1:
        sys.exit("oracle: unsupported log version")
    return records


def compute(records, psl, digest):
    version = psl[0]
    sites = set()
    last_status = {}
    events = []
    id_sightings = {}

    for r in records:
        t = r.get("record_type")
        if t == "visit" or t == "visit_end":
            sites.add(r["site"])
            if t == "visit_end":
                last_status[r["site"]] = r.get("status", "")
        elif t == "capture":
            if r.get("page_origin"):
                sites.add(r["page_origin"])
            dom = recipient(r.get("destination_host", ""), psl)
            for fp in r.get("fp_ids", []):
                if len(fp.get("value", "")) >= 8:
                    id_sightings.setdefault(fp["value"], set()).add(dom)
            if r.get("fingerprinting"):
                events.append(r)

    per_site_recipients = {}
    per_site_party = {}
    per_fp_bytes = {}
    per_fp_schemes = {}
    per_fp_attrs = {}
    per_fp_third_sites = {}
    attr_freq = dict.fromkeys(CORE_ATTRIBUTES, 0)

    for r in events:
        origin = r.get("page_origin", "")
        host = r.get("destination_host", "")
        dom = recipient(host, psl)
        if origin and host:
            first = same_party(origin, host, psl)
        else:
            first = False
        per_site_recipients.setdefault(origin, set()).add(dom)
        per_site_party.setdefault(origin, set()).add("first" if first else "third")
        per_fp_bytes[dom] = per_fp_bytes.get(dom, 0) + int(r.get("payload_size", 0))
        per_fp_schemes.setdefault(dom, set()).add(r.get("scheme", "http"))
        if not first:
            per_fp_third_sites.setdefault(dom, set()).add(origin)
        cores = set()
        for h in r.get("hits", []):
            if h.get("attribute") in attr_freq:
                cores.add(h["attribute"])
        for a in cores:
            attr_freq[a] += 1
        per_fp_attrs.setdefault(dom, set()).update(cores)

    counts = {"exclusively_third": 0, "exclusively_first": 0, "both": 0}
    for site, parties in per_site_party.items():
        if parties == {"third"}:
            counts["exclusively_third"] += 1
        elif parties == {"first"}:
            counts["exclusively_first"] += 1
        else:
            counts["both"] += 1

    transport = {"http_only": 0, "mixed": 0, "https_only": 0}
    for dom, schemes in per_fp_schemes.items():
        if schemes == {"http"}:
            transport["http_only"] += 1
        elif schemes == {"https"}:
            transport["https_only"] += 1
        else:
            transport["mixed"] += 1

    n_sites = len(sites)
    n_fp_sites = len(per_site_party)
    n_fp = len(per_fp_bytes)
    total_bytes = sum(per_fp_bytes.values())

    return {
        "schema_version": 1,
        "log_digest": digest,
        "suffix_rules_version": version,
        "sites_total": n_sites,
        "sites_timed_out": sum(1 for s in last_status.values() if s == "timed_out"),
        "fingerprinting_sites": n_fp_sites,
        "fingerprinting_fraction": (n_fp_sites / n_sites) if n_sites else None,
        "party_counts": counts,
        "party_split": {k: (counts[k] / n_fp_sites if n_fp_sites else None) for k in counts},
        "distinct_fingerprinters": n_fp,
        "avg_recipient_domains_per_fingerprinting_site": (
            sum(len(v) for v in per_site_recipients.values()) / n_fp_sites if n_fp_sites else None),
        "max_recipient_domains_single_site": max(
            [len(v) for v in per_site_recipients.values()] or [0]),
        "total_event_bytes": total_bytes,
        "events_total": len(events),
        "avg_bytes_per_fingerprinter": (total_bytes / n_fp) if n_fp else None,
        "per_fingerprinter_bytes": {d: per_fp_bytes[d] for d in sorted(per_fp_bytes)},
        "attribute_frequency": attr_freq,
        "avg_core_attributes_per_fingerprinter": (
            sum(len(v) for v in per_fp_attrs.values()) / n_fp if n_fp else None),
        "transport_split": transport,
        "fingerprinter_site_reach": {d: len(s) for d, s in sorted(per_fp_third_sites.items())},
        "fp_id_shares": [
            {"identifier": v, "domains": sorted(doms)}
            for v, doms in sorted(id_sightings.items()) if len(doms) >= 2
        ],
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--log", required=True)
    parser.add_argument("--rules", required=True)
    args = parser.parse_args()

    with open(args.log, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    psl = load_rules(args.rules)
    records = read_records(args.log)
    print(json.dumps(compute(records, psl, digest), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()

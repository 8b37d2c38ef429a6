"""Aggregate metrics over a capture log.

Everything here is a pure fold over the log records: prevalence of
fingerprinting across visited sites, the first/third-party split, how
many distinct domains receive data per site, byte volumes, how often
each core attribute is collected, the per-fingerprinter transport
split, and cross-domain sharing of explicit fingerprint identifiers.

A "fingerprinting site" is a visited site with at least one event
attributed to it; a "fingerprinter" is a recipient registrable domain
with at least one event. Undefined ratios (no sites, no fingerprinters)
are reported as null markers, never as zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .capture import file_digest, read_log
from .catalog import CORE_IDS
from .psl import FIRST_PARTY, THIRD_PARTY, SuffixRules, classify_party, load_rules, registrable_domain

STATS_SCHEMA_VERSION = 1

PARTY_MODES = ("exclusively_third", "exclusively_first", "both")
TRANSPORT_MODES = ("http_only", "mixed", "https_only")

MIN_SHARED_ID_LEN = 8

RANK_DIMENSIONS = ("volume_per_fingerprinter", "attribute_frequency", "fingerprinter_site_reach")


@dataclass
class SummaryStats:
    schema_version: int = STATS_SCHEMA_VERSION
    log_digest: str = ""
    suffix_rules_version: str = ""
    sites_total: int = 0
    sites_timed_out: int = 0
    fingerprinting_sites: int = 0
    fingerprinting_fraction: float | None = None
    party_counts: dict = field(default_factory=dict)
    party_split: dict = field(default_factory=dict)
    distinct_fingerprinters: int = 0
    avg_recipient_domains_per_fingerprinting_site: float | None = None
    max_recipient_domains_single_site: int = 0
    total_event_bytes: int = 0
    events_total: int = 0
    avg_bytes_per_fingerprinter: float | None = None
    per_fingerprinter_bytes: dict = field(default_factory=dict)
    attribute_frequency: dict = field(default_factory=dict)
    avg_core_attributes_per_fingerprinter: float | None = None
    transport_split: dict = field(default_factory=dict)
    fingerprinter_site_reach: dict = field(default_factory=dict)
    fp_id_shares: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SummaryStats":
        return cls(**data)


def _recipient_domain(host: str, rules: SuffixRules) -> str:
    return registrable_domain(host, rules) or host.lower().rstrip(".")


def aggregate_records(records, rules: SuffixRules, log_digest: str = "") -> SummaryStats:
    """Fold parsed log records into SummaryStats. Deterministic."""
    sites = set()
    last_status = {}
    events = []
    fp_id_sightings = {}

    for entry in records:
        kind = entry.get("record_type")
        if kind in ("visit", "visit_end"):
            sites.add(entry["site"])
            if kind == "visit_end":
                last_status[entry["site"]] = entry.get("status", "")
        elif kind == "capture":
            origin = entry.get("page_origin", "")
            if origin:
                sites.add(origin)
            dest = _recipient_domain(entry.get("destination_host", ""), rules)
            for fp in entry.get("fp_ids", ()):
                value = fp.get("value", "")
                if len(value) >= MIN_SHARED_ID_LEN:
                    fp_id_sightings.setdefault(value, set()).add(dest)
            if entry.get("fingerprinting"):
                events.append(entry)

    site_recipients = {}
    site_parties = {}
    fingerprinter_bytes = {}
    fingerprinter_schemes = {}
    fingerprinter_attrs = {}
    fingerprinter_third_sites = {}
    attribute_events = {cid: 0 for cid in CORE_IDS}

    for entry in events:
        origin = entry.get("page_origin", "")
        dest_host = entry.get("destination_host", "")
        dest = _recipient_domain(dest_host, rules)
        party = classify_party(origin, dest_host, rules) if origin and dest_host else THIRD_PARTY
        site_recipients.setdefault(origin, set()).add(dest)
        site_parties.setdefault(origin, set()).add(party)
        fingerprinter_bytes[dest] = fingerprinter_bytes.get(dest, 0) + int(entry.get("payload_size", 0))
        fingerprinter_schemes.setdefault(dest, set()).add(entry.get("scheme", "http"))
        if party == THIRD_PARTY:
            fingerprinter_third_sites.setdefault(dest, set()).add(origin)
        core_seen = set()
        for hit in entry.get("hits", ()):
            attr = hit.get("attribute", "")
            if attr in attribute_events:
                core_seen.add(attr)
        for attr in core_seen:
            attribute_events[attr] += 1
        fingerprinter_attrs.setdefault(dest, set()).update(core_seen)

    fp_sites = sorted(site_parties)
    party_counts = {mode: 0 for mode in PARTY_MODES}
    for site in fp_sites:
        parties = site_parties[site]
        if parties == {THIRD_PARTY}:
            party_counts["exclusively_third"] += 1
        elif parties == {FIRST_PARTY}:
            party_counts["exclusively_first"] += 1
        else:
            party_counts["both"] += 1

    transport = {mode: 0 for mode in TRANSPORT_MODES}
    for dest, schemes in fingerprinter_schemes.items():
        if schemes == {"http"}:
            transport["http_only"] += 1
        elif schemes == {"https"}:
            transport["https_only"] += 1
        else:
            transport["mixed"] += 1

    n_sites = len(sites)
    n_fp_sites = len(fp_sites)
    n_fingerprinters = len(fingerprinter_bytes)
    total_event_bytes = sum(fingerprinter_bytes.values())

    stats = SummaryStats(
        log_digest=log_digest,
        suffix_rules_version=rules.version,
        sites_total=n_sites,
        sites_timed_out=sum(1 for s in last_status.values() if s == "timed_out"),
        fingerprinting_sites=n_fp_sites,
        fingerprinting_fraction=(n_fp_sites / n_sites) if n_sites else None,
        party_counts=party_counts,
        party_split={mode: (party_counts[mode] / n_fp_sites if n_fp_sites else None)
                     for mode in PARTY_MODES},
        distinct_fingerprinters=n_fingerprinters,
        avg_recipient_domains_per_fingerprinting_site=(
            sum(len(v) for v in site_recipients.values()) / n_fp_sites if n_fp_sites else None),
        max_recipient_domains_single_site=max(
            (len(v) for v in site_recipients.values()), default=0),
        total_event_bytes=total_event_bytes,
        events_total=len(events),
        avg_bytes_per_fingerprinter=(
            total_event_bytes / n_fingerprinters if n_fingerprinters else None),
        per_fingerprinter_bytes={d: fingerprinter_bytes[d] for d in sorted(fingerprinter_bytes)},
        attribute_frequency=attribute_events,
        avg_core_attributes_per_fingerprinter=(
            sum(len(v) for v in fingerprinter_attrs.values()) / n_fingerprinters
            if n_fingerprinters else None),
        transport_split=transport,
        fingerprinter_site_reach={d: len(s) for d, s in sorted(fingerprinter_third_sites.items())},
        fp_id_shares=[
            {"identifier": value, "domains": sorted(domains)}
            for value, domains in sorted(fp_id_sightings.items())
            if len(domains) >= 2
        ],
    )
    return stats


def aggregate(log_path, rules: SuffixRules | None = None) -> SummaryStats:
    """Compute SummaryStats for a capture log file."""
    if rules is None:
        rules = load_rules()
    return aggregate_records(read_log(log_path), rules, log_digest=file_digest(log_path))


def rank(stats: SummaryStats, dimension: str, n: int):
    """Top-n table for a ranking dimension; ties break lexicographically."""
    if dimension not in RANK_DIMENSIONS:
        raise ValueError("unknown ranking dimension %r" % dimension)
    if n <= 0:
        return []
    if dimension == "volume_per_fingerprinter":
        items = stats.per_fingerprinter_bytes.items()
    elif dimension == "attribute_frequency":
        items = [(a, c) for a, c in stats.attribute_frequency.items() if c > 0]
    else:
        items = stats.fingerprinter_site_reach.items()
    return sorted(items, key=lambda kv: (-kv[1], kv[0]))[:n]


def detect_id_sharing(log_path, rules: SuffixRules | None = None):
    """Identifiers (>= 8 chars, fp/fingerprint-labelled) seen at >= 2 domains."""
    if rules is None:
        rules = load_rules()
    sightings = {}
    for entry in read_log(log_path):
        if entry.get("record_type") != "capture":
            continue
        dest = _recipient_domain(entry.get("destination_host", ""), rules)
        for fp in entry.get("fp_ids", ()):
            value = fp.get("value", "")
            if len(value) >= MIN_SHARED_ID_LEN:
                sightings.setdefault(value, set()).add(dest)
    return [(value, tuple(sorted(domains)))
            for value, domains in sorted(sightings.items())
            if len(domains) >= 2]

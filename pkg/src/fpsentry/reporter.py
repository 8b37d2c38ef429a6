"""Render summary statistics and rankings to tables and plot data.

Output is deterministic byte-for-byte for a given input: fixed column
orders, sorted keys, no wall-clock anywhere. Values in the summary CSV
are JSON-encoded in the value column so a re-parse reconstructs the
stats object exactly, nested fields included. Every emitted file carries
the digest of the source capture log so reports stay traceable.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .analytics import SummaryStats, rank
from .catalog import Catalog

FORMATS = ("csv", "json", "plot")

# Table-1-style category order for the catalog counts table
CATEGORY_ORDER = ("WebGL", "Features", "Media", "Miscellaneous", "InputOutput", "Network")

_BYTES_FIELDS = ("total_event_bytes", "avg_bytes_per_fingerprinter")


def format_bytes(n) -> str:
    """Human units, base-1000, one decimal: 1750 -> 1.8KB."""
    if n is None:
        return ""
    n = float(n)
    if n < 1000:
        return "%dB" % round(n)
    for unit, scale in (("KB", 1e3), ("MB", 1e6), ("GB", 1e9)):
        if n < scale * 1000 or unit == "GB":
            return "%.1f%s" % (n / scale, unit)


@dataclass
class ReportBundle:
    stats: SummaryStats
    volume_table: list = field(default_factory=list)
    attribute_table: list = field(default_factory=list)
    third_party_table: list = field(default_factory=list)
    category_counts: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def build_bundle(stats: SummaryStats, catalog: Catalog | None = None,
                 top_n: int = 10, run_meta: dict | None = None) -> ReportBundle:
    run_meta = dict(run_meta or {})
    config_hash = hashlib.sha256(
        json.dumps(run_meta, sort_keys=True).encode()).hexdigest()[:16]
    counts = catalog.category_counts() if catalog is not None else {}
    return ReportBundle(
        stats=stats,
        volume_table=rank(stats, "volume_per_fingerprinter", top_n),
        attribute_table=rank(stats, "attribute_frequency", top_n),
        third_party_table=rank(stats, "fingerprinter_site_reach", top_n),
        category_counts={c: counts.get(c, 0) for c in CATEGORY_ORDER} if counts else {},
        metadata={
            "log_digest": stats.log_digest,
            "schema_version": stats.schema_version,
            "suffix_rules_version": stats.suffix_rules_version,
            "config_hash": config_hash,
            "run_meta": run_meta,
        },
    )


def _source_line(bundle) -> str:
    return "# source_log: %s" % bundle.metadata.get("log_digest", "")


def _write_summary_csv(bundle, path: Path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_source_line(bundle) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["field", "value", "display"])
        for key, value in sorted(bundle.stats.to_dict().items()):
            display = format_bytes(value) if key in _BYTES_FIELDS else ""
            writer.writerow([key, json.dumps(value, sort_keys=True), display])


def _write_table_csv(bundle, path: Path, table, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_source_line(bundle) + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for key, value in table:
            writer.writerow([key, value])


def _write_plot(bundle, path: Path, table):
    lines = [_source_line(bundle)]
    for key, value in table:
        lines.append("%s %s" % (key, value))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def emit(bundle: ReportBundle, out_dir, formats=FORMATS):
    """Write the bundle under out_dir; returns the paths written."""
    for fmt in formats:
        if fmt not in FORMATS:
            raise ValueError("unknown report format %r" % fmt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = [
        ("top_volume", bundle.volume_table, ("domain", "bytes")),
        ("top_attributes", bundle.attribute_table, ("attribute", "events")),
        ("top_third_party", bundle.third_party_table, ("domain", "sites")),
    ]
    written = []
    if "csv" in formats:
        path = out / "summary.csv"
        _write_summary_csv(bundle, path)
        written.append(path)
        for name, table, columns in tables:
            path = out / ("%s.csv" % name)
            _write_table_csv(bundle, path, table, columns)
            written.append(path)
        if bundle.category_counts:
            path = out / "catalog_categories.csv"
            _write_table_csv(bundle, path, list(bundle.category_counts.items()),
                             ("category", "count"))
            written.append(path)
    if "json" in formats:
        path = out / "report.json"
        payload = {
            "metadata": bundle.metadata,
            "summary": bundle.stats.to_dict(),
            "rankings": {
                "volume_per_fingerprinter": [list(r) for r in bundle.volume_table],
                "attribute_frequency": [list(r) for r in bundle.attribute_table],
                "fingerprinter_site_reach": [list(r) for r in bundle.third_party_table],
            },
            "catalog_categories": bundle.category_counts,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(path)
    if "plot" in formats:
        for name, table, _columns in tables:
            path = out / ("%s.dat" % name)
            _write_plot(bundle, path, table)
            written.append(path)
    return written


def parse_summary_csv(path) -> SummaryStats:
    """Inverse of the summary.csv writer."""
    fields = {}
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
    header, data = rows[0], rows[1:]
    assert header[:2] == ["field", "value"]
    for row in data:
        fields[row[0]] = json.loads(row[1])
    return SummaryStats.from_dict(fields)


def parse_table_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
    return [(key, int(value)) for key, value in rows[1:]]


def parse_report_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

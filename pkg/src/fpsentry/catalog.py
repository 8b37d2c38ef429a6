"""Attribute taxonomy and device profile handling.

The catalog is the full set of fingerprinting attributes we know how to
name, grouped into six categories. Seventeen of them are "core": the
detector can find them automatically in traffic, and their presence is
what flags a request as fingerprinting. The rest are auxiliary labels
that only ever match as payload keys.

The device profile carries the ground-truth values of the browser/host
used for a crawl (resolution, user agent, WebGL strings and so on);
value-bound detectors match payloads against exactly these values.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources

log = logging.getLogger(__name__)

CATEGORIES = ("WebGL", "Features", "Media", "InputOutput", "Network", "Miscellaneous")

# Detector kinds. "profile" fires when the profile's value for the
# attribute appears in a payload, "pattern" on a syntactic pattern
# cross-checked against the profile, "label" on an exact key token.
KIND_PROFILE = "profile"
KIND_PATTERN = "pattern"
KIND_LABEL = "label"
KINDS = (KIND_PROFILE, KIND_PATTERN, KIND_LABEL)

# The 17 automatically detectable attributes and their display names.
CORE_DISPLAY_NAMES = {
    "resolution": "Resolution",
    "os": "OS",
    "os_version": "OS Version",
    "user_agent": "User-Agent",
    "browser_name": "Browser Name",
    "browser_version": "Browser Version",
    "webgl_renderer": "WebGL Renderer",
    "webgl_vendor": "WebGL Vendor",
    "webgl_version": "WebGL Version",
    "gpu": "GPU",
    "gpu_vendor": "GPU Vendor",
    "installed_plugins": "Installed Plugins",
    "language": "Language",
    "geolocation": "Geolocation",
    "city": "City",
    "ip_addresses": "IP Addresses",
    "charset": "Charset",
}

CORE_IDS = tuple(CORE_DISPLAY_NAMES)

RESOLUTION_RE = re.compile(r"^\d+x\d+$")

CATALOG_VERSION = 1


class CatalogError(ValueError):
    """Catalog file is malformed or violates a structural constraint."""


class ProfileError(ValueError):
    """Profile file is unparseable or carries an out-of-range value."""


@dataclass(frozen=True)
class AttributeDescriptor:
    """One catalogued fingerprinting attribute."""

    id: str
    display_name: str
    category: str
    core: bool
    kind: str
    pattern: str | None = None
    label_tokens: tuple[str, ...] = ()

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise CatalogError("unknown category %r for attribute %r" % (self.category, self.id))
        if self.kind not in KINDS:
            raise CatalogError("unknown detector kind %r for attribute %r" % (self.kind, self.id))
        if self.kind == KIND_PATTERN and not self.pattern:
            raise CatalogError("pattern attribute %r has no pattern" % self.id)
        if self.kind == KIND_LABEL and not self.label_tokens:
            raise CatalogError("label attribute %r has no label tokens" % self.id)


class Catalog:
    """Immutable collection of attribute descriptors."""

    def __init__(self, descriptors):
        self.descriptors = tuple(descriptors)
        if not self.descriptors:
            raise CatalogError("no attributes")
        self.by_id = {}
        for d in self.descriptors:
            if d.id in self.by_id:
                raise CatalogError("duplicate attribute id %r" % d.id)
            self.by_id[d.id] = d
        core = tuple(d for d in self.descriptors if d.core)
        if len(core) != 17:
            raise CatalogError("expected 17 core attributes, found %d" % len(core))
        bad = sorted(set(d.id for d in core) ^ set(CORE_IDS))
        if bad:
            raise CatalogError("core attribute set mismatch: %s" % ", ".join(bad))
        self.core = core

    def __len__(self):
        return len(self.descriptors)

    def __iter__(self):
        return iter(self.descriptors)

    def category_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in CATEGORIES}
        for d in self.descriptors:
            counts[d.category] += 1
        return counts

    def label_index(self) -> dict[str, tuple[str, ...]]:
        """Map normalized label token -> ids of label-kind attributes.

        Tokens are lowercased and stripped of non-alphanumerics so
        payload keys like "alphaBits" or "alpha_bits" hit the same
        descriptor. Built lazily, cached; the catalog is immutable.
        """
        index = getattr(self, "_label_index", None)
        if index is None:
            index = {}
            for d in self.descriptors:
                if d.kind != KIND_LABEL:
                    continue
                for token in d.label_tokens:
                    norm = "".join(ch for ch in token.lower() if ch.isalnum())
                    if norm:
                        index.setdefault(norm, []).append(d.id)
            index = {k: tuple(v) for k, v in index.items()}
            self._label_index = index
        return index


def _parse_line(lineno: int, line: str) -> AttributeDescriptor:
    parts = line.split("\t")
    if len(parts) != 5:
        raise CatalogError("line %d: expected 5 tab-separated fields, got %d" % (lineno, len(parts)))
    attr_id, category, coreflag, kind, tail = (p.strip() for p in parts)
    if not attr_id:
        raise CatalogError("line %d: empty attribute id" % lineno)
    if coreflag not in ("core", "aux"):
        raise CatalogError("line %d: third field must be core or aux, got %r" % (lineno, coreflag))
    core = coreflag == "core"
    pattern = None
    tokens: tuple[str, ...] = ()
    if kind == KIND_PATTERN:
        pattern = tail
        try:
            re.compile(pattern)
        except re.error as exc:
            raise CatalogError("line %d: bad pattern %r: %s" % (lineno, pattern, exc)) from exc
    elif tail and tail != "-":
        tokens = tuple(t.strip() for t in tail.split("|") if t.strip())
    if core and attr_id not in CORE_DISPLAY_NAMES:
        raise CatalogError("line %d: %r is not a recognised core attribute" % (lineno, attr_id))
    display = CORE_DISPLAY_NAMES.get(attr_id) or (tokens[0] if tokens else attr_id)
    try:
        return AttributeDescriptor(
            id=attr_id, display_name=display, category=category,
            core=core, kind=kind, pattern=pattern, label_tokens=tokens,
        )
    except CatalogError as exc:
        raise CatalogError("line %d: %s" % (lineno, exc)) from exc


def loads_catalog(text: str) -> Catalog:
    """Parse catalog file content. See load_catalog for the format."""
    descriptors = []
    version_seen = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@version"):
            if version_seen:
                raise CatalogError("line %d: repeated version header" % lineno)
            version_seen = True
            try:
                version = int(line.split(None, 1)[1])
            except (IndexError, ValueError):
                raise CatalogError("line %d: malformed version header %r" % (lineno, line)) from None
            if version != CATALOG_VERSION:
                raise CatalogError("unsupported catalog version %d" % version)
            continue
        if not version_seen:
            raise CatalogError("line %d: missing @version header before first record" % lineno)
        descriptors.append(_parse_line(lineno, line))
    return Catalog(descriptors)


def load_catalog(source=None) -> Catalog:
    """Load a catalog file, or the bundled default when source is None.

    Format: UTF-8 text. First non-comment line is "@version 1". Then one
    record per line, five tab-separated fields:

        id<TAB>category<TAB>core|aux<TAB>kind<TAB>pattern-or-labels

    kind is profile, pattern or label. The last field holds the regex for
    pattern rows, or |-separated label tokens otherwise ("-" for none).
    Lines starting with # are comments.
    """
    if source is None:
        text = resources.files("fpsentry.data").joinpath("default_catalog.tsv").read_text("utf-8")
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    return loads_catalog(text)


def serialize_catalog(catalog: Catalog) -> str:
    """Render a catalog back to file format (inverse of loads_catalog)."""
    lines = ["@version %d" % CATALOG_VERSION]
    for d in catalog:
        if d.kind == KIND_PATTERN:
            tail = d.pattern
        elif d.label_tokens:
            tail = "|".join(d.label_tokens)
        else:
            tail = "-"
        lines.append("\t".join([d.id, d.category, "core" if d.core else "aux", d.kind, tail]))
    return "\n".join(lines) + "\n"


ABSENT = None  # explicit absent marker in profile files is JSON null


@dataclass
class DeviceProfile:
    """Ground-truth attribute values of the crawling browser/host.

    values maps attribute id to a string, a tuple of strings (plugins,
    IP addresses) or a (lat, lon) float pair for geolocation. Core ids
    with no usable value are listed in absent; their value-bound
    detectors are disabled.
    """

    values: dict = field(default_factory=dict)
    captured_at: str | None = None
    absent: frozenset = frozenset()
    warnings: tuple = ()

    def get(self, attr_id):
        return self.values.get(attr_id)

    def resolution_parts(self):
        """(width, height) strings, or None when resolution is absent."""
        res = self.values.get("resolution")
        if not res:
            return None
        w, _, h = res.partition("x")
        return w, h


def _parse_geolocation(value):
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        raise ProfileError("geolocation must be a pair or a 'lat, lon' string, got %r" % (value,))
    if len(parts) != 2:
        raise ProfileError("geolocation must have exactly two coordinates, got %r" % (value,))
    try:
        lat, lon = float(parts[0]), float(parts[1])
    except (TypeError, ValueError):
        raise ProfileError("geolocation coordinates must be numbers, got %r" % (value,)) from None
    if not -90.0 <= lat <= 90.0:
        raise ProfileError("geolocation latitude %s out of range [-90, 90]" % lat)
    if not -180.0 <= lon <= 180.0:
        raise ProfileError("geolocation longitude %s out of range [-180, 180]" % lon)
    return (lat, lon)


def loads_profile(text: str) -> DeviceProfile:
    """Parse profile file content. See load_profile for the format."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError("unparseable profile file: %s" % exc) from exc
    if not isinstance(data, dict):
        raise ProfileError("profile file must hold a JSON object")
    captured_at = data.pop("captured_at", None)
    values = {}
    warnings = []
    for key, value in data.items():
        if value is None or value == "" or value == []:
            continue  # explicit absent marker
        if key == "geolocation":
            values[key] = _parse_geolocation(value)
        elif key == "resolution":
            if not isinstance(value, str) or not RESOLUTION_RE.match(value):
                raise ProfileError("resolution %r does not match <digits>x<digits>" % (value,))
            values[key] = value
        elif isinstance(value, list):
            values[key] = tuple(str(v) for v in value)
        elif isinstance(value, (str, int, float)):
            values[key] = str(value)
        else:
            raise ProfileError("unsupported value type for %r: %r" % (key, value))
    absent = frozenset(cid for cid in CORE_IDS if cid not in values)
    for cid in sorted(absent):
        msg = "profile has no value for core attribute %r; its detector is disabled" % cid
        warnings.append(msg)
        log.warning(msg)
    return DeviceProfile(values=values, captured_at=captured_at,
                         absent=absent, warnings=tuple(warnings))


def load_profile(source) -> DeviceProfile:
    """Load a device profile from a JSON file.

    The file holds one object keyed by attribute id. Values are strings,
    except installed_plugins / ip_addresses (arrays of strings) and
    geolocation (a [lat, lon] pair, or a "lat, lon" string). JSON null,
    "" and [] mark an attribute as explicitly absent. An optional
    captured_at field records when the probe ran. Keys beyond the core
    set are kept and usable by value-bound aux matching.
    """
    with open(source, encoding="utf-8") as fh:
        return loads_profile(fh.read())

"""Attribute hit detection over decoded payload views.

Detection is two-staged. scan_payload is deliberately loose for pattern
attributes (a profile screen width may match inside a longer number) and
strict for value-bound ones; filter_false_positives then removes pattern
matches embedded in longer tokens or filenames. The verdict criterion is
downstream: a message counts as fingerprinting when at least one core
attribute survives the filter.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .catalog import Catalog, DeviceProfile, CORE_DISPLAY_NAMES, KIND_LABEL, KIND_PATTERN, KIND_PROFILE
from .payload import Layer, PayloadView, SOURCE_BODY, SOURCE_URL_QUERY, decode_layers

# Matches embedded inside a longer token are false positives unless both
# neighbours are non-alphanumeric, and a filename extension right after
# the match disqualifies it even when bounded.
_EXT_RE = re.compile(
    r"\.(?:jpe?g|png|gif|webp|bmp|svg|ico|avif|css|js|mjs|map|json|xml|html?|php"
    r"|woff2?|ttf|otf|eot|mp[34]|webm|wav|ogg|pdf|zip|gz|br|bin)(?![A-Za-z0-9])",
    re.IGNORECASE,
)

_COORD_RE = re.compile(r"-?\d{1,3}\.\d+")

FP_ID_LABELS = ("fp", "fingerprint")

MIN_VALUE_LEN = 4   # shorter profile values only match next to a known label key
MIN_SIDE_LEN = 3    # shortest width/height substring worth scanning for


@dataclass(frozen=True)
class AttributeHit:
    attribute_id: str
    matched_text: str
    layer_index: int
    byte_offset: int
    detector_kind: str

    @property
    def core(self) -> bool:
        return self.attribute_id in CORE_DISPLAY_NAMES


@dataclass(frozen=True)
class FingerprintIdHit:
    """An identifier transmitted under an explicit fp/fingerprint key."""

    label: str
    value: str
    layer_index: int


@dataclass(frozen=True)
class FingerprintingEvent:
    record: object
    hits: tuple[AttributeHit, ...]
    fp_ids: tuple[FingerprintIdHit, ...] = ()

    @property
    def core_attribute_ids(self) -> tuple[str, ...]:
        seen = []
        for h in self.hits:
            if h.core and h.attribute_id not in seen:
                seen.append(h.attribute_id)
        return tuple(seen)


def _norm(token: str) -> str:
    return "".join(ch for ch in token.lower() if ch.isalnum())


def _last_component(key: str) -> str:
    return key.rsplit(".", 1)[-1]


def _bounded(text: str, start: int, end: int) -> bool:
    left_ok = start == 0 or not text[start - 1].isalnum()
    right_ok = end >= len(text) or not text[end].isalnum()
    return left_ok and right_ok


def _iter_pair_offsets(layer: Layer):
    """Yield (key, value, key_offset, value_offset) for a pairs layer.

    Offsets index into the layer's rendered text, which is one key=value
    per line; values may themselves contain newlines, so offsets are
    accumulated rather than recovered by splitting.
    """
    offset = 0
    for key, value in layer.pairs:
        key_off = offset
        val_off = offset + len(key) + 1
        yield key, value, key_off, val_off
        offset = val_off + len(value) + 1


def _alnum_ratio(text: str) -> float:
    if not text:
        return 0.0
    return sum(1 for ch in text if ch.isalnum()) / len(text)


class _HitSet:
    """Dedup per (attribute, layer, offset); longest match wins."""

    def __init__(self):
        self._hits = {}

    def add(self, attribute_id, matched_text, layer_index, byte_offset, kind):
        key = (attribute_id, layer_index, byte_offset)
        current = self._hits.get(key)
        if current is None or len(matched_text) > len(current.matched_text):
            self._hits[key] = AttributeHit(attribute_id, matched_text, layer_index, byte_offset, kind)

    def sorted(self):
        return sorted(self._hits.values(),
                      key=lambda h: (h.layer_index, h.byte_offset, h.attribute_id))


def _scan_resolution(hits, descriptor, layer_index, text, profile):
    pattern = re.compile(descriptor.pattern, re.IGNORECASE)
    res = profile.get("resolution")
    for m in pattern.finditer(text):
        if res is None or m.group().lower() == res.lower():
            hits.add("resolution", m.group(), layer_index, m.start(), KIND_PATTERN)
    if res is None:
        return
    # Bare width/height occurrences are candidates too; the filter throws
    # out the ones embedded in longer numbers or filenames.
    parts = profile.resolution_parts()
    for token in parts:
        if len(token) < MIN_SIDE_LEN:
            continue
        for m in re.finditer(re.escape(token), text):
            hits.add("resolution", m.group(), layer_index, m.start(), KIND_PATTERN)


def _scan_geolocation(hits, layer_index, text, profile):
    coords = profile.get("geolocation")
    if coords is None:
        return
    lat2, lon2 = round(coords[0], 2), round(coords[1], 2)
    lat_matches, lon_matches = [], []
    for m in _COORD_RE.finditer(text):
        if not _bounded(text, m.start(), m.end()):
            continue
        try:
            rounded = round(float(m.group()), 2)
        except ValueError:
            continue
        if rounded == lat2:
            lat_matches.append(m)
        elif rounded == lon2:
            lon_matches.append(m)
    if lat_matches and lon_matches:
        anchor = min(lat_matches + lon_matches, key=lambda m: m.start())
        hits.add("geolocation", anchor.group(), layer_index, anchor.start(), KIND_PATTERN)


def scan_payload(view: PayloadView, catalog: Catalog, profile: DeviceProfile):
    """Find attribute occurrences in every decoded layer.

    Value-bound attributes match their profile value case-insensitively
    with non-alphanumeric boundaries; values shorter than MIN_VALUE_LEN
    additionally require the enclosing key to be one of the attribute's
    known label tokens. Pattern attributes (resolution, geolocation) are
    cross-checked against the profile. Auxiliary attributes match by key
    token in structured layers. Hits are deduplicated per (attribute,
    layer, offset) and sorted; core and aux hits are reported alike.
    """
    hits = _HitSet()
    label_index = catalog.label_index()
    profile_descriptors = [d for d in catalog.core if d.kind == KIND_PROFILE]
    short_value_tokens = {
        d.id: {_norm(t) for t in d.label_tokens} for d in profile_descriptors
    }
    resolution = catalog.by_id.get("resolution")

    for layer_index, layer in enumerate(view.layers):
        text = layer.text
        pair_offsets = list(_iter_pair_offsets(layer)) if layer.pairs else []

        for d in profile_descriptors:
            value = profile.get(d.id)
            if value is None:
                continue
            candidates = value if isinstance(value, tuple) else (value,)
            for cand in candidates:
                if not cand:
                    continue
                if len(cand) >= MIN_VALUE_LEN:
                    for m in re.finditer(re.escape(cand), text, re.IGNORECASE):
                        if _bounded(text, m.start(), m.end()):
                            hits.add(d.id, m.group(), layer_index, m.start(), KIND_PROFILE)
                else:
                    wanted = short_value_tokens[d.id]
                    for key, val, _koff, voff in pair_offsets:
                        if val.lower() == cand.lower() and _norm(_last_component(key)) in wanted:
                            hits.add(d.id, val, layer_index, voff, KIND_PROFILE)

        if resolution is not None:
            _scan_resolution(hits, resolution, layer_index, text, profile)
        _scan_geolocation(hits, layer_index, text, profile)

        for key, _val, koff, _voff in pair_offsets:
            for attr_id in label_index.get(_norm(_last_component(key)), ()):
                hits.add(attr_id, key, layer_index, koff, KIND_LABEL)

    return hits.sorted()


def filter_false_positives(hits, view: PayloadView):
    """Drop pattern hits embedded in longer tokens or filename stems.

    A pattern hit survives only when both neighbours are non-alphanumeric
    and the text right after it is not a file-extension suffix. Output is
    always a subset of the input.
    """
    kept = []
    for h in hits:
        if h.detector_kind == KIND_PATTERN:
            text = view.layers[h.layer_index].text
            start, end = h.byte_offset, h.byte_offset + len(h.matched_text)
            if not _bounded(text, start, end):
                continue
            if _EXT_RE.match(text, end):
                continue
        kept.append(h)
    return kept


def detect_fp_id(view: PayloadView):
    """Find identifiers sent under a key named exactly fp or fingerprint."""
    found = []
    for layer_index, layer in enumerate(view.layers):
        for key, value in layer.pairs:
            token = _last_component(key).lower()
            if token in FP_ID_LABELS and value and _alnum_ratio(value) >= 0.8:
                found.append(FingerprintIdHit(label=token, value=value, layer_index=layer_index))
    return found


def classify_message(record, hits, fp_ids=()):
    """Return a FingerprintingEvent iff at least one core hit is present.

    hits must already be filtered. The event keeps every hit, core and
    aux, plus any fp-id hits.
    """
    if any(h.core for h in hits):
        return FingerprintingEvent(record=record, hits=tuple(hits), fp_ids=tuple(fp_ids))
    return None


@dataclass(frozen=True)
class PartInspection:
    source_part: str
    view: PayloadView
    hits: tuple[AttributeHit, ...]
    fp_ids: tuple[FingerprintIdHit, ...]


@dataclass(frozen=True)
class Inspection:
    parts: tuple[PartInspection, ...] = ()

    @property
    def all_hits(self):
        return tuple(h for p in self.parts for h in p.hits)

    @property
    def fp_ids(self):
        return tuple(f for p in self.parts for f in p.fp_ids)

    @property
    def core_attribute_ids(self):
        seen = []
        for p in self.parts:
            for h in p.hits:
                if h.core and h.attribute_id not in seen:
                    seen.append(h.attribute_id)
        return tuple(seen)

    @property
    def is_fingerprinting(self) -> bool:
        return any(h.core for p in self.parts for h in p.hits)


class DetectorPipeline:
    """Catalog + profile bound together for per-request inspection.

    Stateless per call, so one pipeline is safely shared across proxy
    worker threads.
    """

    def __init__(self, catalog: Catalog, profile: DeviceProfile):
        self.catalog = catalog
        self.profile = profile

    def inspect_part(self, raw: bytes, source_part: str) -> PartInspection:
        view = decode_layers(raw, source_part)
        hits = filter_false_positives(scan_payload(view, self.catalog, self.profile), view)
        return PartInspection(source_part=source_part, view=view,
                              hits=tuple(hits), fp_ids=tuple(detect_fp_id(view)))

    def inspect(self, query: bytes = b"", body: bytes = b"") -> Inspection:
        parts = []
        if query:
            parts.append(self.inspect_part(query, SOURCE_URL_QUERY))
        if body:
            parts.append(self.inspect_part(body, SOURCE_BODY))
        return Inspection(parts=tuple(parts))

    def classify(self, record, inspection: Inspection):
        return classify_message(record, inspection.all_hits, inspection.fp_ids)

"""Registrable-domain computation and first/third-party classification.

Party classification runs at the registrable-domain granularity (public
suffix plus one label), so cdn.example.co.uk and shop.example.co.uk are
the same party. The suffix rules ship as a bundled, versioned data file
in the well-known list format: one rule per line, "*." wildcards, "!"
exceptions, "//" comments. Unknown TLDs fall back to the implicit "*"
rule, which makes single-suffix test domains behave sensibly.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources

log = logging.getLogger(__name__)

FIRST_PARTY = "first_party"
THIRD_PARTY = "third_party"

_IPV4_RE = re.compile(r"^\d{1,3}(\.\d{1,3}){3}$")


@dataclass(frozen=True)
class SuffixRules:
    version: str
    rules: tuple  # of (labels tuple, is_exception)

    def __len__(self):
        return len(self.rules)


def loads_rules(text: str) -> SuffixRules:
    version = ""
    rules = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("//"):
            m = re.search(r"version:\s*(\S+)", line)
            if m:
                version = m.group(1)
            continue
        token = line.split()[0].lower()
        is_exception = token.startswith("!")
        if is_exception:
            token = token[1:]
        labels = tuple(token.split("."))
        if not all(labels):
            continue  # malformed rule, skip
        rules.append((labels, is_exception))
    return SuffixRules(version=version, rules=tuple(rules))


def load_rules(source=None) -> SuffixRules:
    """Load suffix rules from a file, or the bundled table when None."""
    if source is None:
        text = resources.files("fpsentry.data").joinpath("public_suffix_rules.dat").read_text("utf-8")
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    return loads_rules(text)


def _rule_matches(rule_labels, host_labels) -> bool:
    if len(rule_labels) > len(host_labels):
        return False
    for rule_label, host_label in zip(reversed(rule_labels), reversed(host_labels)):
        if rule_label != "*" and rule_label != host_label:
            return False
    return True


def is_ip_literal(host: str) -> bool:
    return ":" in host or bool(_IPV4_RE.match(host))


def public_suffix(host: str, rules: SuffixRules):
    """Longest matching public suffix of host, or None for IP literals."""
    host = host.lower().rstrip(".")
    if not host or is_ip_literal(host):
        return None
    labels = host.split(".")
    prevailing = None  # (label_count_of_suffix, is_exception)
    for rule_labels, is_exception in rules.rules:
        if not _rule_matches(rule_labels, labels):
            continue
        if is_exception:
            # exception rules win outright; suffix is the rule minus its
            # leftmost label
            return ".".join(labels[len(labels) - (len(rule_labels) - 1):])
        if prevailing is None or len(rule_labels) > prevailing:
            prevailing = len(rule_labels)
    count = prevailing if prevailing is not None else 1  # implicit "*"
    return ".".join(labels[-count:])


def registrable_domain(host: str, rules: SuffixRules):
    """Public suffix plus one label, or None when host has none.

    None comes back for IP literals and for hosts that are themselves a
    bare public suffix.
    """
    host = host.lower().rstrip(".")
    suffix = public_suffix(host, rules)
    if suffix is None:
        return None
    suffix_count = suffix.count(".") + 1
    labels = host.split(".")
    if len(labels) <= suffix_count:
        return None
    return ".".join(labels[-(suffix_count + 1):])


def classify_party(page_origin: str, destination: str, rules: SuffixRules) -> str:
    """FIRST_PARTY iff both hostnames share a registrable domain.

    Hosts without a registrable domain (IP literals, bare suffixes) are
    third-party unless the hostnames are exactly equal; those cases are
    logged since the classification is weaker.
    """
    if not page_origin or not destination:
        raise ValueError("hostnames must be non-empty")
    origin = page_origin.lower().rstrip(".")
    dest = destination.lower().rstrip(".")
    origin_rd = registrable_domain(origin, rules)
    dest_rd = registrable_domain(dest, rules)
    if origin_rd is None or dest_rd is None:
        log.debug("no registrable domain for %r / %r; falling back to exact host equality",
                  page_origin, destination)
        return FIRST_PARTY if origin == dest else THIRD_PARTY
    return FIRST_PARTY if origin_rd == dest_rd else THIRD_PARTY

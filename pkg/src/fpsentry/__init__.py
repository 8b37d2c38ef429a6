"""Detect browser-fingerprint exfiltration in intercepted web traffic.

The package bundles an intercepting HTTP(S) proxy, a crawl orchestrator
driving a WebDriver-compatible browser through that proxy, a payload
detector that matches known device-profile values in transmitted data,
and analytics/reporting over the resulting capture logs.
"""

__version__ = "0.1.0"

from .catalog import AttributeDescriptor, Catalog, DeviceProfile, load_catalog, load_profile
from .detector import AttributeHit, FingerprintIdHit, FingerprintingEvent, DetectorPipeline

__all__ = [
    "AttributeDescriptor",
    "Catalog",
    "DeviceProfile",
    "load_catalog",
    "load_profile",
    "AttributeHit",
    "FingerprintIdHit",
    "FingerprintingEvent",
    "DetectorPipeline",
]

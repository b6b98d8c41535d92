"""Archiving onion services whose addresses shift over time.

The pieces, bottom up: :mod:`core` types, the :mod:`canonicalizer` that
groups a site's successive onion addresses, its HTTP :mod:`service`, list
:mod:`ingest`, the :mod:`crawler`, :mod:`warc` storage and shift-aware
:mod:`replay`. :mod:`sim` runs all of it against a local stand-in network.
"""
from .canonicalizer import Canonicalizer, Collision, Known, NewSite, Observation, Shift
from .core import CanonicalUri, OnionAddress, Timestamp14, canonicalize_uri, validate_onion_address

__version__ = "0.1.0"

__all__ = [
    "Canonicalizer", "Collision", "Known", "NewSite", "Observation", "Shift",
    "CanonicalUri", "OnionAddress", "Timestamp14", "canonicalize_uri", "validate_onion_address",
    "__version__",
]

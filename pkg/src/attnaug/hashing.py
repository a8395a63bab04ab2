"""Stable hashing for seeds and artifact fingerprints.

Python's builtin hash() is salted per process, so every derived seed and
every cache key in this package goes through SHA-256 instead.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

_SEP = b"\x1f"  # unit separator: keeps ("ab","c") distinct from ("a","bc")


def stable_digest(*parts: str | int | bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode("utf-8"))
        h.update(_SEP)
    return h.digest()


def derive_seed(*parts: str | int | bytes) -> int:
    """Deterministic 63-bit seed from any mix of strings and integers."""
    return int.from_bytes(stable_digest(*parts)[:8], "big") >> 1


def hash_json(obj) -> str:
    """Hex digest of an object's canonical JSON form."""
    data = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def hash_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

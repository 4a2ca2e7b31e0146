"""Deterministic pseudo-image payloads for simulated generators.

A simulated image is a canonical JSON blob encoding (backend id, prompt
hash, size) plus the realized quality of that particular render.  Quality
jitter is derived from a SHA-256 of the generation key, never from a shared
RNG stream, so any process configured with the same generator profile
produces byte-identical payloads.  This format is documented in the README
as part of the world-file ecosystem: out-of-process stub servers reproduce
it to stay interchangeable with the in-process transport.
"""

from __future__ import annotations

import hashlib
import json
from statistics import NormalDist

_KIND = "pseudo-image"
_NORMAL = NormalDist()


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def unit_interval_hash(key: str) -> float:
    """Deterministic uniform draw in (0, 1) from an arbitrary string key."""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    u = (int.from_bytes(digest[:8], "big") + 0.5) / 2.0**64
    return u


def gaussian_jitter(key: str, sd: float) -> float:
    """Zero-mean gaussian with standard deviation ``sd``, keyed by string."""
    if sd <= 0:
        return 0.0
    return sd * _NORMAL.inv_cdf(unit_interval_hash(key))


def realized_quality(base_quality: float, noise_sd: float, key: str) -> float:
    return min(1.0, max(0.0, base_quality + gaussian_jitter(key, noise_sd)))


def encode(backend: str, prompt: str, width: int, height: int, quality: float) -> bytes:
    payload = {
        "kind": _KIND,
        "backend": backend,
        "prompt_sha256": prompt_digest(prompt),
        "width": width,
        "height": height,
        "quality": quality,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode(data: bytes) -> dict | None:
    """Parse a pseudo-image payload; None if the bytes are something else."""
    if not data.startswith(b"{"):
        return None
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if isinstance(payload, dict) and payload.get("kind") == _KIND:
        return payload
    return None

"""Multi-scale, multi-aspect-ratio size buckets and closest-size adaptation.

Every generated image is requested at a bucket drawn per prompt; backends
that cannot produce that exact size get the nearest size they do support.
All functions here are pure.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import NoValidBucket

DEFAULT_PATCH_MULTIPLE = 8

# The source work defers its bucket table to an external model config; this
# list covers the displayed landscape/portrait/square shapes.
DEFAULT_RATIOS: tuple[Fraction, ...] = (
    Fraction(1, 1),
    Fraction(4, 3),
    Fraction(3, 4),
    Fraction(16, 9),
    Fraction(9, 16),
    Fraction(2, 1),
    Fraction(1, 2),
)


@dataclass(frozen=True, order=True)
class BucketSpec:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"bucket sides must be positive, got {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def ratio(self) -> float:
        return self.width / self.height

    def as_dict(self) -> dict:
        return {"w": self.width, "h": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "BucketSpec":
        return cls(int(d["w"]), int(d["h"]))

    @classmethod
    def parse(cls, text: str) -> "BucketSpec":
        """Parse a "WxH" config string, e.g. "512x512"."""
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except (ValueError, TypeError) as exc:
            raise ValueError(f"bucket string must look like '512x512', got {text!r}") from exc

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"


def _round_to_multiple(value: float, multiple: int) -> int:
    return int(round(value / multiple)) * multiple


def build_buckets(
    base_resolution: int,
    ratios: Sequence[Fraction | float] | None = None,
    patch_multiple: int = DEFAULT_PATCH_MULTIPLE,
) -> list[BucketSpec]:
    """Construct one bucket per aspect ratio around a base resolution.

    For ratio r the ideal bucket is (base*sqrt(r), base/sqrt(r)) — the size
    with w/h = r and area base^2 — and each side is rounded to the nearest
    patch multiple.  The result is deduplicated and sorted by ratio.
    """
    if base_resolution < 64:
        raise ValueError(f"base_resolution must be >= 64, got {base_resolution}")
    if ratios is None:
        ratios = DEFAULT_RATIOS
    if not ratios:
        raise ValueError("ratios must be non-empty")

    out: list[BucketSpec] = []
    seen: set[BucketSpec] = set()
    for ratio in ratios:
        r = float(ratio)
        if r <= 0:
            raise ValueError(f"ratios must be positive, got {ratio}")
        ideal_w = base_resolution * math.sqrt(r)
        ideal_h = base_resolution / math.sqrt(r)
        w = _round_to_multiple(ideal_w, patch_multiple)
        h = _round_to_multiple(ideal_h, patch_multiple)
        if w == 0 or h == 0:
            raise NoValidBucket(
                f"ratio {ratio} unreachable at base {base_resolution} with patch multiple {patch_multiple}"
            )
        bucket = BucketSpec(w, h)
        if bucket not in seen:
            seen.add(bucket)
            out.append(bucket)
    out.sort(key=lambda b: (b.ratio, b.width))
    return out


def sample_bucket(buckets: Sequence[BucketSpec], rng: random.Random) -> BucketSpec:
    """Uniform draw; deterministic given the rng state."""
    if not buckets:
        raise ValueError("bucket list is empty")
    return buckets[rng.randrange(len(buckets))]


def _aspect_distance(a: BucketSpec, b: BucketSpec) -> float:
    return abs(math.log(a.ratio / b.ratio))


def _area_distance(a: BucketSpec, b: BucketSpec) -> float:
    return abs(math.log(a.area / b.area))


def closest_supported(requested: BucketSpec, supported: Sequence[BucketSpec]) -> BucketSpec:
    """Pick the supported size nearest the request.

    Primary key: aspect mismatch |ln(r_req / r_sup)|.  Secondary key: area
    mismatch |ln(A_req / A_sup)|.  Final tie break: smaller area.  Log-space
    keys make the choice symmetric under reciprocal ratios.  Idempotent:
    an already-supported size maps to itself (all keys zero).
    """
    if not supported:
        raise ValueError("supported size set is empty")
    return min(
        supported,
        key=lambda s: (_aspect_distance(requested, s), _area_distance(requested, s), s.area),
    )


@dataclass(frozen=True)
class SizeRange:
    """Range-form supported sizes: sides within [min_side, max_side] at the given ratios."""

    min_side: int
    max_side: int
    allowed_ratios: tuple[float, ...]

    def candidates(self, requested: BucketSpec, patch_multiple: int = DEFAULT_PATCH_MULTIPLE) -> list[BucketSpec]:
        """Materialize one concrete size per allowed ratio, matching the
        requested area as closely as the range allows."""
        area = requested.area
        out = []
        for r in self.allowed_ratios:
            w = math.sqrt(area * r)
            h = math.sqrt(area / r)
            # Clamp the longer side first so the ratio is preserved when possible.
            scale = 1.0
            for side in (w, h):
                if side > self.max_side:
                    scale = min(scale, self.max_side / side)
            for side in (w, h):
                if side * scale < self.min_side:
                    scale = max(scale, self.min_side / side)
            w = min(max(w * scale, self.min_side), self.max_side)
            h = min(max(h * scale, self.min_side), self.max_side)
            w = max(_round_to_multiple(w, patch_multiple), patch_multiple)
            h = max(_round_to_multiple(h, patch_multiple), patch_multiple)
            out.append(BucketSpec(w, h))
        return out


def adapt_to_backend(requested: BucketSpec, supported) -> BucketSpec:
    """Adapt a requested bucket to what a backend can produce.

    ``supported`` is either an explicit collection of BucketSpec or a
    SizeRange.  Total for any non-empty supported set.
    """
    if isinstance(supported, SizeRange):
        return closest_supported(requested, supported.candidates(requested))
    return closest_supported(requested, list(supported))

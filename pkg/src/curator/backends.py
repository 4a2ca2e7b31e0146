"""Uniform client layer over advanced-model generator APIs.

One descriptor per backend; the service wraps every call with budget
reservation, token-bucket rate limiting, retry with exponential backoff,
content-addressed storage of the returned bytes, and exact cost accounting.

Wire protocol (live backends), HTTP+JSON:

    POST <endpoint>/generate {"prompt", "width", "height"}
        -> 200 {"image_b64": ...} | 429 (retry, Retry-After honored) | 4xx (fatal)

Endpoints of the form ``in-process:<name>`` resolve to local callables
(simulated generators) instead of HTTP; both paths share every other piece
of machinery, so a run can switch transports without behavior drift.
"""

from __future__ import annotations

import base64
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Sequence

import requests

from . import pseudo
from .buckets import BucketSpec, SizeRange, adapt_to_backend
from .clock import Clock, SystemClock
from .errors import AllBackendsFailed, BackendExhausted, BudgetExceeded, UnsupportedSize
from .ledger import CostLedger
from .ratelimit import TokenBucket
from .store import ImageHandle, ImageStore

logger = logging.getLogger(__name__)

IN_PROCESS_PREFIX = "in-process:"

MAX_ATTEMPTS = 5
BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0

# (prompt, width, height) -> image bytes
InProcessGenerator = Callable[[str, int, int], bytes]


class TransientBackendFailure(Exception):
    """Retryable failure (connection error, 5xx, 429)."""

    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class FatalBackendFailure(Exception):
    """Non-retryable 4xx response."""


@dataclass
class BackendDescriptor:
    id: str
    cost_per_call: Decimal
    qps_limit: float
    supported_sizes: Sequence[BucketSpec] | SizeRange
    endpoint: str
    auth_token: str | None = None

    def __post_init__(self):
        if self.qps_limit <= 0:
            raise ValueError(f"{self.id}: qps_limit must be positive")
        if not isinstance(self.supported_sizes, SizeRange) and not self.supported_sizes:
            raise ValueError(f"{self.id}: supported_sizes must be non-empty")
        if self.cost_per_call < 0:
            raise ValueError(f"{self.id}: cost_per_call must be non-negative")

    @property
    def in_process(self) -> bool:
        return self.endpoint.startswith(IN_PROCESS_PREFIX)

    @property
    def profile_name(self) -> str:
        return self.endpoint[len(IN_PROCESS_PREFIX):]

    def supports(self, size: BucketSpec) -> bool:
        if isinstance(self.supported_sizes, SizeRange):
            rng = self.supported_sizes
            sides_ok = all(rng.min_side <= s <= rng.max_side for s in (size.width, size.height))
            ratio_ok = any(abs(size.ratio - r) < 1e-9 * max(1.0, r) for r in rng.allowed_ratios)
            return sides_ok and ratio_ok
        return size in set(self.supported_sizes)

    @classmethod
    def from_dict(cls, d: dict) -> "BackendDescriptor":
        sizes = d["supported_sizes"]
        if isinstance(sizes, dict):
            supported: Sequence[BucketSpec] | SizeRange = SizeRange(
                int(sizes["min_side"]), int(sizes["max_side"]),
                tuple(float(r) for r in sizes["allowed_ratios"]),
            )
        else:
            supported = [
                BucketSpec.parse(s) if isinstance(s, str) else BucketSpec.from_dict(s)
                for s in sizes
            ]
        return cls(
            id=str(d["id"]),
            cost_per_call=Decimal(str(d.get("cost_per_call", "0"))),
            qps_limit=float(d.get("qps_limit", 10.0)),
            supported_sizes=supported,
            endpoint=str(d["endpoint"]),
            auth_token=d.get("auth_token"),
        )


@dataclass
class GenerationFailure:
    backend: str
    error: Exception


class GeneratorService:
    """Shared entry point for every image generation in a run."""

    def __init__(
        self,
        descriptors: Sequence[BackendDescriptor],
        store: ImageStore,
        ledger: CostLedger,
        clock: Clock | None = None,
        in_process: dict[str, InProcessGenerator] | None = None,
        session: requests.Session | None = None,
        burst: float = 1.0,
        request_timeout: float = 30.0,
    ):
        if not descriptors:
            raise ValueError("at least one backend descriptor is required")
        self.store = store
        self.ledger = ledger
        self._clock = clock or SystemClock()
        self._descriptors = {d.id: d for d in descriptors}
        self._limiters = {
            d.id: TokenBucket(d.qps_limit, burst=burst, clock=self._clock) for d in descriptors
        }
        self._in_process = dict(in_process or {})
        self._session = session
        self._timeout = request_timeout

    @property
    def backend_ids(self) -> list[str]:
        return list(self._descriptors)

    def descriptor(self, backend_id: str) -> BackendDescriptor:
        return self._descriptors[backend_id]

    def _fetch_http(self, desc: BackendDescriptor, prompt: str, width: int, height: int) -> bytes:
        session = self._session or requests
        headers = {}
        if desc.auth_token:
            headers["Authorization"] = f"Bearer {desc.auth_token}"
        try:
            resp = session.post(
                desc.endpoint.rstrip("/") + "/generate",
                json={"prompt": prompt, "width": width, "height": height},
                headers=headers,
                timeout=self._timeout,
            )
        except requests.RequestException as exc:
            raise TransientBackendFailure(f"{desc.id}: {exc}") from exc
        if resp.status_code == 200:
            return base64.b64decode(resp.json()["image_b64"])
        if resp.status_code == 429:
            retry_after = None
            if "Retry-After" in resp.headers:
                try:
                    retry_after = float(resp.headers["Retry-After"])
                except ValueError:
                    pass
            raise TransientBackendFailure(f"{desc.id}: rate limited", retry_after=retry_after)
        if resp.status_code >= 500:
            raise TransientBackendFailure(f"{desc.id}: server error {resp.status_code}")
        raise FatalBackendFailure(f"{desc.id}: HTTP {resp.status_code}: {resp.text[:200]}")

    def _fetch(self, desc: BackendDescriptor, prompt: str, width: int, height: int) -> bytes:
        if desc.in_process:
            generator = self._in_process[desc.profile_name]
            return generator(prompt, width, height)
        return self._fetch_http(desc, prompt, width, height)

    def generate(self, backend_id: str, prompt: str, size: BucketSpec,
                 prompt_id: str = "") -> ImageHandle:
        """One rate-limited, budgeted, retried call to one backend.

        The caller must pass a size the backend supports (adapt first);
        violating that is a programming error and is never retried.
        """
        desc = self._descriptors[backend_id]
        if not desc.supports(size):
            raise UnsupportedSize(f"{backend_id} does not support {size}")

        reservation = self.ledger.reserve(desc.cost_per_call)
        try:
            data = self._call_with_retries(desc, prompt, size)
        except Exception:
            self.ledger.rollback(reservation)
            raise

        width, height, extra = size.width, size.height, {}
        payload = pseudo.decode(data)
        if payload is not None:
            width, height = int(payload["width"]), int(payload["height"])
            extra = {"quality": float(payload["quality"])}
        handle = self.store.put(
            data, width=width, height=height, backend=backend_id, prompt_id=prompt_id, **extra
        )
        self.ledger.commit(reservation, backend_id, prompt_id)
        return handle

    def _call_with_retries(self, desc: BackendDescriptor, prompt: str, size: BucketSpec) -> bytes:
        delay = BACKOFF_BASE_SECONDS
        last: Exception | None = None
        for attempt in range(1, MAX_ATTEMPTS + 1):
            self._limiters[desc.id].acquire()
            try:
                return self._fetch(desc, prompt, size.width, size.height)
            except TransientBackendFailure as exc:
                last = exc
                if attempt == MAX_ATTEMPTS:
                    break
                wait = exc.retry_after if exc.retry_after is not None else delay
                logger.debug("%s attempt %d failed (%s); retrying in %.1fs",
                             desc.id, attempt, exc, wait)
                self._clock.sleep(wait)
                delay *= BACKOFF_FACTOR
        raise BackendExhausted(f"{desc.id} failed after {MAX_ATTEMPTS} attempts: {last}")

    def generate_all(self, prompt: str, requested_bucket: BucketSpec,
                     prompt_id: str = "", backend_ids: Sequence[str] | None = None,
                     ) -> tuple[list[tuple[str, ImageHandle]], list[GenerationFailure]]:
        """Fan the prompt out to every backend, adapting the bucket per backend.

        Per-backend failures are reported, not raised, unless every backend
        fails (AllBackendsFailed).
        """
        ids = list(backend_ids) if backend_ids is not None else self.backend_ids
        if not ids:
            raise ValueError("backend list is empty")
        results: list[tuple[str, ImageHandle]] = []
        failures: list[GenerationFailure] = []
        for backend_id in ids:
            desc = self._descriptors[backend_id]
            adapted = adapt_to_backend(requested_bucket, desc.supported_sizes)
            try:
                results.append((backend_id, self.generate(backend_id, prompt, adapted, prompt_id)))
            except BudgetExceeded:
                # The budget is global, not a per-backend hiccup: abort the
                # fan-out so the caller can wind the run down gracefully.
                raise
            except (BackendExhausted, FatalBackendFailure) as exc:
                logger.warning("backend %s failed for prompt %s: %s", backend_id, prompt_id, exc)
                failures.append(GenerationFailure(backend_id, exc))
        if not results:
            raise AllBackendsFailed({f.backend: f.error for f in failures})
        return results, failures

"""Token-bucket rate limiter shared by all workers calling one backend."""

from __future__ import annotations

import threading

from .clock import Clock, SystemClock

# Absorbs float rounding when a clock sleeps an exact computed wait.
_TOLERANCE = 1e-12


class TokenBucket:
    """Token bucket with capacity ``burst`` and refill ``rate`` tokens/sec.

    Implemented in the virtual-scheduling (theoretical arrival time) form
    rather than by accumulating fractional tokens: each admitted call pushes
    the arrival time forward by 1/rate, and a call conforms while the clock
    is within (burst-1)/rate of that horizon.  This stays exact under any
    clock, including the virtual one used in tests, where nanoscale token
    top-ups would vanish into float rounding.

    acquire() blocks through the injected clock, so tests advance virtual
    time instead of sleeping.  One bucket is shared per backend across
    worker threads.
    """

    def __init__(self, rate: float, burst: float = 1.0, clock: Clock | None = None):
        if rate <= 0:
            raise ValueError(f"rate must be positive, got {rate}")
        if burst < 1:
            raise ValueError(f"burst must be >= 1, got {burst}")
        self.rate = float(rate)
        self.burst = float(burst)
        self._interval = 1.0 / self.rate
        self._clock = clock or SystemClock()
        self._tat: float | None = None  # theoretical arrival time horizon
        self._lock = threading.Lock()

    def _admit(self, now: float) -> float | None:
        """Admit the call (returns None) or return the wait time."""
        tat = self._tat if self._tat is not None else now
        threshold = tat - (self.burst - 1.0) * self._interval
        if now >= threshold - _TOLERANCE:
            self._tat = max(tat, now) + self._interval
            return None
        return threshold - now

    def try_acquire(self) -> bool:
        with self._lock:
            return self._admit(self._clock.now()) is None

    def acquire(self) -> float:
        """Block until a slot is available; returns the admission time."""
        while True:
            with self._lock:
                now = self._clock.now()
                wait = self._admit(now)
                if wait is None:
                    return now
            self._clock.sleep(wait)

"""Per-call cost accounting with exact decimal arithmetic.

Fee-based APIs are the expensive part of this whole setup, so the ledger
never uses floats and budget enforcement is reserve -> call -> commit or
rollback: even under concurrency the committed total cannot pass the budget.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from decimal import Decimal

from .clock import Clock, SystemClock
from .errors import BudgetExceeded


@dataclass(frozen=True)
class LedgerEntry:
    backend: str
    timestamp: float
    cost: Decimal
    prompt_id: str


class Reservation:
    __slots__ = ("amount", "settled")

    def __init__(self, amount: Decimal):
        self.amount = amount
        self.settled = False


class CostLedger:
    def __init__(self, budget: Decimal | None = None, clock: Clock | None = None):
        self._entries: list[LedgerEntry] = []
        self._total = Decimal("0")
        self._reserved = Decimal("0")
        self._budget = budget
        self._clock = clock or SystemClock()
        self._lock = threading.Lock()

    @property
    def total(self) -> Decimal:
        with self._lock:
            return self._total

    @property
    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries)

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self._entries)

    def calls_by_backend(self) -> dict[str, int]:
        with self._lock:
            out: dict[str, int] = {}
            for e in self._entries:
                out[e.backend] = out.get(e.backend, 0) + 1
            return out

    def reserve(self, cost: Decimal) -> Reservation:
        """Hold budget headroom for one call; raises before any money is spent."""
        if cost < 0:
            raise ValueError("cost must be non-negative")
        with self._lock:
            if self._budget is not None and self._total + self._reserved + cost > self._budget:
                raise BudgetExceeded(
                    f"budget {self._budget} would be exceeded: total={self._total} "
                    f"reserved={self._reserved} next={cost}"
                )
            self._reserved += cost
            return Reservation(cost)

    def commit(self, reservation: Reservation, backend: str, prompt_id: str = "") -> None:
        with self._lock:
            if reservation.settled:
                raise ValueError("reservation already settled")
            reservation.settled = True
            self._reserved -= reservation.amount
            self._total += reservation.amount
            self._entries.append(
                LedgerEntry(backend, self._clock.now(), reservation.amount, prompt_id)
            )

    def rollback(self, reservation: Reservation) -> None:
        with self._lock:
            if reservation.settled:
                return
            reservation.settled = True
            self._reserved -= reservation.amount

    def to_records(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "backend": e.backend,
                    "timestamp": e.timestamp,
                    "cost": str(e.cost),
                    "prompt_id": e.prompt_id,
                }
                for e in self._entries
            ]

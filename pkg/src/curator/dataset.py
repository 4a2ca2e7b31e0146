"""The dynamic training set.

Capped storage of active samples, permanent tombstones for deleted prompt
texts, uniform subset sampling for evaluation, and durable JSONL
persistence.  Every mutation flows through one serialized transaction path
and leaves an audit trail in the append-only decision log.

Concurrency model: many readers, one writer.  Readers only ever see
committed snapshots (immutable tuples); the training loop can keep drawing
batches while the director prepares its next transaction.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .buckets import BucketSpec
from .errors import CorruptRecord, EmptyDataset, SchemaMismatch, StorageFailure
from .jsonl import append_jsonl, read_jsonl, write_jsonl
from .store import ImageHandle

SCHEMA_VERSION = 1

STATUS_ACTIVE = "active"
STATUS_DELETED = "deleted"

# Decision-log actions.
ACTION_ADD = "ADD"
ACTION_DELETE = "DELETE"
ACTION_EXPAND = "EXPAND"
ACTION_MUTATE = "MUTATE"
ACTION_SELECT = "SELECT"

# Skip reasons reported by add_samples.
SKIP_TOMBSTONED = "tombstoned"
SKIP_DUPLICATE = "duplicate"
SKIP_CAP_REACHED = "cap_reached"

LINEAGE_ROOT = "root"
LINEAGE_EXPANDED = "expanded_from"
LINEAGE_MUTATED = "mutated"


@dataclass(frozen=True)
class Lineage:
    kind: str
    parent_id: str | None = None

    @classmethod
    def root(cls) -> "Lineage":
        return cls(LINEAGE_ROOT)

    @classmethod
    def expanded_from(cls, parent_id: str) -> "Lineage":
        return cls(LINEAGE_EXPANDED, parent_id)

    @classmethod
    def mutated(cls) -> "Lineage":
        return cls(LINEAGE_MUTATED)

    def __post_init__(self):
        if self.kind not in (LINEAGE_ROOT, LINEAGE_EXPANDED, LINEAGE_MUTATED):
            raise ValueError(f"unknown lineage kind {self.kind!r}")
        if self.kind == LINEAGE_EXPANDED and not self.parent_id:
            raise ValueError("expanded_from lineage requires a parent_id")
        if self.kind != LINEAGE_EXPANDED and self.parent_id is not None:
            raise ValueError(f"{self.kind} lineage must not carry a parent_id")

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.parent_id is not None:
            d["parent_id"] = self.parent_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Lineage":
        return cls(d["kind"], d.get("parent_id"))


@dataclass(frozen=True)
class Prompt:
    id: str
    text: str
    lineage: Lineage
    created_epoch: int

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError(f"prompt {self.id}: text is empty after trimming")
        if self.created_epoch < 0:
            raise ValueError(f"prompt {self.id}: created_epoch must be non-negative")

    @property
    def trimmed_text(self) -> str:
        return self.text.strip()

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "lineage": self.lineage.as_dict(),
            "created_epoch": self.created_epoch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Prompt":
        return cls(d["id"], d["text"], Lineage.from_dict(d["lineage"]), int(d["created_epoch"]))


@dataclass
class Sample:
    prompt: Prompt
    image: ImageHandle
    source_backend: str
    bucket: BucketSpec
    status: str = STATUS_ACTIVE

    def as_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "prompt": self.prompt.as_dict(),
            "image": self.image.as_dict(),
            "source_backend": self.source_backend,
            "bucket": self.bucket.as_dict(),
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Sample":
        if int(d.get("schema_version", -1)) != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"sample record schema {d.get('schema_version')} != {SCHEMA_VERSION}"
            )
        return cls(
            prompt=Prompt.from_dict(d["prompt"]),
            image=ImageHandle.from_dict(d["image"]),
            source_backend=d["source_backend"],
            bucket=BucketSpec.from_dict(d["bucket"]),
            status=d.get("status", STATUS_ACTIVE),
        )


@dataclass(frozen=True)
class DecisionRecord:
    seq: int
    epoch: int
    action: str
    prompt_id: str
    reason: str
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "seq": self.seq,
            "epoch": self.epoch,
            "action": self.action,
            "prompt_id": self.prompt_id,
            "reason": self.reason,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionRecord":
        return cls(int(d["seq"]), int(d["epoch"]), d["action"], d["prompt_id"],
                   d["reason"], d.get("detail", {}))


@dataclass(frozen=True)
class Skip:
    prompt_id: str
    reason: str


@dataclass(frozen=True)
class AddReport:
    accepted: int
    skipped: tuple[Skip, ...]

    @property
    def skipped_count(self) -> int:
        return len(self.skipped)


@dataclass
class StagedEvent:
    """A non-ADD/DELETE audit record staged by the director for the next commit."""

    action: str
    prompt_id: str
    reason: str
    detail: dict = field(default_factory=dict)


class DynamicDataset:
    def __init__(self, cap: int):
        if cap <= 0:
            raise ValueError(f"cap must be positive, got {cap}")
        self.cap = cap
        self._active: dict[str, Sample] = {}
        self._active_texts: set[str] = set()
        self._tombstones: set[str] = set()
        self._log: list[DecisionRecord] = []
        self._seen_ids: set[str] = set()
        self._parents: dict[str, str | None] = {}
        self._lock = threading.RLock()
        self._version = 0
        self._snapshot_cache: tuple[Sample, ...] = ()
        self._snapshot_version = -1

    # ------------------------------------------------------------------ reads

    def __len__(self) -> int:
        with self._lock:
            return len(self._active)

    @property
    def version(self) -> int:
        with self._lock:
            return self._version

    def snapshot(self) -> tuple[Sample, ...]:
        """Immutable view of the active set; cached until the next commit."""
        with self._lock:
            if self._snapshot_version != self._version:
                self._snapshot_cache = tuple(self._active.values())
                self._snapshot_version = self._version
            return self._snapshot_cache

    def get(self, prompt_id: str) -> Sample | None:
        with self._lock:
            return self._active.get(prompt_id)

    def is_tombstoned(self, text: str) -> bool:
        with self._lock:
            return text.strip() in self._tombstones

    def has_text(self, text: str) -> bool:
        with self._lock:
            return text.strip() in self._active_texts

    @property
    def tombstones(self) -> set[str]:
        with self._lock:
            return set(self._tombstones)

    @property
    def decision_log(self) -> list[DecisionRecord]:
        with self._lock:
            return list(self._log)

    def parent_of(self, prompt_id: str) -> str | None:
        with self._lock:
            return self._parents.get(prompt_id)

    def known_id(self, prompt_id: str) -> bool:
        with self._lock:
            return prompt_id in self._seen_ids

    def ancestors(self, prompt_id: str) -> list[str]:
        """Chain of parent ids up to a root; guards against cycles."""
        out: list[str] = []
        seen = {prompt_id}
        cur = self.parent_of(prompt_id)
        while cur is not None:
            if cur in seen:
                raise AssertionError(f"lineage cycle through {cur}")
            out.append(cur)
            seen.add(cur)
            cur = self.parent_of(cur)
        return out

    def sample_for_evaluation(self, ratio: float, rng: random.Random) -> list[Sample]:
        """ceil(ratio * |active|) distinct samples, uniform without replacement."""
        if not 0 < ratio <= 1:
            raise ValueError(f"ratio must be in (0, 1], got {ratio}")
        snap = self.snapshot()
        if not snap:
            raise EmptyDataset("cannot sample from an empty dataset")
        k = math.ceil(ratio * len(snap))
        return rng.sample(list(snap), k)

    # ----------------------------------------------------------------- writes

    def _append_record(self, epoch: int, action: str, prompt_id: str,
                       reason: str, detail: dict | None = None) -> None:
        self._log.append(DecisionRecord(
            seq=len(self._log) + 1, epoch=epoch, action=action,
            prompt_id=prompt_id, reason=reason, detail=detail or {},
        ))

    def commit(
        self,
        *,
        epoch: int = 0,
        removes: Sequence[tuple[str, str]] = (),
        adds: Sequence[Sample] = (),
        add_reason: str = "add",
        staged_events: Sequence[StagedEvent] = (),
    ) -> tuple[int, AddReport]:
        """Apply one atomic transaction: staged audit events, then removals,
        then additions.  Removals free capacity for additions in the same
        transaction.  Returns (removed_count, AddReport)."""
        with self._lock:
            for ev in staged_events:
                self._append_record(epoch, ev.action, ev.prompt_id, ev.reason, ev.detail)

            removed = 0
            for prompt_id, reason in removes:
                sample = self._active.get(prompt_id)
                if sample is None:
                    continue
                del self._active[prompt_id]
                self._active_texts.discard(sample.prompt.trimmed_text)
                self._tombstones.add(sample.prompt.trimmed_text)
                sample.status = STATUS_DELETED
                removed += 1
                self._append_record(epoch, ACTION_DELETE, prompt_id, reason)

            accepted = 0
            skipped: list[Skip] = []
            for sample in adds:
                if sample.status != STATUS_ACTIVE:
                    raise ValueError(f"sample {sample.prompt.id} is not active")
                pid = sample.prompt.id
                if pid in self._seen_ids:
                    raise ValueError(f"prompt id {pid} was already used")
                parent = sample.prompt.lineage.parent_id
                if parent is not None and parent not in self._seen_ids:
                    raise ValueError(f"prompt {pid}: unknown lineage parent {parent}")
                text = sample.prompt.trimmed_text
                if text in self._tombstones:
                    skipped.append(Skip(pid, SKIP_TOMBSTONED))
                    continue
                if text in self._active_texts:
                    skipped.append(Skip(pid, SKIP_DUPLICATE))
                    continue
                if len(self._active) >= self.cap:
                    skipped.append(Skip(pid, SKIP_CAP_REACHED))
                    continue
                self._active[pid] = sample
                self._active_texts.add(text)
                self._seen_ids.add(pid)
                self._parents[pid] = parent
                accepted += 1
                reason = {
                    LINEAGE_EXPANDED: "expansion",
                    LINEAGE_MUTATED: "mutation",
                }.get(sample.prompt.lineage.kind, add_reason)
                self._append_record(
                    epoch, ACTION_ADD, pid, reason,
                    {"lineage": sample.prompt.lineage.as_dict(),
                     "backend": sample.source_backend,
                     "text": sample.prompt.text},
                )
            self._version += 1
            return removed, AddReport(accepted, tuple(skipped))

    def add_samples(self, batch: Sequence[Sample], *, epoch: int = 0,
                    reason: str = "add") -> AddReport:
        _, report = self.commit(epoch=epoch, adds=batch, add_reason=reason)
        return report

    def remove_prompts(self, ids: Sequence[str], reason: str, *, epoch: int = 0) -> int:
        removed, _ = self.commit(epoch=epoch, removes=[(pid, reason) for pid in ids])
        return removed

    # ------------------------------------------------------------ persistence

    def persist(self, path: str | Path) -> None:
        """Write the dataset directory: samples, tombstones, decisions, meta."""
        root = Path(path)
        with self._lock:
            samples = [s.as_dict() for s in self._active.values()]
            tombstones = [{"text": t} for t in sorted(self._tombstones)]
            decisions = [r.as_dict() for r in self._log]
            meta = {"schema_version": SCHEMA_VERSION, "cap": self.cap}
        try:
            root.mkdir(parents=True, exist_ok=True)
            write_jsonl(root / "dataset.jsonl", samples)
            write_jsonl(root / "tombstones.jsonl", tombstones)
            write_jsonl(root / "decisions.jsonl", decisions)
            write_jsonl(root / "meta.json", [meta])
        except OSError as exc:
            raise StorageFailure(f"persist to {root} failed: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "DynamicDataset":
        root = Path(path)
        meta_path = root / "meta.json"
        if not meta_path.exists():
            raise StorageFailure(f"{root} is not a dataset directory (no meta.json)")
        meta = next(read_jsonl(meta_path))[1]
        if int(meta.get("schema_version", -1)) != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"dataset schema {meta.get('schema_version')} != {SCHEMA_VERSION}"
            )
        ds = cls(cap=int(meta["cap"]))
        for _, rec in read_jsonl(root / "tombstones.jsonl"):
            ds._tombstones.add(rec["text"])
        for _, rec in read_jsonl(root / "decisions.jsonl"):
            record = DecisionRecord.from_dict(rec)
            ds._log.append(record)
            ds._seen_ids.add(record.prompt_id)
            if record.action == ACTION_ADD:
                lineage = record.detail.get("lineage", {})
                ds._parents[record.prompt_id] = lineage.get("parent_id")
        for lineno, rec in read_jsonl(root / "dataset.jsonl"):
            try:
                sample = Sample.from_dict(rec)
            except SchemaMismatch:
                raise
            except (KeyError, ValueError, TypeError) as exc:
                raise CorruptRecord(str(root / "dataset.jsonl"), lineno, str(exc)) from exc
            if sample.status != STATUS_ACTIVE:
                continue
            ds._active[sample.prompt.id] = sample
            ds._active_texts.add(sample.prompt.trimmed_text)
            ds._seen_ids.add(sample.prompt.id)
            ds._parents.setdefault(sample.prompt.id, sample.prompt.lineage.parent_id)
        ds._version += 1
        return ds

    def append_decisions_to(self, path: str | Path, since_seq: int = 0) -> int:
        """Stream decision records with seq > since_seq to a JSONL file.

        Used by the run loop to keep the on-disk log append-only during a
        run instead of rewriting it every checkpoint.
        """
        with self._lock:
            pending = [r.as_dict() for r in self._log if r.seq > since_seq]
        for rec in pending:
            append_jsonl(path, rec)
        return self._log[-1].seq if self._log else since_seq

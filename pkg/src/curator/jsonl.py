"""Tiny JSONL helpers used by every file format in the package.

All artifacts (dataset, tombstones, decision log, metrics, fixtures) are
line-delimited JSON so a crash mid-write leaves a parseable prefix.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import CorruptRecord


def dumps_canonical(obj: Any) -> str:
    """Serialize with a fixed key order and no whitespace drift.

    Used wherever byte-identical output per seed is part of the contract
    (decision logs, pseudo-images, reports).
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_canonical(rec))
            fh.write("\n")
    os.replace(tmp, path)


def append_jsonl(path: str | Path, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(dumps_canonical(record))
        fh.write("\n")


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record); raises CorruptRecord with the line number."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                rec = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise CorruptRecord(str(path), lineno, str(exc)) from exc
            if not isinstance(rec, dict):
                raise CorruptRecord(str(path), lineno, "record is not an object")
            yield lineno, rec

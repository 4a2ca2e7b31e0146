"""Content-addressed, write-once image store.

Dataset records never hold pixels, only handles into this store.  Identical
bytes always yield the identical handle, and a second write of the same hash
is a no-op, which also resolves concurrent-writer races.

Disk layout: ``<store_dir>/<first two hex chars>/<sha256>.bin`` plus a JSON
sidecar ``<sha256>.json`` carrying at least {width, height, backend,
prompt_id}.  Simulated images add a ``quality`` field so the synthetic judge
never needs to decode pixels.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class ImageHandle:
    sha256: str
    size_bytes: int
    width: int
    height: int

    def as_dict(self) -> dict:
        return {
            "sha256": self.sha256,
            "bytes": self.size_bytes,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageHandle":
        return cls(str(d["sha256"]), int(d["bytes"]), int(d["width"]), int(d["height"]))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class ImageStore:
    """Interface; see MemoryImageStore and DiskImageStore."""

    def put(self, data: bytes, *, width: int, height: int, backend: str,
            prompt_id: str = "", **extra) -> ImageHandle:
        raise NotImplementedError

    def get_bytes(self, sha256: str) -> bytes:
        raise NotImplementedError

    def metadata(self, sha256: str) -> dict:
        raise NotImplementedError

    def exists(self, sha256: str) -> bool:
        raise NotImplementedError


class MemoryImageStore(ImageStore):
    """In-process store for simulation runs; same semantics as the disk store."""

    def __init__(self):
        self._blobs: dict[str, bytes] = {}
        self._meta: dict[str, dict] = {}
        self._lock = threading.Lock()

    def put(self, data: bytes, *, width: int, height: int, backend: str,
            prompt_id: str = "", **extra) -> ImageHandle:
        digest = sha256_hex(data)
        with self._lock:
            if digest not in self._blobs:
                self._blobs[digest] = data
                meta = {"width": width, "height": height, "backend": backend, "prompt_id": prompt_id}
                meta.update(extra)
                self._meta[digest] = meta
        return ImageHandle(digest, len(data), width, height)

    def get_bytes(self, sha256: str) -> bytes:
        return self._blobs[sha256]

    def metadata(self, sha256: str) -> dict:
        return dict(self._meta[sha256])

    def exists(self, sha256: str) -> bool:
        return sha256 in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)


class DiskImageStore(ImageStore):
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        # Write-through metadata cache; sidecar reads are hot in simulation.
        self._meta_cache: dict[str, dict] = {}
        self._lock = threading.Lock()

    def _blob_path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.bin"

    def _meta_path(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def put(self, data: bytes, *, width: int, height: int, backend: str,
            prompt_id: str = "", **extra) -> ImageHandle:
        digest = sha256_hex(data)
        blob = self._blob_path(digest)
        if not blob.exists():
            blob.parent.mkdir(parents=True, exist_ok=True)
            meta = {"width": width, "height": height, "backend": backend, "prompt_id": prompt_id}
            meta.update(extra)
            # Atomic rename keeps concurrent writers of the same hash safe:
            # whoever replaces last wrote identical content anyway.
            tmp = blob.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
            tmp.write_bytes(data)
            os.replace(tmp, blob)
            mtmp = self._meta_path(digest).with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
            mtmp.write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
            os.replace(mtmp, self._meta_path(digest))
            with self._lock:
                self._meta_cache[digest] = meta
        return ImageHandle(digest, len(data), width, height)

    def get_bytes(self, sha256: str) -> bytes:
        return self._blob_path(sha256).read_bytes()

    def metadata(self, sha256: str) -> dict:
        with self._lock:
            cached = self._meta_cache.get(sha256)
        if cached is None:
            cached = json.loads(self._meta_path(sha256).read_text(encoding="utf-8"))
            with self._lock:
                self._meta_cache[sha256] = cached
        return dict(cached)

    def exists(self, sha256: str) -> bool:
        return self._blob_path(sha256).exists()

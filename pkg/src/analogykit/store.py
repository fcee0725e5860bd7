"""Durable persistence: content-addressed blobs and session documents.

Default backing is a filesystem tree so a deployment needs nothing but a
writable directory:

    <root>/blobs/<h[:2]>/<h[2:4]>/<hash>          raw bytes
    <root>/blobs/<...>/<hash>.type                media type sidecar
    <root>/sessions/<id>.json                     one document per session

Blob reads re-verify the content digest; session writes go through a
write-temp-then-rename so a crash never leaves a half-written readable
document. There is no garbage collection: orphaned blobs are tolerated.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any

from .errors import IntegrityError, NotFoundError, StorageError
from .model import BlobRef, PipelineSession

LAYOUT_VERSION = 1


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def to_json(doc: Any) -> str:
    """Canonical document serialization used for all persisted artifacts."""
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


class Store(ABC):
    """Persistence contract; a database backend would implement the same."""

    @abstractmethod
    def put_blob(self, data: bytes, media_type: str) -> BlobRef: ...

    @abstractmethod
    def get_blob(self, ref: BlobRef) -> bytes: ...

    @abstractmethod
    def has_blob(self, hash_: str) -> bool: ...

    @abstractmethod
    def get_blob_by_hash(self, hash_: str) -> tuple[bytes, str]: ...

    @abstractmethod
    def save_session(self, session: PipelineSession) -> None: ...

    @abstractmethod
    def load_session(self, session_id: str) -> PipelineSession: ...

    @abstractmethod
    def list_sessions(self, offset: int = 0, limit: int = 50) -> list[PipelineSession]: ...


class FilesystemStore(Store):
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.blob_root = self.root / "blobs"
        self.session_root = self.root / "sessions"
        try:
            self.blob_root.mkdir(parents=True, exist_ok=True)
            self.session_root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot initialize store at {self.root}: {exc}") from exc
        marker = self.root / "layout_version"
        if not marker.exists():
            marker.write_text(f"{LAYOUT_VERSION}\n")
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- blobs ---------------------------------------------------------

    def _blob_path(self, hash_: str) -> Path:
        return self.blob_root / hash_[:2] / hash_[2:4] / hash_

    def put_blob(self, data: bytes, media_type: str) -> BlobRef:
        h = digest(data)
        path = self._blob_path(h)
        ref = BlobRef(hash=h, media_type=media_type, byte_length=len(data))
        if path.exists():
            return ref
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f".{h}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
            path.with_suffix(".type").write_text(media_type)
        except OSError as exc:
            raise StorageError(f"cannot write blob {h}: {exc}") from exc
        return ref

    def get_blob(self, ref: BlobRef) -> bytes:
        data, _ = self.get_blob_by_hash(ref.hash)
        return data

    def has_blob(self, hash_: str) -> bool:
        return self._blob_path(hash_).exists()

    def get_blob_by_hash(self, hash_: str) -> tuple[bytes, str]:
        path = self._blob_path(hash_)
        if not path.exists():
            raise NotFoundError(f"no blob with hash {hash_}")
        data = path.read_bytes()
        actual = digest(data)
        if actual != hash_:
            raise IntegrityError(
                f"blob {hash_} failed digest verification (stored bytes hash to {actual})"
            )
        type_path = path.with_suffix(".type")
        media_type = (
            type_path.read_text().strip() if type_path.exists() else "application/octet-stream"
        )
        return data, media_type

    def blob_count(self) -> int:
        return sum(1 for p in self.blob_root.rglob("*") if p.is_file() and "." not in p.name)

    # -- sessions ------------------------------------------------------

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def _session_path(self, session_id: str) -> Path:
        safe = "".join(c for c in session_id if c.isalnum() or c in "-_")
        if safe != session_id or not safe:
            raise NotFoundError(f"no session with id {session_id!r}")
        return self.session_root / f"{session_id}.json"

    def save_session(self, session: PipelineSession) -> None:
        path = self._session_path(session.id)
        payload = to_json(session.to_doc())
        with self._session_lock(session.id):
            try:
                tmp = path.with_suffix(".json.tmp")
                tmp.write_text(payload, encoding="utf-8")
                tmp.replace(path)
            except OSError as exc:
                raise StorageError(f"cannot save session {session.id}: {exc}") from exc

    def load_session(self, session_id: str) -> PipelineSession:
        path = self._session_path(session_id)
        if not path.exists():
            raise NotFoundError(f"no session with id {session_id}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        return PipelineSession.from_doc(doc)

    def list_sessions(self, offset: int = 0, limit: int = 50) -> list[PipelineSession]:
        sessions = []
        for path in self.session_root.glob("*.json"):
            try:
                sessions.append(PipelineSession.from_doc(json.loads(path.read_text())))
            except (json.JSONDecodeError, KeyError):
                continue  # skip foreign files; never fail a listing on one bad doc
        sessions.sort(key=lambda s: (s.created_at, s.id), reverse=True)
        return sessions[offset : offset + limit]

    def session_count(self) -> int:
        return sum(1 for _ in self.session_root.glob("*.json"))

"""Small shared helpers: ids, stable hashing, RFC 3339 timestamps."""

from __future__ import annotations

import hashlib
import secrets
import threading
from datetime import datetime, timedelta, timezone

_MICROSECOND = timedelta(microseconds=1)


def new_id() -> str:
    """Random 128-bit identifier as lowercase hex."""
    return secrets.token_hex(16)


def stable_hash(*parts: object) -> int:
    """Deterministic 256-bit integer derived from the given parts.

    Used wherever mock backends or seed derivation need reproducible
    pseudo-randomness across processes; never use `hash()` for that.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def derive_id(*parts: object) -> str:
    """Content-derived 128-bit identifier as lowercase hex.

    Identical inputs yield identical ids, which keeps regenerated
    artifacts byte-comparable across runs.
    """
    return hashlib.sha256(
        "\x1f".join(str(p) for p in parts).encode("utf-8")
    ).hexdigest()[:32]


def rfc3339(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat(timespec="microseconds").replace(
        "+00:00", "Z"
    )


def parse_rfc3339(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00"))


class MonotonicClock:
    """Wall-clock timestamps guaranteed strictly increasing per instance.

    Session listings are ordered by creation time; back-to-back creates
    within the same microsecond would otherwise tie.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._last: datetime | None = None

    def now(self) -> datetime:
        with self._lock:
            current = datetime.now(timezone.utc)
            if self._last is not None and current <= self._last:
                current = self._last + _MICROSECOND
            self._last = current
            return current

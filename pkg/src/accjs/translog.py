"""Append-only, per-URL versioned manifest log with signed inclusion statements.

Entries are persisted as ``len(8B big-endian) || canonical JSON`` records.
Writers serialize per URL; the record file has a single writer. A torn
final record is truncated when the log is reopened.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .clock import Clock, system_clock
from .crypto import (
    DAY,
    EnvelopeError,
    KeyRegistry,
    Principal,
    SignedEnvelope,
    encode_tuple,
    verify_detached,
    verify_envelope,
)
from .manifest import IncomparableVersions, compare_versions, strip_query

DEFAULT_FRESHNESS_WINDOW = DAY
MONTH = 30 * DAY
ENTRY_CONTEXT = b"accjs-log-entry/1"
STAPLE_CONTEXT = b"accjs-staple/1"


class LogError(Exception):
    pass


class BadEnvelope(LogError):
    pass


class NonMonotoneVersion(LogError):
    pass


class NotFound(LogError):
    pass


class StaleProof(LogError):
    pass


class BadStapleSignature(LogError):
    pass


def entry_payload(url: str, version: str, manifest_digest: bytes, ts: int, commitment: bytes) -> bytes:
    return encode_tuple(ENTRY_CONTEXT, url, version, manifest_digest, ts, commitment)


@dataclass(frozen=True)
class LogEntry:
    url: str
    developer_id: str
    manifest_version: str
    envelope: SignedEnvelope
    ts: int
    sig_l: bytes
    log_id: str
    submitter: str | None = None

    @property
    def manifest_digest(self) -> bytes:
        return self.envelope.body_digest

    @property
    def commitment(self) -> bytes:
        """The developer's signature over the manifest, as submitted."""
        return self.envelope.signature

    def signed_payload(self) -> bytes:
        return entry_payload(self.url, self.manifest_version, self.manifest_digest, self.ts, self.commitment)

    @property
    def digest(self) -> bytes:
        return hashlib.sha256(self.signed_payload()).digest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "url": self.url,
            "developer_id": self.developer_id,
            "manifest_version": self.manifest_version,
            "envelope": self.envelope.to_dict(),
            "ts": self.ts,
            "sig_l": base64.b64encode(self.sig_l).decode("ascii"),
            "log_id": self.log_id,
            "submitter": self.submitter,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LogEntry:
        return cls(
            url=d["url"], developer_id=d["developer_id"], manifest_version=d["manifest_version"],
            envelope=SignedEnvelope.from_dict(d["envelope"]), ts=int(d["ts"]),
            sig_l=base64.b64decode(d["sig_l"]), log_id=d["log_id"], submitter=d.get("submitter"),
        )


@dataclass(frozen=True)
class StapledProof:
    """Signed, timestamped statement that ``url`` maps to a given entry."""

    log_id: str
    url: str
    manifest_version: str
    manifest_digest: bytes
    entry_ts: int
    entry_digest: bytes
    issued_ts: int
    window: int
    signature: bytes

    def signed_payload(self) -> bytes:
        return encode_tuple(STAPLE_CONTEXT, self.log_id, self.url, self.manifest_version, self.manifest_digest,
                            self.entry_ts, self.entry_digest, self.issued_ts, self.window)

    def to_dict(self) -> dict[str, Any]:
        return {
            "log_id": self.log_id, "url": self.url, "manifest_version": self.manifest_version,
            "manifest_digest": self.manifest_digest.hex(), "entry_ts": self.entry_ts,
            "entry_digest": self.entry_digest.hex(), "issued_ts": self.issued_ts, "window": self.window,
            "signature": base64.b64encode(self.signature).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> StapledProof:
        return cls(
            log_id=d["log_id"], url=d["url"], manifest_version=d["manifest_version"],
            manifest_digest=bytes.fromhex(d["manifest_digest"]), entry_ts=int(d["entry_ts"]),
            entry_digest=bytes.fromhex(d["entry_digest"]), issued_ts=int(d["issued_ts"]),
            window=int(d["window"]), signature=base64.b64decode(d["signature"]),
        )


def verify_staple(proof: StapledProof, log_public_key: bytes, now: int | None) -> None:
    """Raise unless the proof is signed by the log and ``now`` is within its window.

    ``now=None`` checks only the signature.
    """
    if not verify_detached(log_public_key, proof.signature, proof.signed_payload()):
        raise BadStapleSignature("staple signature does not verify")
    if now is not None and not proof.issued_ts <= now <= proof.issued_ts + proof.window:
        raise StaleProof(f"staple issued at {proof.issued_ts} with window {proof.window}, now {now}")


def _record(entry: LogEntry) -> bytes:
    data = json.dumps(entry.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return len(data).to_bytes(8, "big") + data


def read_records(path: Path) -> tuple[list[LogEntry], int]:
    """Decode complete records; return them with the byte offset after the last one."""
    data = path.read_bytes() if path.exists() else b""
    entries, pos = [], 0
    while pos + 8 <= len(data):
        n = int.from_bytes(data[pos:pos + 8], "big")
        if pos + 8 + n > len(data):
            break
        try:
            entries.append(LogEntry.from_dict(json.loads(data[pos + 8:pos + 8 + n])))
        except (ValueError, KeyError, EnvelopeError):
            break
        pos += 8 + n
    return entries, pos


class TransparencyLog:
    """Trusted append-only log of signed manifests, keyed by URL.

    ``on_decision(url, version, accepted)`` is called inside the per-URL
    critical section, which makes it the linearization point of submit.
    """

    def __init__(
        self,
        principal: Principal,
        registry: KeyRegistry,
        clock: Clock = system_clock,
        path: str | Path | None = None,
        *,
        freshness_window: int = DEFAULT_FRESHNESS_WINDOW,
        allow_cn_suffix: bool = False,
        on_decision: Callable[[str, str, bool], None] | None = None,
    ):
        self.principal = principal
        self.registry = registry
        self.clock = clock
        self.freshness_window = freshness_window
        self.allow_cn_suffix = allow_cn_suffix
        self.on_decision = on_decision
        self._entries: list[LogEntry] = []
        self._by_url: dict[str, list[LogEntry]] = defaultdict(list)
        self._url_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._append_lock = threading.Lock()
        self._last_ts = -1
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self._open()

    @property
    def log_id(self) -> str:
        return self.principal.id

    @property
    def public_key(self) -> bytes:
        return self.principal.public_key

    def _open(self) -> None:
        entries, good = read_records(self.path)
        if self.path.exists() and good < self.path.stat().st_size:
            with open(self.path, "r+b") as fh:
                fh.truncate(good)
        for e in entries:
            self._entries.append(e)
            self._by_url[e.url].append(e)
            self._last_ts = max(self._last_ts, e.ts)

    def _url_lock(self, url: str) -> threading.Lock:
        with self._locks_guard:
            return self._url_locks[url]

    def submit(self, envelope: SignedEnvelope, developer_id: str | None = None,
               submitter: str | None = None) -> LogEntry:
        """Verify and append a signed manifest.

        Anyone may submit; the entry records the signing developer. The
        version must be strictly greater than the URL's latest.
        """
        try:
            verified = verify_envelope(envelope, self.registry, self.clock(), allow_cn_suffix=self.allow_cn_suffix)
        except EnvelopeError as exc:
            raise BadEnvelope(f"{type(exc).__name__}: {exc}") from exc
        if developer_id is not None and developer_id != verified.signer_id:
            raise BadEnvelope(f"envelope is signed by {verified.signer_id}, not {developer_id}")
        url = verified.manifest.url
        version = verified.manifest.manifest_version
        with self._url_lock(url):
            history = self._by_url.get(url, [])
            if history:
                try:
                    newer = compare_versions(version, history[-1].manifest_version) > 0
                except IncomparableVersions:
                    newer = False
                if not newer:
                    if self.on_decision:
                        self.on_decision(url, version, False)
                    raise NonMonotoneVersion(f"{url}: {version!r} does not follow {history[-1].manifest_version!r}")
            with self._append_lock:
                ts = max(self.clock(), self._last_ts + 1)
                digest = envelope.body_digest
                sig = self.principal.sign(entry_payload(url, version, digest, ts, envelope.signature))
                entry = LogEntry(url, verified.signer_id, version, envelope, ts, sig, self.log_id, submitter)
                if self.path is not None:
                    with open(self.path, "ab") as fh:
                        fh.write(_record(entry))
                        fh.flush()
                        os.fsync(fh.fileno())
                self._last_ts = ts
                self._entries.append(entry)
                self._by_url[url].append(entry)
            if self.on_decision:
                self.on_decision(url, version, True)
        return entry

    def latest(self, url: str) -> LogEntry | None:
        history = self._by_url.get(strip_query(url))
        return history[-1] if history else None

    def entry_at(self, url: str, ts: int) -> LogEntry | None:
        for e in self._by_url.get(strip_query(url), []):
            if e.ts == ts:
                return e
        return None

    def staple(self, url: str, now: int | None = None, window: int | None = None) -> StapledProof:
        entry = self.latest(url)
        if entry is None:
            raise NotFound(url)
        issued = self.clock() if now is None else now
        window = self.freshness_window if window is None else window
        proof = StapledProof(self.log_id, entry.url, entry.manifest_version, entry.manifest_digest, entry.ts,
                             entry.digest, issued, window, b"")
        return StapledProof(**{**proof.__dict__, "signature": self.principal.sign(proof.signed_payload())})

    def audit_history(self, url: str) -> list[LogEntry]:
        return list(self._by_url.get(strip_query(url), []))

    def entries(self) -> list[LogEntry]:
        return list(self._entries)

    def urls(self) -> list[str]:
        return sorted(self._by_url)

    def __len__(self) -> int:
        return len(self._entries)


def verify_entry(entry: LogEntry, log_public_key: bytes) -> bool:
    return verify_detached(log_public_key, entry.sig_l, entry.signed_payload())


def check_prefix_consistency(a: Iterable[LogEntry], b: Iterable[LogEntry]) -> bool:
    """True when one history is a prefix of the other (no equivocation).

    Entries are compared by (url, version, manifest digest); timestamps and
    log signatures legitimately differ between replicas.
    """
    ka = [(e.url, e.manifest_version, e.manifest_digest) for e in a]
    kb = [(e.url, e.manifest_version, e.manifest_digest) for e in b]
    n = min(len(ka), len(kb))
    return ka[:n] == kb[:n]


def update_frequency(history: Iterable[LogEntry], start: int, end: int, month: int = MONTH) -> float:
    """Updates per month within ``[start, end)``."""
    if end <= start:
        raise ValueError("empty interval")
    count = sum(1 for e in history if start <= e.ts < end)
    return count / ((end - start) / month)


# ---------------------------------------------------------------------------
# capacity


@dataclass(frozen=True)
class CapacityModel:
    """Storage cost model of a log.

    ``internal_overhead_bytes`` is the amortized per-entry share of the
    non-leaf nodes. 30 bytes reproduces the 137 billion figure for 100 TB
    with 700-byte leaves.
    """

    total_bytes: int
    leaf_bytes: int = 700
    internal_overhead_bytes: int = 30
    horizon_years: float = 5

    @property
    def per_entry_bytes(self) -> int:
        return self.leaf_bytes + self.internal_overhead_bytes


def capacity_estimate(model: CapacityModel) -> int:
    if model.total_bytes < 0:
        raise ValueError("total_bytes must be non-negative")
    return model.total_bytes // model.per_entry_bytes


def growth_entries(initial_urls: float = 10_000_000, updates_per_month: int = 8, growth_rate: float = 0.01,
                   years: float = 5) -> int:
    """Entries accumulated when every URL updates ``updates_per_month`` times
    and the URL population grows by ``growth_rate`` at each update.

    The log starts holding one entry per initial URL; each update round adds
    one entry per existing URL plus one per newly added URL.
    """
    urls = float(initial_urls)
    total = float(initial_urls)
    for _ in range(int(round(updates_per_month * 12 * years))):
        new = urls * growth_rate
        total += urls + new
        urls += new
    return int(math.floor(total))


_UNITS = {
    "b": 1, "kb": 10**3, "mb": 10**6, "gb": 10**9, "tb": 10**12, "pb": 10**15,
    "kib": 2**10, "mib": 2**20, "gib": 2**30, "tib": 2**40, "pib": 2**50,
}


def parse_size(text: str) -> int:
    """``"100TB"`` -> 10**14. Decimal SI units; IEC units (``TiB``) are binary."""
    s = text.strip().lower().replace(" ", "")
    i = len(s)
    while i and not (s[i - 1].isdigit() or s[i - 1] == "."):
        i -= 1
    number, unit = s[:i], s[i:] or "b"
    if unit not in _UNITS or not number:
        raise ValueError(f"cannot parse size {text!r}")
    return int(float(number) * _UNITS[unit]) if "." in number else int(number) * _UNITS[unit]

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Iterable, Iterator

# Protocol events the security checkers reason about.
D_UPLOADS = "DUploads"
LOG = "Log"
W_SEND = "WSend"
C_RECENT = "CRecent"
C_EXEC = "CExec"
C_EXEC_SESSION = "CExec'"
P_ACCEPT = "PAccept"
CORRUPTED = "Corrupted"
KU = "KU"
# Bookkeeping annotations.
SETUP = "Setup"
C_REQUEST = "CRequest"
REJECT = "Reject"
NOTE = "Note"


@dataclass(frozen=True)
class TraceEvent:
    index: int
    kind: str
    fields: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.fields[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.fields.get(key, default)

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "event": self.kind, **self.fields}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class Trace:
    """Append-only event sequence with strictly increasing indices."""

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self._events: list[TraceEvent] = []
        for e in events:
            self._append(e)

    def _append(self, e: TraceEvent) -> None:
        if self._events and e.index <= self._events[-1].index:
            raise ValueError("trace indices must strictly increase")
        self._events.append(e)

    def emit(self, kind: str, /, **fields: Any) -> TraceEvent:
        e = TraceEvent(len(self._events), kind, fields)
        self._events.append(e)
        return e

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, i: int) -> TraceEvent:
        return self._events[i]

    def of(self, *kinds: str) -> list[TraceEvent]:
        return [e for e in self._events if e.kind in kinds]

    @property
    def setup(self) -> dict[str, Any]:
        for e in self._events:
            if e.kind == SETUP:
                return e.fields
        return {}

    def to_ndjson(self) -> str:
        return "".join(e.to_json() + "\n" for e in self._events)

    @classmethod
    def from_ndjson(cls, text: str) -> Trace:
        events = []
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                idx, kind = d.pop("index"), d.pop("event")
                events.append(TraceEvent(idx, kind, d))
        return cls(events)

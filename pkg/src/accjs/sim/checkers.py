"""Post-hoc security-property checks over simulation traces.

Each checker returns a :class:`CheckResult`; a counterexample names the
index of the first offending event.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable

from . import trace as ev
from .trace import Trace, TraceEvent

HOLDS = "holds"
COUNTEREXAMPLE = "counterexample"
NOT_APPLICABLE = "not-applicable"


@dataclass(frozen=True)
class CheckResult:
    status: str
    index: int | None = None
    detail: str = ""

    @property
    def holds(self) -> bool:
        return self.status == HOLDS

    def to_dict(self) -> dict[str, Any]:
        return {"status": self.status, "index": self.index, "detail": self.detail}


@dataclass(frozen=True)
class EndToEndResult:
    necessity: CheckResult
    sufficiency_witness: bool

    def to_dict(self) -> dict[str, Any]:
        return {"necessity": self.necessity.to_dict(),
                "sufficiency_witness": "found" if self.sufficiency_witness else "absent"}


def _events(trace: Trace | Iterable[TraceEvent]) -> list[TraceEvent]:
    return list(trace)


def _setup(events: list[TraceEvent]) -> dict[str, Any]:
    for e in events:
        if e.kind == ev.SETUP:
            return e.fields
    return {}


def _before(events: list[TraceEvent], limit: int, kind: str, **match: Any) -> bool:
    return any(e.kind == kind and e.index < limit and all(e.get(k) == v for k, v in match.items())
               for e in events)


def _corrupted_before(events: list[TraceEvent], limit: int) -> set[str]:
    return {e["principal"] for e in events if e.kind == ev.CORRUPTED and e.index < limit}


def check_authentication_of_origin(trace, *, also_trusted: Iterable[str] = ()) -> CheckResult:
    """Executed code was uploaded by its developer, or the developer was corrupted
    and the adversary knew the URL and manifest.

    ``also_trusted`` weakens the property: corruption of any of those
    principals is accepted as an explanation too.
    """
    events = _events(trace)
    extra = set(also_trusted)
    for e in events:
        if e.kind != ev.C_EXEC:
            continue
        d, url, phi = e["developer"], e["url"], e["manifest"]
        if _before(events, e.index, ev.D_UPLOADS, developer=d, url=url, manifest=phi):
            continue
        corrupted = _corrupted_before(events, e.index)
        if d in corrupted and _before(events, e.index, ev.KU, term=["url", url]) and \
                _before(events, e.index, ev.KU, term=["manifest", phi]):
            continue
        if corrupted & extra:
            continue
        return CheckResult(COUNTEREXAMPLE, e.index, f"execution of {phi[:16] if phi else phi} without upload")
    return CheckResult(HOLDS)


def check_authentication_of_origin_code_verify(trace) -> CheckResult:
    """Weakened origin property: developer or broker corruption explains execution."""
    broker = _setup(_events(trace)).get("broker", "broker:codeverify")
    return check_authentication_of_origin(trace, also_trusted=[broker])


def check_transparency(trace) -> CheckResult:
    """Code executed in session ``sid`` was logged at ``ts`` and that entry was
    confirmed recent in the same session."""
    events = _events(trace)
    if _setup(events).get("variant") == "CodeVerify":
        return CheckResult(NOT_APPLICABLE, detail="no public log")
    for e in events:
        if e.kind != ev.C_EXEC_SESSION:
            continue
        if not _before(events, e.index, ev.LOG, url=e["url"], manifest=e["manifest"], ts=e["ts"]):
            return CheckResult(COUNTEREXAMPLE, e.index, "executed code was never logged")
        if not _before(events, e.index, ev.C_RECENT, sid=e["sid"], ts=e["ts"]):
            return CheckResult(COUNTEREXAMPLE, e.index, f"session {e['sid']} did not confirm freshness")
    return CheckResult(HOLDS)


def check_accountability(trace) -> CheckResult:
    """An accepted claim is backed by a log entry and by the server's send,
    unless the server was corrupted and the adversary knew the response."""
    events = _events(trace)
    for e in events:
        if e.kind != ev.P_ACCEPT:
            continue
        w, url, phi, n, ts = e["webserver"], e["url"], e["manifest"], e["nonce"], e["ts"]
        if not _before(events, e.index, ev.LOG, url=url, manifest=phi, ts=ts):
            return CheckResult(COUNTEREXAMPLE, e.index, "accepted claim without log entry")
        if _before(events, e.index, ev.W_SEND, webserver=w, url=url, manifest=phi, nonce=n):
            continue
        if w in _corrupted_before(events, e.index) and \
                _before(events, e.index, ev.KU, term=["response", w, url, phi, n]):
            continue
        return CheckResult(COUNTEREXAMPLE, e.index, "accepted claim for a response the server never sent")
    return CheckResult(HOLDS)


def check_end_to_end(trace) -> EndToEndResult:
    """Necessity: malicious execution implies earlier developer corruption.
    Sufficiency witness: malicious execution where only the developer is corrupted."""
    events = _events(trace)
    setup = _setup(events)
    label = setup.get("malicious_label", "malicious")
    developer = setup.get("developer")
    necessity = CheckResult(HOLDS)
    witness = False
    for e in events:
        if e.kind != ev.C_EXEC or e.get("label") != label:
            continue
        corrupted = _corrupted_before(events, e.index)
        if e["developer"] not in corrupted and necessity.holds:
            necessity = CheckResult(COUNTEREXAMPLE, e.index, "malicious code ran without developer corruption")
        all_corrupted = {x["principal"] for x in events if x.kind == ev.CORRUPTED}
        if all_corrupted == {developer}:
            witness = True
    return EndToEndResult(necessity, witness)


def check_nonce_uniqueness(trace) -> CheckResult:
    """Honest requests never reuse a nonce, and no session executes twice."""
    events = _events(trace)
    seen: Counter = Counter()
    for e in events:
        if e.kind == ev.C_REQUEST:
            seen[e["nonce"]] += 1
            if seen[e["nonce"]] > 1:
                return CheckResult(COUNTEREXAMPLE, e.index, "nonce reused")
    executed: Counter = Counter()
    for e in events:
        if e.kind == ev.C_EXEC:
            executed[(e.get("client"), e.get("sid"))] += 1
            if executed[(e.get("client"), e.get("sid"))] > 1:
                return CheckResult(COUNTEREXAMPLE, e.index, "session executed twice")
    return CheckResult(HOLDS)


def check_all(trace) -> dict[str, Any]:
    """Every checker that applies to the trace's variant."""
    events = _events(trace)
    cv = _setup(events).get("variant") == "CodeVerify"
    out: dict[str, Any] = {
        "authentication_of_origin": check_authentication_of_origin(events).to_dict(),
        "transparency": check_transparency(events).to_dict(),
        "accountability": check_accountability(events).to_dict(),
        "end_to_end": check_end_to_end(events).to_dict(),
        "nonce_uniqueness": check_nonce_uniqueness(events).to_dict(),
    }
    if cv:
        out["authentication_of_origin_weakened"] = check_authentication_of_origin_code_verify(events).to_dict()
    return out

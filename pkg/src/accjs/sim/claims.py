"""Client evidence of delivery and its public verification."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from ..crypto import EnvelopeError, KeyRegistry, SignedEnvelope, verify_detached, verify_envelope
from ..measurement import evaluate, measure
from ..translog import StapledProof, TransparencyLog
from .terms import Signed, encode_term

RESPONSE_TAG = "response"
REQUEST_TAG = "request"


class ClaimError(Exception):
    pass


class BadClaimSignature(ClaimError):
    pass


class NonceMismatch(ClaimError):
    pass


class NoLogEntry(ClaimError):
    pass


class ClaimOutcome(str, Enum):
    CONSISTENT = "ConsistentDelivery"
    VIOLATION = "ProvenViolation"


def response_body(html: bytes, nonce: str, envelope: SignedEnvelope, staple: StapledProof) -> tuple:
    """The tuple a web server signs when answering a request."""
    return (RESPONSE_TAG, html, nonce, envelope, staple)


@dataclass(frozen=True)
class Claim:
    """What a client keeps after a delivery.

    ``response`` is the server-signed response; ``request`` the client's
    signed request. Code Verify deliveries carry neither signature and
    have ``response``/``staple`` set to ``None``.
    """

    server_id: str
    url: str
    html: bytes
    nonce: str
    envelope: SignedEnvelope | None
    staple: StapledProof | None
    response: Signed | None
    request: Signed | None
    ts: int | None = None

    def to_dict(self) -> dict[str, Any]:
        def signed(s: Signed | None):
            if s is None:
                return None
            return {"signer": s.signer, "sig": base64.b64encode(s.sig).decode("ascii")}
        return {
            "server_id": self.server_id, "url": self.url,
            "html": base64.b64encode(self.html).decode("ascii"), "nonce": self.nonce,
            "envelope": self.envelope.to_dict() if self.envelope else None,
            "staple": self.staple.to_dict() if self.staple else None,
            "response_sig": signed(self.response), "request_sig": signed(self.request),
            "request_client": self.request.body[1] if self.request else None, "ts": self.ts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Claim:
        html = base64.b64decode(d["html"])
        env = SignedEnvelope.from_dict(d["envelope"]) if d.get("envelope") else None
        staple = StapledProof.from_dict(d["staple"]) if d.get("staple") else None
        response = request = None
        if d.get("response_sig") and env is not None and staple is not None:
            response = Signed(d["response_sig"]["signer"], response_body(html, d["nonce"], env, staple),
                              base64.b64decode(d["response_sig"]["sig"]))
        if d.get("request_sig"):
            request = Signed(d["request_sig"]["signer"], (REQUEST_TAG, d["request_client"], d["url"], d["nonce"]),
                             base64.b64decode(d["request_sig"]["sig"]))
        return cls(d["server_id"], d["url"], html, d["nonce"], env, staple, response, request, d.get("ts"))


def request_body(client_id: str, url: str, nonce: str) -> tuple:
    return (REQUEST_TAG, client_id, url, nonce)


@dataclass(frozen=True)
class ClaimVerdict:
    outcome: ClaimOutcome
    server_id: str
    url: str
    manifest_digest: str
    nonce: str
    ts: int
    reasons: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict[str, Any]:
        return {"outcome": self.outcome.value, "server_id": self.server_id, "url": self.url,
                "manifest_digest": self.manifest_digest, "nonce": self.nonce, "ts": self.ts,
                "reasons": list(self.reasons)}


def _channel_key(registry: KeyRegistry, pid: str) -> bytes:
    try:
        return registry.channel_key(pid)
    except EnvelopeError as exc:
        raise BadClaimSignature(f"no channel key for {pid}: {exc}") from exc


def verify_claim(claim: Claim, log: TransparencyLog, registry: KeyRegistry) -> ClaimVerdict:
    """Publicly check a claim.

    Signatures, nonce binding and the log entry must all check out, or an
    error is raised. The verdict then says whether the delivered content
    complies with the logged manifest.
    """
    if claim.response is None or claim.staple is None or claim.envelope is None or claim.request is None:
        raise BadClaimSignature("claim carries no server signature, staple or signed request")
    if claim.response.signer != claim.server_id:
        raise BadClaimSignature("response not signed by the named server")
    if claim.response.body != response_body(claim.html, claim.nonce, claim.envelope, claim.staple):
        raise BadClaimSignature("signed response does not cover the claimed content")
    if not verify_detached(_channel_key(registry, claim.server_id), claim.response.sig, encode_term(claim.response.body)):
        raise BadClaimSignature("server signature does not verify")
    if not verify_detached(log.public_key, claim.staple.signature, claim.staple.signed_payload()):
        raise BadClaimSignature("log signature does not verify")
    req = claim.request
    if len(req.body) != 4 or req.body[0] != REQUEST_TAG or req.signer != req.body[1]:
        raise BadClaimSignature("malformed client request")
    if not verify_detached(_channel_key(registry, req.signer), req.sig, encode_term(req.body)):
        raise BadClaimSignature("client request signature does not verify")
    if req.body[3] != claim.nonce or req.body[2] != claim.url:
        raise NonceMismatch("request and response nonces differ")

    entry = log.entry_at(claim.url, claim.staple.entry_ts)
    if entry is None or entry.manifest_digest != claim.staple.manifest_digest:
        raise NoLogEntry(f"no log entry for {claim.url} at {claim.staple.entry_ts}")

    reasons: list[str] = []
    if claim.envelope.body_digest != entry.manifest_digest:
        reasons.append("served manifest differs from the logged one")
    try:
        verified = verify_envelope(claim.envelope, registry, None)
        verdict = evaluate(measure(claim.html, claim.url), verified.manifest)
        reasons.extend(f"{v.code} at {v.ref}" for v in verdict.violations)
    except EnvelopeError as exc:
        reasons.append(f"served envelope invalid: {exc}")
    newer = [e for e in log.audit_history(claim.url) if entry.ts < e.ts <= claim.staple.issued_ts]
    if newer:
        reasons.append(f"entry at {entry.ts} was superseded before the staple was issued")
    outcome = ClaimOutcome.VIOLATION if reasons else ClaimOutcome.CONSISTENT
    return ClaimVerdict(outcome, claim.server_id, claim.url, entry.manifest_digest.hex(), claim.nonce,
                        entry.ts, tuple(reasons))

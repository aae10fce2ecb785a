"""Message terms exchanged between simulated principals.

A term is an atom (``str``, ``bytes``, ``int``, ``None``), a tuple of terms,
a channel signature (:class:`Signed`), or one of the crypto-layer objects
(:class:`SignedEnvelope`, :class:`StapledProof`) that carry their own
signature scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterator, Union

from ..crypto import SignedEnvelope, encode_tuple
from ..translog import StapledProof

Term = Union[str, bytes, int, None, tuple, "Signed", SignedEnvelope, StapledProof]


@dataclass(frozen=True)
class Signed:
    """``body`` signed by ``signer`` over ``encode_term(body)``."""

    signer: str
    body: tuple
    sig: bytes

    @property
    def message(self) -> bytes:
        return encode_term(self.body)


def encode_term(t: Any) -> bytes:
    if isinstance(t, tuple):
        return encode_tuple(*(encode_term(x) for x in t))
    if isinstance(t, Signed):
        return encode_tuple(b"signed", t.signer, encode_term(t.body), t.sig)
    if isinstance(t, SignedEnvelope):
        return t.to_json().encode("utf-8")
    if isinstance(t, StapledProof):
        return encode_tuple(b"staple", t.signed_payload(), t.signature)
    if t is None:
        return b""
    return encode_tuple(t)


def signatures_in(t: Any, envelope_signer) -> Iterator[tuple[str, bytes, bytes]]:
    """Every (signer, signed message, signature) triple carried by ``t``.

    ``envelope_signer`` maps an envelope's cert id to a principal id.
    """
    if isinstance(t, tuple):
        for x in t:
            yield from signatures_in(x, envelope_signer)
    elif isinstance(t, Signed):
        yield t.signer, t.message, t.sig
        yield from signatures_in(t.body, envelope_signer)
    elif isinstance(t, SignedEnvelope):
        yield envelope_signer(t.cert_id), t.signed_payload(), t.signature
    elif isinstance(t, StapledProof):
        yield t.log_id, t.signed_payload(), t.signature


def atoms_in(t: Any) -> Iterator[Any]:
    """Plain atoms, not looking inside signatures' own byte strings."""
    if isinstance(t, tuple):
        for x in t:
            yield from atoms_in(x)
    elif isinstance(t, Signed):
        yield t.signer
        yield from atoms_in(t.body)
    elif isinstance(t, (SignedEnvelope, StapledProof)) or t is None:
        return
    else:
        yield t


def subterms(t: Any) -> Iterator[Any]:
    yield t
    if isinstance(t, tuple):
        for x in t:
            yield from subterms(x)
    elif isinstance(t, Signed):
        yield from subterms(t.body)


def describe(t: Any) -> Any:
    """JSON-friendly rendering for traces."""
    if isinstance(t, tuple):
        return [describe(x) for x in t]
    if isinstance(t, Signed):
        return {"signed_by": t.signer, "body": describe(t.body)}
    if isinstance(t, SignedEnvelope):
        return {"envelope": t.request_url, "cert_id": t.cert_id}
    if isinstance(t, StapledProof):
        return {"staple": t.url, "version": t.manifest_version, "issued": t.issued_ts}
    if isinstance(t, bytes):
        return t.hex() if len(t) <= 32 else f"<{len(t)} bytes>"
    return t

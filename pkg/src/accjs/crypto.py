"""Keys, certificates, detached signatures and signed manifest envelopes.

The envelope is a simplified signed exchange: it binds a manifest body to
the URL it was requested from and to a validity window, and is signed by
a developer key whose certificate carries the exchange-signing flag.
Signatures are Ed25519 throughout.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable
from urllib.parse import quote

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from .manifest import Manifest, ManifestError, canonical_bytes, parse_manifest, strip_query, url_host

SIGNATURE_ALGORITHM = "ed25519"
DAY = 86_400
MAX_EXCHANGE_VALIDITY = 90 * DAY
ENVELOPE_CONTEXT = b"accjs-envelope/1"
MANIFEST_CONTENT_TYPE = "application/manifest+json"


class Role(str, Enum):
    DEVELOPER = "developer"
    WEB_SERVER = "webserver"
    CLIENT = "client"
    LOG = "log"
    BROKER = "broker"


class EnvelopeError(Exception):
    pass


class BadSignature(EnvelopeError):
    pass


class Expired(EnvelopeError):
    pass


class ExpiredCert(EnvelopeError):
    pass


class CommonNameMismatch(EnvelopeError):
    pass


class UrlMismatch(EnvelopeError):
    pass


class WrongCertUsage(EnvelopeError):
    pass


class ValidityTooLong(EnvelopeError):
    pass


class UnknownCertificate(EnvelopeError):
    pass


class MalformedEnvelope(EnvelopeError):
    pass


# ---------------------------------------------------------------------------
# tuple encoding


def _field_bytes(value: Any) -> bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, str):
        return value.encode("utf-8")
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        if value < 0:
            raise ValueError("negative integers are not encodable")
        return value.to_bytes(8, "big")
    if isinstance(value, (tuple, list)):
        return encode_tuple(*value)
    if value is None:
        return b""
    raise TypeError(f"cannot encode {type(value).__name__}")


def encode_tuple(*fields: Any) -> bytes:
    """``len(field) || field`` per field, lengths as 8-byte big-endian.

    str is UTF-8, int is 8-byte big-endian, None is empty and nested
    tuples are encoded recursively before being length-prefixed.
    """
    out = bytearray()
    for f in fields:
        data = _field_bytes(f)
        out += len(data).to_bytes(8, "big")
        out += data
    return bytes(out)


def decode_tuple(data: bytes) -> list[bytes]:
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise ValueError("truncated length prefix")
        n = int.from_bytes(data[pos:pos + 8], "big")
        pos += 8
        if pos + n > len(data):
            raise ValueError("truncated field")
        fields.append(data[pos:pos + n])
        pos += n
    return fields


# ---------------------------------------------------------------------------
# principals and certificates


@dataclass
class Principal:
    id: str
    role: Role
    common_name: str
    private_key: Ed25519PrivateKey = field(repr=False)
    corrupted: bool = False

    @property
    def public_key(self) -> bytes:
        return self.private_key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)

    def private_bytes(self) -> bytes:
        return self.private_key.private_bytes(
            serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        )

    def sign(self, message: bytes) -> bytes:
        return self.private_key.sign(message)


@dataclass(frozen=True)
class CertRecord:
    cert_id: str
    principal_id: str
    role: Role
    subject_common_name: str
    public_key: bytes
    can_sign_exchanges: bool
    not_before: int
    not_after: int
    cert_url: str = ""

    def valid_at(self, now: int) -> bool:
        return self.not_before <= now <= self.not_after

    def to_dict(self) -> dict[str, Any]:
        return {
            "cert_id": self.cert_id, "principal_id": self.principal_id, "role": self.role.value,
            "subject_common_name": self.subject_common_name,
            "public_key": base64.b64encode(self.public_key).decode(),
            "can_sign_exchanges": self.can_sign_exchanges,
            "not_before": self.not_before, "not_after": self.not_after, "cert_url": self.cert_url,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CertRecord:
        return cls(
            cert_id=d["cert_id"], principal_id=d["principal_id"], role=Role(d["role"]),
            subject_common_name=d["subject_common_name"], public_key=base64.b64decode(d["public_key"]),
            can_sign_exchanges=d["can_sign_exchanges"], not_before=d["not_before"],
            not_after=d["not_after"], cert_url=d.get("cert_url", ""),
        )


class KeyRegistry:
    """Root of trust: certificates by id, plus optional custody of private keys.

    Reads are lock-free; insertion is serialized.
    """

    def __init__(self) -> None:
        self._certs: dict[str, CertRecord] = {}
        self._by_principal: dict[str, list[str]] = {}
        self._principals: dict[str, Principal] = {}
        self._lock = threading.Lock()

    def add(self, cert: CertRecord, principal: Principal | None = None) -> None:
        with self._lock:
            if cert.cert_id in self._certs:
                raise ValueError(f"duplicate certificate id {cert.cert_id!r}")
            self._certs = {**self._certs, cert.cert_id: cert}
            ids = self._by_principal.get(cert.principal_id, []) + [cert.cert_id]
            self._by_principal = {**self._by_principal, cert.principal_id: ids}
            if principal is not None:
                self._principals = {**self._principals, principal.id: principal}

    def get(self, cert_id: str) -> CertRecord | None:
        return self._certs.get(cert_id)

    def certs(self) -> list[CertRecord]:
        return list(self._certs.values())

    def certs_for(self, principal_id: str) -> list[CertRecord]:
        return [self._certs[c] for c in self._by_principal.get(principal_id, [])]

    def cert_for(self, principal_id: str, *, exchange: bool | None = None) -> CertRecord | None:
        for cert in reversed(self.certs_for(principal_id)):
            if exchange is None or cert.can_sign_exchanges == exchange:
                return cert
        return None

    def channel_key(self, principal_id: str) -> bytes:
        """Public key for verifying channel (non-exchange) signatures of a principal."""
        certs = self.certs_for(principal_id)
        if not certs:
            raise UnknownCertificate(principal_id)
        cert = certs[-1]
        if cert.can_sign_exchanges:
            raise WrongCertUsage(f"{principal_id} holds an exchange-signing certificate")
        return cert.public_key

    def principal(self, principal_id: str) -> Principal | None:
        return self._principals.get(principal_id)

    def principals(self) -> list[Principal]:
        return list(self._principals.values())

    # persistence -----------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        (d / "keys").mkdir(parents=True, exist_ok=True)
        (d / "registry.json").write_text(
            json.dumps({"certs": [c.to_dict() for c in self._certs.values()]}, indent=2), encoding="utf-8"
        )
        for p in self._principals.values():
            # The id is stored inside the file; the name only has to be safe.
            (d / "keys" / f"{quote(p.id, safe='')}.json").write_text(json.dumps({
                "id": p.id, "role": p.role.value, "common_name": p.common_name,
                "private_key": p.private_bytes().hex(), "corrupted": p.corrupted,
            }, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> KeyRegistry:
        d = Path(directory)
        reg = cls()
        keys = {}
        if (d / "keys").is_dir():
            for path in sorted((d / "keys").glob("*.json")):
                k = json.loads(path.read_text(encoding="utf-8"))
                keys[k["id"]] = Principal(
                    id=k["id"], role=Role(k["role"]), common_name=k["common_name"],
                    private_key=Ed25519PrivateKey.from_private_bytes(bytes.fromhex(k["private_key"])),
                    corrupted=k.get("corrupted", False),
                )
        for c in json.loads((d / "registry.json").read_text(encoding="utf-8"))["certs"]:
            cert = CertRecord.from_dict(c)
            reg.add(cert, keys.pop(cert.principal_id, None))
        return reg


def keygen(
    role: Role,
    common_name: str,
    validity: int,
    *,
    registry: KeyRegistry,
    now: int = 0,
    principal_id: str | None = None,
    seed: bytes | None = None,
    can_sign_exchanges: bool | None = None,
    cert_url: str = "",
) -> tuple[Principal, CertRecord]:
    """Create a key pair and register its certificate.

    ``seed`` (any bytes) makes the key pair deterministic. Developer
    certificates sign exchanges by default and are limited to 90 days.
    """
    if can_sign_exchanges is None:
        can_sign_exchanges = role is Role.DEVELOPER
    if can_sign_exchanges and validity > MAX_EXCHANGE_VALIDITY:
        raise ValidityTooLong(f"exchange-signing certificates are limited to 90 days, got {validity / DAY:g}")
    if validity <= 0:
        raise ValueError("validity must be positive")
    if seed is not None:
        key = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(b"accjs-keygen" + seed).digest())
    else:
        key = Ed25519PrivateKey.generate()
    principal_id = principal_id or f"{role.value}:{common_name}"
    principal = Principal(principal_id, role, common_name.lower(), key)
    n = len(registry.certs_for(principal_id))
    cert = CertRecord(
        cert_id=f"{principal_id}#{n}", principal_id=principal_id, role=role,
        subject_common_name=common_name.lower(), public_key=principal.public_key,
        can_sign_exchanges=can_sign_exchanges, not_before=now, not_after=now + validity,
        cert_url=cert_url or f"https://certs.invalid/{principal_id}/{n}",
    )
    registry.add(cert, principal)
    return principal, cert


def sign_detached(p: Principal, message: bytes) -> bytes:
    return p.sign(message)


def verify_detached(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def cn_matches(common_name: str, host: str, *, allow_suffix: bool = False) -> bool:
    """Exact host match; a leading ``www.`` label on the host is not significant."""
    cn = common_name.lower().rstrip(".")
    host = host.lower().rstrip(".")
    if host == cn or (host.startswith("www.") and host[4:] == cn):
        return True
    return allow_suffix and host.endswith("." + cn)


# ---------------------------------------------------------------------------
# envelopes


@dataclass(frozen=True)
class SignedEnvelope:
    request_url: str
    response_headers: tuple[tuple[str, str], ...]
    body: bytes
    date: int
    expires: int
    cert_id: str
    cert_url: str
    validity_url: str
    signature: bytes

    def signed_payload(self) -> bytes:
        return envelope_payload(self.request_url, self.response_headers, self.body, self.date,
                                self.expires, self.cert_id, self.cert_url, self.validity_url)

    @property
    def body_digest(self) -> bytes:
        return hashlib.sha256(self.body).digest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_url": self.request_url,
            "response_headers": [list(h) for h in self.response_headers],
            "body": base64.b64encode(self.body).decode("ascii"),
            "date": self.date,
            "expires": self.expires,
            "cert_id": self.cert_id,
            "cert_url": self.cert_url,
            "validity_url": self.validity_url,
            "signature": base64.b64encode(self.signature).decode("ascii"),
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, separators=(",", ":") if indent is None else None)

    def to_header(self) -> str:
        """Base64 form carried in the ``x-acc-js-man`` response header."""
        return base64.b64encode(self.to_json().encode("utf-8")).decode("ascii")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SignedEnvelope:
        try:
            return cls(
                request_url=d["request_url"],
                response_headers=tuple((str(k), str(v)) for k, v in d["response_headers"]),
                body=base64.b64decode(d["body"], validate=True),
                date=int(d["date"]), expires=int(d["expires"]),
                cert_id=d["cert_id"], cert_url=d.get("cert_url", ""),
                validity_url=d.get("validity_url", ""),
                signature=base64.b64decode(d["signature"], validate=True),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedEnvelope(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str | bytes) -> SignedEnvelope:
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, UnicodeDecodeError, AttributeError) as exc:
            raise MalformedEnvelope(str(exc)) from exc

    @classmethod
    def from_header(cls, value: str) -> SignedEnvelope:
        try:
            raw = base64.b64decode(value.strip(), validate=True)
        except ValueError as exc:
            raise MalformedEnvelope("x-acc-js-man is not base64") from exc
        return cls.from_json(raw)


def envelope_payload(request_url: str, headers: Iterable[tuple[str, str]], body: bytes, date: int,
                     expires: int, cert_id: str, cert_url: str, validity_url: str) -> bytes:
    return encode_tuple(ENVELOPE_CONTEXT, request_url, tuple(tuple(h) for h in headers), body, date,
                        expires, cert_id, cert_url, validity_url)


@dataclass(frozen=True)
class VerifiedManifest:
    manifest: Manifest
    signer_common_name: str
    signer_id: str
    envelope: SignedEnvelope


def sign_envelope(
    dev: Principal,
    cert: CertRecord,
    manifest: Manifest,
    now: int,
    ttl: int,
    *,
    allow_cn_suffix: bool = False,
    validity_url: str = "",
) -> SignedEnvelope:
    if dev.role is not Role.DEVELOPER:
        raise WrongCertUsage(f"{dev.id} is not a developer")
    if not cert.can_sign_exchanges or cert.principal_id != dev.id:
        raise WrongCertUsage(f"certificate {cert.cert_id} cannot sign exchanges for {dev.id}")
    if not cn_matches(cert.subject_common_name, url_host(manifest.url), allow_suffix=allow_cn_suffix):
        raise CommonNameMismatch(f"{cert.subject_common_name!r} may not sign for {manifest.url!r}")
    if not cert.valid_at(now):
        raise ExpiredCert(f"certificate {cert.cert_id} is not valid at {now}")
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    body = canonical_bytes(manifest)
    headers = (("content-type", MANIFEST_CONTENT_TYPE),)
    request_url = strip_query(manifest.url)
    payload = envelope_payload(request_url, headers, body, now, now + ttl, cert.cert_id, cert.cert_url, validity_url)
    return SignedEnvelope(request_url, headers, body, now, now + ttl, cert.cert_id, cert.cert_url,
                          validity_url, dev.sign(payload))


def verify_envelope(
    env: SignedEnvelope,
    registry: KeyRegistry,
    now: int | None,
    *,
    allow_cn_suffix: bool = False,
    strict: bool = True,
    allow_seq_gaps: bool = False,
) -> VerifiedManifest:
    """Check signature, validity window, URL binding, common name and cert usage.

    ``now=None`` skips the time checks; claim verification uses that to
    inspect historical evidence.
    """
    cert = registry.get(env.cert_id)
    if cert is None:
        raise UnknownCertificate(env.cert_id)
    if not cert.can_sign_exchanges:
        raise WrongCertUsage(f"certificate {cert.cert_id} is not an exchange-signing certificate")
    if not verify_detached(cert.public_key, env.signature, env.signed_payload()):
        raise BadSignature("envelope signature does not verify")
    if now is not None:
        if not env.date <= now <= env.expires:
            raise Expired(f"envelope valid in [{env.date}, {env.expires}], now {now}")
        if not cert.valid_at(now):
            raise Expired(f"certificate {cert.cert_id} expired")
    try:
        manifest = parse_manifest(env.body, strict=strict, allow_seq_gaps=allow_seq_gaps)
    except ManifestError as exc:
        raise MalformedEnvelope(f"envelope body is not a valid manifest: {exc}") from exc
    if strip_query(env.request_url) != manifest.url:
        raise UrlMismatch(f"envelope for {env.request_url!r} carries manifest for {manifest.url!r}")
    if not cn_matches(cert.subject_common_name, url_host(manifest.url), allow_suffix=allow_cn_suffix):
        raise CommonNameMismatch(f"{cert.subject_common_name!r} may not sign for {manifest.url!r}")
    return VerifiedManifest(manifest, cert.subject_common_name, cert.principal_id, env)


def manifest_digest(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()

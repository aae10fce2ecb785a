"""Subresource Integrity hashes (``<alg>-<base64digest>``)."""

from __future__ import annotations

import base64
import binascii
import hashlib
from dataclasses import dataclass

DIGEST_SIZES = {"sha256": 32, "sha384": 48, "sha512": 64}
DEFAULT_ALGORITHM = "sha256"


class UnsupportedAlgorithm(ValueError):
    pass


class InvalidSriHash(ValueError):
    pass


@dataclass(frozen=True, order=True)
class SriHash:
    algorithm: str
    digest: bytes

    def __post_init__(self) -> None:
        if self.algorithm not in DIGEST_SIZES:
            raise UnsupportedAlgorithm(self.algorithm)
        if len(self.digest) != DIGEST_SIZES[self.algorithm]:
            raise InvalidSriHash(
                f"{self.algorithm} digest must be {DIGEST_SIZES[self.algorithm]} bytes, "
                f"got {len(self.digest)}"
            )

    @classmethod
    def parse(cls, text: str) -> SriHash:
        alg, sep, b64 = text.strip().partition("-")
        if not sep:
            raise InvalidSriHash(f"missing '-' separator in {text!r}")
        alg = alg.lower()
        if alg not in DIGEST_SIZES:
            raise UnsupportedAlgorithm(alg)
        try:
            digest = base64.b64decode(b64, validate=True)
        except binascii.Error as exc:
            raise InvalidSriHash(f"bad base64 in {text!r}") from exc
        return cls(alg, digest)

    def __str__(self) -> str:
        return f"{self.algorithm}-{base64.b64encode(self.digest).decode('ascii')}"

    def verifies(self, data: bytes) -> bool:
        return compute_sri(data, self.algorithm) == self


def compute_sri(data: bytes, alg: str = DEFAULT_ALGORITHM) -> SriHash:
    """Hash ``data`` the way browsers compute integrity metadata."""
    if alg not in DIGEST_SIZES:
        raise UnsupportedAlgorithm(alg)
    return SriHash(alg, hashlib.new(alg, data).digest())


def parse_integrity(value: str | None) -> list[SriHash]:
    """Parse an ``integrity`` attribute, skipping tokens with unknown algorithms.

    Options after ``?`` are dropped, as in the SRI metadata grammar.
    """
    if not value:
        return []
    out = []
    for token in value.split():
        token = token.split("?", 1)[0]
        try:
            out.append(SriHash.parse(token))
        except (UnsupportedAlgorithm, InvalidSriHash):
            continue
    return out

"""Dolev-Yao adversary knowledge and the derivability audit applied to injections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from ..crypto import Principal, verify_detached
from .terms import atoms_in, signatures_in, subterms

# Short atoms (tags, small integers, timestamps) are assumed guessable.
GUESSABLE_LEN = 8


class AdversaryUnsound(RuntimeError):
    """An injected message was not derivable from the adversary's knowledge."""


@dataclass
class AdversaryState:
    knowledge: set = field(default_factory=set)
    signatures: set = field(default_factory=set)
    keys: dict[str, Principal] = field(default_factory=dict)
    corrupted: set[str] = field(default_factory=set)

    def learn(self, term: Any, envelope_signer: Callable[[str], str]) -> None:
        for sub in subterms(term):
            try:
                self.knowledge.add(sub)
            except TypeError:
                pass
        self.knowledge.update(atoms_in(term))
        for _, msg, sig in signatures_in(term, envelope_signer):
            self.signatures.add((msg, sig))

    def corrupt(self, principals: list[Principal]) -> None:
        for p in principals:
            self.keys[p.id] = p
            self.corrupted.add(p.id)

    def knows_atom(self, a: Any) -> bool:
        if isinstance(a, int) or a is None:
            return True
        if isinstance(a, (str, bytes)) and len(a) <= GUESSABLE_LEN:
            return True
        return a in self.knowledge

    def audit(self, term: Any, public_keys: Callable[[str], bytes | None],
              envelope_signer: Callable[[str], str]) -> None:
        """Raise :class:`AdversaryUnsound` unless ``term`` is derivable.

        Derivable means: every atom is known or guessable, and every *valid*
        signature was either observed or made with a leaked key. Invalid
        signatures are junk the adversary can always produce.
        """
        for a in atoms_in(term):
            if not self.knows_atom(a):
                raise AdversaryUnsound(f"unknown atom {a!r:.60}")
        for signer, msg, sig in signatures_in(term, envelope_signer):
            pk = public_keys(signer)
            if pk is None or not verify_detached(pk, sig, msg):
                continue
            if (msg, sig) in self.signatures or signer in self.keys:
                continue
            raise AdversaryUnsound(f"forged signature of {signer}")

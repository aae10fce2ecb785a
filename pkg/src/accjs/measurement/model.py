from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..manifest import ElementKind, LoadMode, SandboxPolicy, SrcType
from ..sri import SriHash, compute_sri


@dataclass(frozen=True)
class ActiveElement:
    """One piece of active content observed on a page.

    ``content`` holds the bytes the content hash is computed over (script
    text, handler value, srcdoc, fetched body) so a check can rehash with
    whatever algorithm a manifest declares. It is not part of the JSON form.
    """

    kind: ElementKind
    order_index: int
    src: str | None = None
    src_type: SrcType | None = None
    content: bytes | None = None
    content_hash: SriHash | None = None
    integrity: tuple[SriHash, ...] = ()
    integrity_attr: str | None = None
    sandbox: SandboxPolicy | None = None
    crossorigin: str | None = None
    load: LoadMode = LoadMode.SYNC
    dynamic: bool = False
    persistent: bool = True
    children: tuple[ActiveElement, ...] | None = None
    handler: str | None = None
    tag: str = ""

    def hash_matches(self, expected: SriHash) -> bool | None:
        """Compare against an expected hash; None when there is nothing to compare."""
        if self.content is not None:
            return compute_sri(self.content, expected.algorithm) == expected
        if self.content_hash is not None and self.content_hash.algorithm == expected.algorithm:
            return self.content_hash == expected
        return None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "order_index": self.order_index}
        if self.tag:
            out["tag"] = self.tag
        if self.handler:
            out["handler"] = self.handler
        if self.src_type is not None:
            out["src_type"] = self.src_type.value
        if self.src is not None:
            out["src"] = self.src
        if self.content_hash is not None:
            out["hash"] = str(self.content_hash)
        if self.integrity_attr is not None:
            out["integrity"] = self.integrity_attr
        if self.sandbox is not None:
            out["sandbox"] = str(self.sandbox)
        if self.crossorigin is not None:
            out["crossorigin"] = self.crossorigin
        out["load"] = self.load.value
        out["dynamic"] = self.dynamic
        out["persistent"] = self.persistent
        if self.children is not None:
            out["children"] = [c.to_dict() for c in self.children]
        return out


@dataclass(frozen=True)
class MeasurementReport:
    url: str
    elements: tuple[ActiveElement, ...] = ()
    load_boundary_index: int = 0
    manifest_link: str | None = None

    @property
    def static(self) -> list[ActiveElement]:
        return [e for e in self.elements if not e.dynamic]

    @property
    def dynamic(self) -> list[ActiveElement]:
        return [e for e in self.elements if e.dynamic]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "url": self.url,
            "load_boundary_index": self.load_boundary_index,
            "elements": [e.to_dict() for e in self.elements],
        }
        if self.manifest_link:
            out["manifest_link"] = self.manifest_link
        return out


@dataclass(frozen=True)
class Violation:
    code: str
    ref: str
    detail: str = ""
    position: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "ref": self.ref, "detail": self.detail}


@dataclass(frozen=True)
class ComplianceVerdict:
    violations: tuple[Violation, ...] = ()
    delegation_chain: tuple[tuple[str, str], ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "violations": [v.to_dict() for v in self.violations],
            "delegation_chain": [{"url": u, "manifest_version": v} for u, v in self.delegation_chain],
            "warnings": list(self.warnings),
        }

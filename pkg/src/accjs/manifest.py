"""Manifest model: parsing, canonical serialization and structural checks.

A manifest lists the active content a page is allowed to run, in order,
together with the trust level the developer assigns to each element.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Iterator
from urllib.parse import urlsplit

from .sri import InvalidSriHash, SriHash, UnsupportedAlgorithm


class TrustLevel(str, Enum):
    ASSERT = "assert"
    DELEGATE = "delegate"
    BLIND_TRUST = "blind-trust"


class ElementKind(str, Enum):
    INLINE = "inline"
    EVENT_HANDLER = "event_handler"
    EXTERNAL = "external"
    IFRAME = "iframe"


class SrcType(str, Enum):
    """How an iframe obtains its document."""

    EXTERNAL = "external"
    SRCDOC = "srcdoc"
    SCRIPT = "script"


class LoadMode(str, Enum):
    SYNC = "sync"
    ASYNC = "async"
    DEFER = "defer"


SCRIPT_KINDS = frozenset({ElementKind.INLINE, ElementKind.EVENT_HANDLER, ElementKind.EXTERNAL})

# Legal trust levels per (kind, iframe src type).
TRUST_TABLE: dict[tuple[ElementKind, SrcType | None], frozenset[TrustLevel]] = {
    (ElementKind.INLINE, None): frozenset({TrustLevel.ASSERT}),
    (ElementKind.EVENT_HANDLER, None): frozenset({TrustLevel.ASSERT}),
    (ElementKind.EXTERNAL, None): frozenset(TrustLevel),
    (ElementKind.IFRAME, SrcType.EXTERNAL): frozenset(TrustLevel),
    (ElementKind.IFRAME, SrcType.SRCDOC): frozenset({TrustLevel.ASSERT}),
    (ElementKind.IFRAME, SrcType.SCRIPT): frozenset({TrustLevel.ASSERT}),
}

# Values seen in published manifests that mean the same as the canonical ones.
_SRC_TYPE_ALIASES = {"link": SrcType.EXTERNAL}

TOP_LEVEL_FIELDS = ("url", "manifest_version", "name", "description", "contents")
BLOCK_FIELDS = (
    "seq", "name", "version", "description", "type", "src_type", "src", "link",
    "load", "dynamic", "persistent", "trust", "hash", "crossorigin", "sandbox",
    "manifest",
)


class ManifestError(ValueError):
    pass


class ManifestSyntaxError(ManifestError):
    """The document is not well-formed JSON."""


class SchemaError(ManifestError):
    """A manifest invariant is violated.

    The raised instance describes the first violation; ``errors`` holds
    every violation found in the document, in document order.
    """

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
        self.errors: list[SchemaError] = [self]


class IllegalTrustCombination(SchemaError):
    def __init__(self, field: str, kind: ElementKind, trust: TrustLevel, src_type: SrcType | None = None):
        label = kind.value if src_type is None else f"{kind.value}(src_type={src_type.value})"
        super().__init__(field, f"trust {trust.value!r} is not allowed for {label}")
        self.kind = kind
        self.trust = trust
        self.src_type = src_type


class UnknownFieldWarning(UserWarning):
    pass


class IncomparableVersions(ValueError):
    pass


def strip_query(url: str) -> str:
    """Drop the query and fragment; they are not part of a page's identity."""
    return url.split("#", 1)[0].split("?", 1)[0]


def is_url(value: str) -> bool:
    parts = urlsplit(value)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


def url_host(url: str) -> str:
    return (urlsplit(url).hostname or "").lower()


def url_origin(url: str) -> tuple[str, str, int | None]:
    parts = urlsplit(url)
    port = parts.port
    if port is None:
        port = {"http": 80, "https": 443}.get(parts.scheme)
    return (parts.scheme, (parts.hostname or "").lower(), port)


@dataclass(frozen=True)
class SandboxPolicy:
    """A present ``sandbox`` attribute.

    An absent attribute is represented by ``None`` on the owning block or
    element, never by an instance of this class. An empty allowlist is the
    most restrictive policy.
    """

    allowlist: frozenset[str] = frozenset()

    @classmethod
    def parse(cls, text: str) -> SandboxPolicy:
        return cls(frozenset(tok.lower() for tok in text.split()))

    def __str__(self) -> str:
        return " ".join(sorted(self.allowlist))

    def at_most(self, declared: SandboxPolicy) -> bool:
        """True when this policy is equally strict or stricter than ``declared``."""
        return self.allowlist <= declared.allowlist


@dataclass(frozen=True)
class ManifestBlock:
    kind: ElementKind
    trust: TrustLevel = TrustLevel.ASSERT
    seq: int | None = None
    src: str | None = None
    src_type: SrcType | None = None
    hash: SriHash | None = None
    sandbox: SandboxPolicy | None = None
    crossorigin: str | None = None
    dynamic: bool = False
    persistent: bool = True
    load: LoadMode = LoadMode.SYNC
    nested_manifest: tuple[ManifestBlock, ...] | None = None
    name: str | None = None
    version: str | None = None
    description: str | None = None

    @property
    def iframe_type(self) -> SrcType | None:
        if self.kind is not ElementKind.IFRAME:
            return None
        return self.src_type or SrcType.EXTERNAL


@dataclass(frozen=True)
class Manifest:
    url: str
    manifest_version: str
    contents: tuple[ManifestBlock, ...] = ()
    name: str | None = None
    description: str | None = None

    def static_blocks(self) -> list[ManifestBlock]:
        return [b for b in self.contents if not b.dynamic]

    def dynamic_blocks(self) -> list[ManifestBlock]:
        return [b for b in self.contents if b.dynamic]

    def walk(self) -> Iterator[ManifestBlock]:
        yield from _walk_blocks(self.contents)


def _walk_blocks(blocks: Iterable[ManifestBlock]) -> Iterator[ManifestBlock]:
    for block in blocks:
        yield block
        if block.nested_manifest:
            yield from _walk_blocks(block.nested_manifest)


# ---------------------------------------------------------------------------
# parsing


@dataclass
class _Parser:
    strict: bool
    allow_seq_gaps: bool
    errors: list[SchemaError] = field(default_factory=list)

    def fail(self, err: SchemaError) -> None:
        self.errors.append(err)

    def unknown(self, path: str, key: str) -> None:
        if self.strict:
            self.fail(SchemaError(f"{path}{key}", "unknown field"))
        else:
            warnings.warn(f"ignoring unknown manifest field {path}{key}", UnknownFieldWarning, stacklevel=4)

    def string(self, obj: dict, key: str, path: str, required: bool = False) -> str | None:
        if key not in obj or obj[key] is None:
            if required:
                self.fail(SchemaError(f"{path}{key}", "required field missing"))
            return None
        value = obj[key]
        if not isinstance(value, str):
            self.fail(SchemaError(f"{path}{key}", "expected a string"))
            return None
        return value

    def boolean(self, obj: dict, key: str, path: str, default: bool) -> bool:
        value = obj.get(key, default)
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        if not isinstance(value, bool):
            self.fail(SchemaError(f"{path}{key}", "expected a boolean"))
            return default
        return value

    def enum(self, enum_cls, obj: dict, key: str, path: str, default=None, aliases=None):
        if key not in obj:
            return default
        raw = obj[key]
        if isinstance(raw, str):
            raw = raw.strip().lower()
            if aliases and raw in aliases:
                return aliases[raw]
            try:
                return enum_cls(raw)
            except ValueError:
                pass
        allowed = ", ".join(repr(m.value) for m in enum_cls)
        self.fail(SchemaError(f"{path}{key}", f"expected one of {allowed}, got {obj[key]!r}"))
        return default

    def block_list(self, raw: Any, path: str) -> tuple[ManifestBlock, ...]:
        if not isinstance(raw, list):
            self.fail(SchemaError(path.rstrip("."), "expected a list of blocks"))
            return ()
        blocks = []
        for i, item in enumerate(raw):
            block = self.block(item, f"{path.rstrip('.')}[{i}].")
            if block is not None:
                blocks.append(block)
        self.check_seq(blocks, path.rstrip("."))
        return tuple(blocks)

    def check_seq(self, blocks: list[ManifestBlock], path: str) -> None:
        seqs = [b.seq for b in blocks if not b.dynamic and b.seq is not None]
        if not seqs:
            return
        if seqs[0] != 0:
            self.fail(SchemaError(f"{path}.seq", f"static sequence must start at 0, starts at {seqs[0]}"))
        for prev, cur in zip(seqs, seqs[1:]):
            if cur == prev:
                self.fail(SchemaError(f"{path}.seq", f"duplicate sequence number {cur}"))
            elif cur < prev:
                self.fail(SchemaError(f"{path}.seq", f"sequence number {cur} after {prev} is out of order"))
            elif cur != prev + 1 and not self.allow_seq_gaps:
                self.fail(SchemaError(f"{path}.seq", f"gap between sequence numbers {prev} and {cur}"))

    def block(self, obj: Any, path: str) -> ManifestBlock | None:
        if not isinstance(obj, dict):
            self.fail(SchemaError(path.rstrip("."), "expected an object"))
            return None
        for key in obj:
            if key not in BLOCK_FIELDS:
                self.unknown(path, key)
        n_before = len(self.errors)

        kind = self.enum(ElementKind, obj, "type", path)
        if "type" not in obj:
            self.fail(SchemaError(f"{path}type", "required field missing"))
        if kind is None:
            return None

        trust = self.enum(TrustLevel, obj, "trust", path, aliases={"blindtrust": TrustLevel.BLIND_TRUST,
                                                                   "blind_trust": TrustLevel.BLIND_TRUST})
        if trust is None:
            if kind in (ElementKind.EXTERNAL, ElementKind.IFRAME) and "trust" not in obj:
                self.fail(SchemaError(f"{path}trust", f"required for type {kind.value!r}"))
            trust = TrustLevel.ASSERT

        src_type = None
        if "src_type" in obj:
            if kind is not ElementKind.IFRAME:
                self.fail(SchemaError(f"{path}src_type", "only allowed on iframe blocks"))
            else:
                src_type = self.enum(SrcType, obj, "src_type", path, aliases=_SRC_TYPE_ALIASES)
        eff_src_type = (src_type or SrcType.EXTERNAL) if kind is ElementKind.IFRAME else None

        src = self.string(obj, "src", path)
        if src is None and "link" in obj:
            src = self.string(obj, "link", path)

        sri = None
        hash_text = self.string(obj, "hash", path)
        if hash_text is None and eff_src_type in (SrcType.SRCDOC, SrcType.SCRIPT) and src:
            # srcdoc/script iframes may carry their hash in the src directive.
            try:
                sri = SriHash.parse(src)
                src = None
            except (InvalidSriHash, UnsupportedAlgorithm):
                pass
        if hash_text is not None:
            try:
                sri = SriHash.parse(hash_text)
            except (InvalidSriHash, UnsupportedAlgorithm) as exc:
                self.fail(SchemaError(f"{path}hash", str(exc) or "unsupported algorithm"))

        seq = obj.get("seq")
        if seq is not None and (isinstance(seq, bool) or not isinstance(seq, int) or seq < 0):
            self.fail(SchemaError(f"{path}seq", "expected a non-negative integer"))
            seq = None

        dynamic = self.boolean(obj, "dynamic", path, False)
        persistent = self.boolean(obj, "persistent", path, True)
        load = self.enum(LoadMode, obj, "load", path, default=LoadMode.SYNC)
        if kind is ElementKind.IFRAME:
            load = LoadMode.SYNC

        sandbox = None
        sandbox_text = self.string(obj, "sandbox", path)
        if sandbox_text is not None:
            if kind is not ElementKind.IFRAME:
                self.fail(SchemaError(f"{path}sandbox", f"sandbox is not supported for type {kind.value!r}"))
            else:
                sandbox = SandboxPolicy.parse(sandbox_text)

        nested = None
        if "manifest" in obj:
            if kind is not ElementKind.IFRAME:
                self.fail(SchemaError(f"{path}manifest", "nested manifests are only allowed on iframe blocks"))
            else:
                nested = self.block_list(obj["manifest"], f"{path}manifest.")

        if trust not in TRUST_TABLE[(kind, eff_src_type)]:
            self.fail(IllegalTrustCombination(f"{path}trust", kind, trust, eff_src_type))
        if trust is TrustLevel.ASSERT and sri is None and not (kind is ElementKind.IFRAME and nested is not None):
            self.fail(SchemaError(f"{path}hash", "required when trust is 'assert'"))
        needs_url = kind is ElementKind.EXTERNAL or eff_src_type is SrcType.EXTERNAL or trust is TrustLevel.BLIND_TRUST
        if needs_url:
            if src is None:
                self.fail(SchemaError(f"{path}src", "required for this type/trust"))
            elif not is_url(src):
                self.fail(SchemaError(f"{path}src", f"not a URL: {src!r}"))
        if not dynamic and seq is None:
            self.fail(SchemaError(f"{path}seq", "required for static content"))

        if len(self.errors) > n_before:
            return None
        return ManifestBlock(
            kind=kind, trust=trust, seq=seq, src=src, src_type=src_type, hash=sri,
            sandbox=sandbox, crossorigin=self.string(obj, "crossorigin", path),
            dynamic=dynamic, persistent=persistent, load=load, nested_manifest=nested,
            name=self.string(obj, "name", path), version=self.string(obj, "version", path),
            description=self.string(obj, "description", path),
        )


def parse_manifest(text: str | bytes, *, strict: bool = True, allow_seq_gaps: bool = False) -> Manifest:
    """Parse and validate a manifest document.

    Raises ManifestSyntaxError for malformed JSON and SchemaError (first
    violation, all of them in ``.errors``) for invariant violations. With
    ``strict=False`` unknown fields only emit UnknownFieldWarning.
    """
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestSyntaxError(str(exc)) from exc
    return manifest_from_dict(data, strict=strict, allow_seq_gaps=allow_seq_gaps)


def manifest_from_dict(data: Any, *, strict: bool = True, allow_seq_gaps: bool = False) -> Manifest:
    p = _Parser(strict=strict, allow_seq_gaps=allow_seq_gaps)
    if not isinstance(data, dict):
        raise SchemaError("$", "manifest must be a JSON object")
    for key in data:
        if key not in TOP_LEVEL_FIELDS:
            p.unknown("", key)
    url = p.string(data, "url", "", required=True)
    if url is not None and not is_url(url):
        p.fail(SchemaError("url", f"not a URL: {url!r}"))
    version = p.string(data, "manifest_version", "", required=True)
    contents: tuple[ManifestBlock, ...] = ()
    if "contents" not in data:
        p.fail(SchemaError("contents", "required field missing"))
    else:
        contents = p.block_list(data["contents"], "contents.")
    name = p.string(data, "name", "")
    description = p.string(data, "description", "")
    if p.errors:
        first = p.errors[0]
        first.errors = list(p.errors)
        raise first
    return Manifest(url=strip_query(url), manifest_version=version, contents=contents,
                    name=name, description=description)


# ---------------------------------------------------------------------------
# serialization


def _block_to_dict(b: ManifestBlock) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if b.seq is not None:
        out["seq"] = b.seq
    for key in ("name", "version", "description"):
        if getattr(b, key) is not None:
            out[key] = getattr(b, key)
    out["type"] = b.kind.value
    if b.kind is ElementKind.IFRAME:
        out["src_type"] = b.iframe_type.value
    if b.src is not None:
        out["src"] = b.src
    if b.kind in SCRIPT_KINDS:
        out["load"] = b.load.value
    if b.dynamic:
        out["dynamic"] = True
    if not b.persistent:
        out["persistent"] = False
    out["trust"] = b.trust.value
    if b.hash is not None:
        out["hash"] = str(b.hash)
    if b.crossorigin is not None:
        out["crossorigin"] = b.crossorigin
    if b.sandbox is not None:
        out["sandbox"] = str(b.sandbox)
    if b.nested_manifest is not None:
        out["manifest"] = [_block_to_dict(x) for x in b.nested_manifest]
    return out


def manifest_to_dict(m: Manifest) -> dict[str, Any]:
    out: dict[str, Any] = {"url": m.url, "manifest_version": m.manifest_version}
    if m.name is not None:
        out["name"] = m.name
    if m.description is not None:
        out["description"] = m.description
    out["contents"] = [_block_to_dict(b) for b in m.contents]
    return out


def serialize_manifest(m: Manifest, indent: int | None = None) -> str:
    """Canonical JSON text. With the default ``indent`` the output is the exact byte form that gets signed."""
    separators = (",", ":") if indent is None else (",", ": ")
    return json.dumps(manifest_to_dict(m), ensure_ascii=False, separators=separators, indent=indent)


def canonical_bytes(m: Manifest) -> bytes:
    return serialize_manifest(m).encode("utf-8")


# ---------------------------------------------------------------------------
# completeness


@dataclass(frozen=True)
class Finding:
    code: str
    ref: str
    directive: str
    detail: str = ""


def validate_completeness(m: Manifest) -> list[Finding]:
    """Directives a block needs beyond what parsing already enforces.

    crossorigin is demanded only for external scripts served from another
    origin than the manifest's page; blind-trust iframes need a sandbox.
    """
    findings: list[Finding] = []
    _complete_blocks(m.contents, m.url, "contents", findings)
    return findings


def _complete_blocks(blocks: Iterable[ManifestBlock], page_url: str, path: str, out: list[Finding]) -> None:
    for i, b in enumerate(blocks):
        ref = f"{path}[{i}]"
        if b.kind is ElementKind.EXTERNAL and b.crossorigin is None and b.src and is_url(b.src):
            if url_origin(b.src) != url_origin(page_url):
                out.append(Finding("MissingDirective", ref, "crossorigin",
                                   "cross-origin external content must declare crossorigin"))
        if b.kind is ElementKind.IFRAME and b.trust is TrustLevel.BLIND_TRUST and b.sandbox is None:
            out.append(Finding("MissingDirective", ref, "sandbox",
                               "blind-trust iframes must declare a sandbox"))
        if b.nested_manifest:
            inner_url = b.src if b.src and is_url(b.src) else page_url
            _complete_blocks(b.nested_manifest, inner_url, f"{ref}.manifest", out)


# ---------------------------------------------------------------------------
# versions

_PREFIXED = re.compile(r"^([A-Za-z_\-.]*?)(\d+)$")
_DOTTED = re.compile(r"^\d+(\.\d+)+$")


def version_key(v: str) -> tuple:
    """Sort key for a version string; raises IncomparableVersions for unsupported forms."""
    m = _PREFIXED.match(v)
    if m:
        return ("p", m.group(1), int(m.group(2)))
    if _DOTTED.match(v):
        return ("d", tuple(int(x) for x in v.split(".")))
    raise IncomparableVersions(f"unsupported version format {v!r}")


def compare_versions(a: str, b: str) -> int:
    """Return -1, 0 or 1.

    ``<prefix><integer>`` versions compare numerically when prefixes agree
    and by prefix otherwise; dotted numeric versions compare component-wise.
    Mixing the two schemes raises IncomparableVersions.
    """
    if a == b:
        return 0
    ka, kb = version_key(a), version_key(b)
    if ka[0] != kb[0]:
        raise IncomparableVersions(f"cannot order {a!r} against {b!r}")
    if ka[0] == "p" and ka[1] != kb[1]:
        return -1 if ka[1] < kb[1] else 1
    return (ka > kb) - (ka < kb)


def with_version(m: Manifest, version: str) -> Manifest:
    return replace(m, manifest_version=version)

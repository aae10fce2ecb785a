"""Compliance of a measured page with a manifest, including trust delegation."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..crypto import EnvelopeError, Expired, KeyRegistry, SignedEnvelope, verify_envelope
from ..manifest import ElementKind, Manifest, ManifestBlock, SrcType, TrustLevel, strip_query
from .extract import ParseFailure, parse_raw
from .fetcher import LINK_HEADER, MANIFEST_HEADER, ResourceFetcher
from .model import ActiveElement, ComplianceVerdict, MeasurementReport, Violation

DEFAULT_MAX_DELEGATION_DEPTH = 8


@dataclass(frozen=True)
class EvaluationOptions:
    registry: KeyRegistry | None = None
    now: int | None = None
    max_delegation_depth: int = DEFAULT_MAX_DELEGATION_DEPTH
    allow_cn_suffix: bool = False
    allow_seq_gaps: bool = False


class DelegationUnresolvable(Exception):
    def __init__(self, url: str, reason: str):
        super().__init__(f"{url}: {reason}")
        self.url = url
        self.reason = reason


def resolve_delegated_manifest(url: str, fetcher: ResourceFetcher | None, opts: EvaluationOptions) -> Manifest:
    """Fetch and verify the signed manifest a third party serves for ``url``.

    The inline ``x-acc-js-man`` header wins over ``x-acc-js-link`` (header,
    then ``<meta>``). An expired envelope is refreshed once from its
    validity URL.
    """
    if fetcher is None:
        raise DelegationUnresolvable(url, "no fetcher available")
    if opts.registry is None:
        raise DelegationUnresolvable(url, "no key registry to verify signatures")
    resp = fetcher.fetch(url)
    if resp is None:
        raise DelegationUnresolvable(url, "resource not found")
    try:
        inline = resp.header(MANIFEST_HEADER)
        if inline:
            env = SignedEnvelope.from_header(inline)
        else:
            link = resp.header(LINK_HEADER)
            if not link and resp.body is not None:
                try:
                    link = parse_raw(resp.body)[1]
                except ParseFailure:
                    link = None
            if not link:
                raise DelegationUnresolvable(url, "no signed manifest offered")
            linked = fetcher.fetch(link)
            if linked is None or linked.body is None:
                raise DelegationUnresolvable(url, f"manifest link {link} not retrievable")
            env = SignedEnvelope.from_json(linked.body)
        try:
            verified = verify_envelope(env, opts.registry, opts.now, allow_cn_suffix=opts.allow_cn_suffix,
                                       allow_seq_gaps=opts.allow_seq_gaps)
        except Expired:
            refreshed = fetcher.fetch(env.validity_url) if env.validity_url else None
            if refreshed is None or refreshed.body is None:
                raise
            verified = verify_envelope(SignedEnvelope.from_json(refreshed.body), opts.registry, opts.now,
                                       allow_cn_suffix=opts.allow_cn_suffix, allow_seq_gaps=opts.allow_seq_gaps)
    except EnvelopeError as exc:
        raise DelegationUnresolvable(url, f"{type(exc).__name__}: {exc}") from exc
    if verified.manifest.url != strip_query(url):
        raise DelegationUnresolvable(url, f"signed manifest is for {verified.manifest.url}")
    return verified.manifest


@dataclass
class _Evaluator:
    fetcher: ResourceFetcher | None
    opts: EvaluationOptions
    violations: list[Violation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    chain: list[tuple[str, str]] = field(default_factory=list)

    def flag(self, code: str, ref: str, pos: tuple[int, ...], detail: str = "") -> None:
        self.violations.append(Violation(code, ref, detail, pos))

    def run(self, elements, blocks, prefix: str, pos: tuple[int, ...], depth: int) -> None:
        statics = sorted((e for e in elements if not e.dynamic), key=lambda e: e.order_index)
        static_blocks = [b for b in blocks if not b.dynamic]
        for i in range(max(len(statics), len(static_blocks))):
            here = pos + (0, i)
            if i >= len(static_blocks):
                el = statics[i]
                self.flag("UnexpectedElement", f"{prefix}element #{el.order_index}", here,
                          f"undeclared static {_describe(el)}")
            elif i >= len(statics):
                b = static_blocks[i]
                self.flag("MissingElement", f"{prefix}seq {b.seq}", here, f"declared {b.kind.value} not present")
            else:
                b = static_blocks[i]
                self.check(statics[i], b, f"{prefix}seq {b.seq}", here, depth)

        dyn_blocks = [b for b in blocks if b.dynamic]
        for el in sorted((e for e in elements if e.dynamic), key=lambda e: e.order_index):
            here = pos + (1, el.order_index)
            block = _match_dynamic(el, dyn_blocks)
            if block is None:
                self.flag("UnexpectedElement", f"{prefix}element #{el.order_index}", here,
                          f"undeclared dynamic {_describe(el)}")
            else:
                idx = blocks.index(block)
                self.check(el, block, f"{prefix}dynamic block {idx}", here, depth)

    def check(self, el: ActiveElement, b: ManifestBlock, ref: str, pos: tuple[int, ...], depth: int) -> None:
        if el.kind is not b.kind or (b.kind is ElementKind.IFRAME and el.src_type is not b.iframe_type):
            self.flag("KindMismatch", ref, pos, f"declared {_describe_block(b)}, found {_describe(el)}")
            return
        if not el.persistent and b.persistent:
            self.flag("UnexpectedRemoval", ref, pos, "element was removed but is declared persistent")
        if b.crossorigin is not None and el.crossorigin != b.crossorigin:
            self.flag("DirectiveMismatch", ref, pos, f"crossorigin {el.crossorigin!r} != {b.crossorigin!r}")
        if b.kind in (ElementKind.INLINE, ElementKind.EXTERNAL) and el.load is not b.load:
            self.flag("DirectiveMismatch", ref, pos, f"load {el.load.value!r} != {b.load.value!r}")
        url_bearing = b.kind is ElementKind.EXTERNAL or b.iframe_type is SrcType.EXTERNAL
        if url_bearing and b.src is not None and el.src != b.src:
            self.flag("SrcMismatch", ref, pos, f"{el.src!r} != {b.src!r}")
        if b.kind is ElementKind.IFRAME and b.sandbox is not None:
            if el.sandbox is None:
                self.flag("SandboxTooPermissive", ref, pos, "iframe has no sandbox attribute")
            elif not el.sandbox.at_most(b.sandbox):
                extra = " ".join(sorted(el.sandbox.allowlist - b.sandbox.allowlist))
                self.flag("SandboxTooPermissive", ref, pos, f"not declared: {extra}")

        if b.trust is TrustLevel.ASSERT:
            self.check_assert(el, b, ref, pos, depth)
        elif b.trust is TrustLevel.DELEGATE:
            self.check_delegate(el, b, ref, pos, depth)
        # blind-trust: source and sandbox checks above are all there is

    def check_assert(self, el, b, ref, pos, depth) -> None:
        if b.nested_manifest is not None:
            if el.children is None:
                self.warnings.append(f"{ref}: iframe document not observable, only iframe attributes checked")
            else:
                self.run(el.children, list(b.nested_manifest), f"{ref} > ", pos + (2,), depth)
            return
        match = el.hash_matches(b.hash)
        if match is None and b.hash in el.integrity:
            match = True
        if match is False:
            self.flag("HashMismatch", ref, pos, f"expected {b.hash}")
        elif match is None:
            if b.kind is ElementKind.IFRAME:
                self.warnings.append(f"{ref}: iframe document not observable, only iframe attributes checked")
            else:
                self.flag("UnverifiableContent", ref, pos, "content could not be fetched or hashed")
        if b.kind is ElementKind.EXTERNAL and el.integrity_attr is None:
            self.warnings.append(f"{ref}: external script {el.src} has no integrity attribute")

    def check_delegate(self, el, b, ref, pos, depth) -> None:
        if depth + 1 > self.opts.max_delegation_depth:
            self.flag("DepthExceeded", ref, pos, f"more than {self.opts.max_delegation_depth} delegations")
            return
        try:
            third = resolve_delegated_manifest(el.src, self.fetcher, self.opts)
        except DelegationUnresolvable as exc:
            self.flag("DelegationUnresolvable", ref, pos, str(exc))
            return
        self.chain.append((third.url, third.manifest_version))
        if b.kind is ElementKind.EXTERNAL:
            inner = [ActiveElement(kind=ElementKind.EXTERNAL, order_index=0, src=el.src, content=el.content,
                                   content_hash=el.content_hash, integrity=el.integrity, integrity_attr=el.integrity_attr,
                                   crossorigin=el.crossorigin, load=el.load)]
        else:
            inner = el.children
            if inner is None:
                self.warnings.append(f"{ref}: delegated iframe document not observable")
                return
        self.run(inner, list(third.contents), f"{ref} > {third.url} ", pos + (3,), depth + 1)


def _describe(el: ActiveElement) -> str:
    label = el.kind.value if el.src_type is None else f"iframe({el.src_type.value})"
    return f"{label} {el.src}" if el.src else label


def _describe_block(b: ManifestBlock) -> str:
    label = b.kind.value if b.iframe_type is None else f"iframe({b.iframe_type.value})"
    return f"{label} {b.src}" if b.src else label


def _same_kind(el: ActiveElement, b: ManifestBlock) -> bool:
    return el.kind is b.kind and (b.kind is not ElementKind.IFRAME or el.src_type is b.iframe_type)


def _match_dynamic(el: ActiveElement, blocks: list[ManifestBlock]) -> ManifestBlock | None:
    """First fit on (kind, hash), then on (kind, src), in manifest order."""
    for b in blocks:
        if _same_kind(el, b) and b.hash is not None and el.hash_matches(b.hash):
            return b
    for b in blocks:
        if _same_kind(el, b) and b.src is not None and el.src == b.src:
            return b
    return None


def evaluate(
    report: MeasurementReport,
    manifest: Manifest,
    fetcher: ResourceFetcher | None = None,
    opts: EvaluationOptions | None = None,
) -> ComplianceVerdict:
    """Check a measurement against a manifest.

    Static elements pair with static blocks in sequence order. Dynamic
    elements each need some matching dynamic block; undeclared elements,
    missing static blocks, hash/source/directive mismatches and sandboxes
    looser than declared are violations. Delegated blocks are resolved to
    the third party's signed manifest and evaluated recursively.
    """
    opts = opts or EvaluationOptions()
    ev = _Evaluator(fetcher, opts)
    if strip_query(manifest.url) != strip_query(report.url):
        ev.flag("UrlMismatch", "manifest", (), f"manifest for {manifest.url}, page is {report.url}")
    ev.run(report.elements, list(manifest.contents), "", (), 0)
    ordered = sorted(ev.violations, key=lambda v: (v.position, v.code))
    return ComplianceVerdict(tuple(ordered), tuple(ev.chain), tuple(ev.warnings))

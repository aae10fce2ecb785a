from __future__ import annotations

from typing import Iterable

from ..manifest import ElementKind, LoadMode, Manifest, ManifestBlock, SrcType, TrustLevel
from ..sri import compute_sri
from .model import ActiveElement, MeasurementReport


def _block_for(el: ActiveElement, seq: int | None) -> ManifestBlock:
    common = dict(seq=seq, dynamic=el.dynamic, persistent=el.persistent, kind=el.kind)
    if el.kind in (ElementKind.INLINE, ElementKind.EVENT_HANDLER):
        return ManifestBlock(trust=TrustLevel.ASSERT, hash=el.content_hash, load=el.load, **common)
    if el.kind is ElementKind.EXTERNAL:
        sri = el.content_hash
        if sri is None and el.integrity:
            sri = max(el.integrity, key=lambda h: len(h.digest))
        if sri is None:
            # Nothing observable to pin; only the source can be declared.
            return ManifestBlock(trust=TrustLevel.BLIND_TRUST, src=el.src, crossorigin=el.crossorigin,
                                 load=el.load, **common)
        return ManifestBlock(trust=TrustLevel.ASSERT, src=el.src, hash=sri, crossorigin=el.crossorigin,
                             load=el.load, **common)
    # iframes
    frame = dict(src_type=el.src_type, sandbox=el.sandbox, crossorigin=el.crossorigin, load=LoadMode.SYNC)
    if el.src_type in (SrcType.SRCDOC, SrcType.SCRIPT):
        return ManifestBlock(trust=TrustLevel.ASSERT, hash=el.content_hash, **frame, **common)
    if el.children is not None:
        return ManifestBlock(trust=TrustLevel.ASSERT, src=el.src, nested_manifest=_blocks(el.children),
                             **frame, **common)
    if el.content is not None:
        return ManifestBlock(trust=TrustLevel.ASSERT, src=el.src, hash=compute_sri(el.content), **frame, **common)
    return ManifestBlock(trust=TrustLevel.BLIND_TRUST, src=el.src, **frame, **common)


def _blocks(elements: Iterable[ActiveElement]) -> tuple[ManifestBlock, ...]:
    out = []
    seq = 0
    for el in elements:
        if el.dynamic:
            out.append(_block_for(el, None))
        else:
            out.append(_block_for(el, seq))
            seq += 1
    return tuple(out)


def generate_manifest(report: MeasurementReport, version: str = "v0", *, name: str | None = None,
                      description: str | None = None) -> Manifest:
    """Most restrictive manifest that the measured page satisfies.

    Every element is asserted by hash. The exceptions are external content
    whose bytes were never observed (opaque iframes, unfetched scripts
    without an integrity attribute), which is declared blind-trust by source.
    """
    return Manifest(url=report.url, manifest_version=version, contents=_blocks(report.elements),
                    name=name, description=description)

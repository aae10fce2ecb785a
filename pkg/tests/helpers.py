"""Shared helpers for the test modules."""

from __future__ import annotations

import copy
from typing import Iterator

from accjs.casestudies import CaseStudy, build_delegate, keyguard_manifest, shop_manifest, wallet_manifest
from accjs.measurement import EvaluationOptions, evaluate, measure
from accjs.sri import compute_sri

OTHER_HASH = str(compute_sri(b"not the audited code"))


def evaluate_case(cs: CaseStudy):
    report = measure(cs.page, cs.url, mutations=cs.mutations, fetcher=cs.fetcher)
    return evaluate(report, cs.manifest, cs.fetcher, EvaluationOptions(registry=cs.registry, now=cs.now))


def _hash_paths(blocks: list[dict], path: tuple) -> Iterator[tuple]:
    for i, b in enumerate(blocks):
        if "hash" in b:
            yield path + (i,)
        if "manifest" in b:
            yield from _hash_paths(b["manifest"], path + (i, "manifest"))


def tampered_delegate_chains() -> Iterator[tuple[str, CaseStudy]]:
    """Every variant of the delegation fixture with exactly one asserted hash replaced.

    Each altered manifest is re-signed by its own developer, so only the
    content pinning differs from the honest chain.
    """
    docs = {"shop": shop_manifest(), "wallet": wallet_manifest(), "keyguard": keyguard_manifest()}
    for name, doc in docs.items():
        for path in _hash_paths(doc["contents"], ()):
            altered = copy.deepcopy(doc)
            node = altered["contents"]
            for step in path[:-1]:
                node = node[step]
            node[path[-1]]["hash"] = OTHER_HASH
            label = f"{name}:" + "/".join(map(str, path))
            yield label, build_delegate(**{name: altered})

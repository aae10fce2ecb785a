from __future__ import annotations

import json
from dataclasses import replace

import pytest

from accjs.casestudies import (
    AD_DYNAMIC_FRAME,
    NAMES,
    build_case_study,
    build_untrusted_sandbox,
    with_manifest,
    write_case_study,
)
from accjs.crypto import KeyRegistry, SignedEnvelope, verify_envelope
from accjs.manifest import ElementKind, TrustLevel, manifest_from_dict, manifest_to_dict
from accjs.measurement import DirectoryFetcher, EvaluationOptions, evaluate, measure

from helpers import evaluate_case, tampered_delegate_chains


@pytest.mark.parametrize("name", NAMES)
def test_case_study_complies(name):
    cs = build_case_study(name)
    assert verify_envelope(cs.envelope, cs.registry, cs.now).manifest == cs.manifest
    v = evaluate_case(cs)
    assert v.ok, v.violations


@pytest.mark.parametrize("name", NAMES)
def test_written_case_study_complies(tmp_path, name):
    cs = build_case_study(name)
    root = write_case_study(cs, tmp_path / name)
    meta = json.loads((root / "casestudy.json").read_text())
    fetcher = DirectoryFetcher(root)
    registry = KeyRegistry.load(root / "keys")
    env = SignedEnvelope.from_json((root / "manifest.sxg.json").read_bytes())
    manifest = verify_envelope(env, registry, meta["now"]).manifest
    mutations = (root / meta["mutations"]).read_text() if meta["mutations"] else None
    report = measure((root / "page.html").read_bytes(), meta["url"], mutations=mutations, fetcher=fetcher)
    assert evaluate(report, manifest, fetcher, EvaluationOptions(registry=registry, now=meta["now"])).ok


def test_delegate_chain_has_two_links():
    v = evaluate_case(build_case_study("delegate"))
    assert [u for u, _ in v.delegation_chain] == ["https://wallet.nimiq.com/", "https://keyguard.nimiq.com/"]


def test_every_tampered_hash_in_the_chain_is_caught():
    variants = list(tampered_delegate_chains())
    assert {label.split(":")[0] for label, _ in variants} == {"shop", "wallet", "keyguard"}
    assert any("manifest" in label for label, _ in variants)  # hub blocks nested in the wallet manifest
    for label, cs in variants:
        assert not evaluate_case(cs).ok, label


def test_trusted_third_party_pins_cdn_content():
    cs = build_case_study("trusted-third-party")
    cs.fetcher.add(cs.manifest.contents[0].src, b"/* swapped by the CDN */")
    assert "HashMismatch" in evaluate_case(cs).codes()


def test_sandbox_loosened_on_ad_page():
    cs = build_untrusted_sandbox()
    loose = cs.page.replace(b'sandbox="allow-same-origin allow-scripts"',
                            b'sandbox="allow-same-origin allow-scripts allow-top-navigation"')
    assert evaluate_case(replace(cs, page=loose)).codes() == ["SandboxTooPermissive"]


def test_unlisted_dynamic_ad_frame():
    cs = build_untrusted_sandbox()
    doc = manifest_to_dict(cs.manifest)
    doc["contents"] = [b for b in doc["contents"] if b.get("src") != AD_DYNAMIC_FRAME]
    cs = with_manifest(cs, manifest_from_dict(doc))
    assert evaluate_case(cs).codes() == ["UnexpectedElement"]


def test_ad_page_shape():
    m = build_untrusted_sandbox().manifest
    kinds = [(b.kind, b.trust, b.dynamic) for b in m.contents]
    assert kinds.count((ElementKind.EXTERNAL, TrustLevel.BLIND_TRUST, False)) == 6
    assert kinds[6] == (ElementKind.IFRAME, TrustLevel.DELEGATE, False)
    assert kinds.count((ElementKind.IFRAME, TrustLevel.BLIND_TRUST, False)) == 6
    assert kinds[-1] == (ElementKind.IFRAME, TrustLevel.BLIND_TRUST, True)


def test_unknown_case_study():
    with pytest.raises(ValueError):
        build_case_study("nope")

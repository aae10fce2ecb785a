from __future__ import annotations

import pytest

from accjs.crypto import DAY, KeyRegistry, Role, keygen, sign_envelope
from accjs.manifest import manifest_from_dict
from accjs.measurement import DictFetcher, EvaluationOptions, evaluate, generate_manifest, measure
from accjs.sri import compute_sri

from conftest import T0

PAGE = "https://shop.example/"
WALLET = "https://wallet.example/"


def h(data: bytes) -> str:
    return str(compute_sri(data))


def manifest(*blocks, url=PAGE):
    return manifest_from_dict({"url": url, "manifest_version": "v1", "contents": list(blocks)})


def inline(seq, body: bytes, **extra):
    return {"seq": seq, "type": "inline", "trust": "assert", "hash": h(body), **extra}


def verdict(page: bytes, m, mutations=None, fetcher=None, opts=None, url=PAGE):
    return evaluate(measure(page, url, mutations=mutations, fetcher=fetcher), m, fetcher, opts)


def test_exact_page_complies():
    v = verdict(b"<script>a()</script><script>b()</script>", manifest(inline(0, b"a()"), inline(1, b"b()")))
    assert v.ok and v.to_dict()["violations"] == []


@pytest.mark.parametrize("page,blocks,code", [
    (b"<script>a()</script><script>x()</script>", [inline(0, b"a()")], "UnexpectedElement"),
    (b"<script>a()</script>", [inline(0, b"a()"), inline(1, b"b()")], "MissingElement"),
    (b"<script>evil()</script>", [inline(0, b"a()")], "HashMismatch"),
    (b'<button onclick="a()">x</button>', [inline(0, b"a()")], "KindMismatch"),
    (b"<script async>a()</script>", [inline(0, b"a()")], "DirectiveMismatch"),
    (b'<script src="https://evil.example/a.js"></script>',
     [{"seq": 0, "type": "external", "trust": "blind-trust", "src": "https://cdn.example/a.js"}], "SrcMismatch"),
    (b'<script src="https://cdn.example/a.js"></script>',
     [{"seq": 0, "type": "external", "trust": "assert", "src": "https://cdn.example/a.js", "hash": h(b"a")}],
     "UnverifiableContent"),
    (b'<iframe src="https://ads.example/" sandbox="allow-scripts allow-top-navigation"></iframe>',
     [{"seq": 0, "type": "iframe", "trust": "blind-trust", "src": "https://ads.example/", "sandbox": "allow-scripts"}],
     "SandboxTooPermissive"),
    (b'<iframe src="https://ads.example/"></iframe>',
     [{"seq": 0, "type": "iframe", "trust": "blind-trust", "src": "https://ads.example/", "sandbox": ""}],
     "SandboxTooPermissive"),
    (b'<script crossorigin="use-credentials" src="https://cdn.example/a.js"></script>',
     [{"seq": 0, "type": "external", "trust": "blind-trust", "src": "https://cdn.example/a.js",
       "crossorigin": "anonymous"}], "DirectiveMismatch"),
])
def test_violation_codes(page, blocks, code):
    v = verdict(page, manifest(*blocks))
    assert code in v.codes()


def test_url_mismatch():
    v = verdict(b"<script>a()</script>", manifest(inline(0, b"a()"), url="https://other.example/"))
    assert v.codes() == ["UrlMismatch"]


def test_removal_of_persistent_element():
    m = manifest(inline(0, b"a()"))
    v = verdict(b"<script>a()</script>", m, mutations="REMOVE AfterLoad <script>a()</script>")
    assert v.codes() == ["UnexpectedRemoval"]
    transient = manifest(inline(0, b"a()", persistent=False))
    assert verdict(b"<script>a()</script>", transient, mutations="REMOVE AfterLoad <script>a()</script>").ok


def test_stricter_sandbox_is_fine():
    page = b'<iframe src="https://ads.example/" sandbox=""></iframe>'
    m = manifest({"seq": 0, "type": "iframe", "trust": "blind-trust", "src": "https://ads.example/",
                  "sandbox": "allow-scripts"})
    assert verdict(page, m).ok


def test_dynamic_matching_by_hash_then_src():
    m = manifest(
        inline(0, b"a()"),
        {"type": "inline", "trust": "assert", "hash": h(b"late()"), "dynamic": True},
        {"type": "external", "trust": "blind-trust", "src": "https://ads.example/x.js", "dynamic": True},
    )
    ok = verdict(b"<script>a()</script>", m, mutations=(
        "ADD AfterLoad <script>late()</script>\n"
        'ADD AfterLoad <script src="https://ads.example/x.js"></script>\n'
        "ADD AfterLoad <script>late()</script>\n"))
    assert ok.ok
    bad = verdict(b"<script>a()</script>", m, mutations="ADD AfterLoad <script>other()</script>")
    assert bad.codes() == ["UnexpectedElement"]
    assert "dynamic" in bad.violations[0].detail


def test_violations_are_ordered_by_position():
    m = manifest(inline(0, b"a()"), inline(1, b"b()"))
    v = verdict(b"<script>x()</script><script>y()</script><script>z()</script>", m)
    assert v.codes() == ["HashMismatch", "HashMismatch", "UnexpectedElement"]
    assert [x.ref for x in v.violations] == ["seq 0", "seq 1", "element #2"]


def test_external_integrity_is_enough_without_fetch():
    sri = h(b"lib()")
    page = f'<script src="https://cdn.example/lib.js" integrity="{sri}"></script>'.encode()
    m = manifest({"seq": 0, "type": "external", "trust": "assert", "src": "https://cdn.example/lib.js", "hash": sri})
    v = verdict(page, m)
    assert v.ok and not v.warnings


def test_missing_integrity_is_warned():
    fetcher = DictFetcher()
    fetcher.add("https://cdn.example/lib.js", b"lib()")
    m = manifest({"seq": 0, "type": "external", "trust": "assert", "src": "https://cdn.example/lib.js",
                  "hash": h(b"lib()")})
    v = verdict(b'<script src="https://cdn.example/lib.js"></script>', m, fetcher=fetcher)
    assert v.ok and any("integrity" in w for w in v.warnings)


# ---------------------------------------------------------------------------
# delegation


def delegation_world(depth: int = 1, *, wallet_body=b"<script>w()</script>"):
    """A shop that delegates to a chain of ``depth`` third parties, each embedding the next."""
    registry = KeyRegistry()
    fetcher = DictFetcher()
    urls = [f"https://party{i}.example/" for i in range(depth)]
    for i, url in enumerate(urls):
        dev, cert = keygen(Role.DEVELOPER, f"party{i}.example", 30 * DAY, registry=registry, now=T0, seed=url.encode())
        if i + 1 < depth:
            body = f'<iframe src="{urls[i + 1]}"></iframe>'.encode()
            blocks = [{"seq": 0, "type": "iframe", "trust": "delegate", "src": urls[i + 1]}]
        else:
            body = wallet_body
            blocks = [inline(0, b"w()")]
        env = sign_envelope(dev, cert, manifest(*blocks, url=url), T0, DAY)
        fetcher.add(url, body, headers={"x-acc-js-link": url + "manifest.sxg"})
        fetcher.add(url + "manifest.sxg", env.to_json())
    shop = manifest({"seq": 0, "type": "iframe", "trust": "delegate", "src": urls[0], "sandbox": "allow-scripts"})
    page = f'<iframe src="{urls[0]}" sandbox="allow-scripts"></iframe>'.encode()
    return page, shop, fetcher, registry


def test_delegation_chain_resolves():
    page, shop, fetcher, registry = delegation_world(3)
    v = verdict(page, shop, fetcher=fetcher, opts=EvaluationOptions(registry=registry, now=T0 + 60))
    assert v.ok, v.violations
    assert [u for u, _ in v.delegation_chain] == [f"https://party{i}.example/" for i in range(3)]


def test_delegated_content_is_checked():
    page, shop, fetcher, registry = delegation_world(1, wallet_body=b"<script>steal()</script>")
    v = verdict(page, shop, fetcher=fetcher, opts=EvaluationOptions(registry=registry, now=T0))
    assert v.codes() == ["HashMismatch"]
    assert v.violations[0].ref.startswith("seq 0 > https://party0.example/")


def test_delegation_depth_limit():
    page, shop, fetcher, registry = delegation_world(3)
    v = verdict(page, shop, fetcher=fetcher, opts=EvaluationOptions(registry=registry, now=T0, max_delegation_depth=2))
    assert v.codes() == ["DepthExceeded"]


@pytest.mark.parametrize("breakage", ["no-registry", "unsigned", "expired", "tampered", "wrong-url"])
def test_unresolvable_delegation(breakage):
    page, shop, fetcher, registry = delegation_world(1)
    now = T0
    opts_registry = registry
    url = "https://party0.example/"
    if breakage == "no-registry":
        opts_registry = None
    elif breakage == "unsigned":
        fetcher.add(url, b"<script>w()</script>")
    elif breakage == "expired":
        now = T0 + 2 * DAY
    elif breakage == "tampered":
        raw = fetcher.fetch(url + "manifest.sxg").body.replace(b'"date":' + str(T0).encode(),
                                                               b'"date":' + str(T0 - 1).encode())
        fetcher.add(url + "manifest.sxg", raw)
    elif breakage == "wrong-url":
        other = sign_envelope(registry.principal("developer:party0.example"),
                              registry.cert_for("developer:party0.example"),
                              manifest(inline(0, b"w()"), url="https://party0.example/other"), T0, DAY)
        fetcher.add(url + "manifest.sxg", other.to_json())
    v = verdict(page, shop, fetcher=fetcher, opts=EvaluationOptions(registry=opts_registry, now=now))
    assert v.codes() == ["DelegationUnresolvable"]


def test_expired_delegate_manifest_refreshed_from_validity_url():
    page, shop, fetcher, registry = delegation_world(1)
    url = "https://party0.example/"
    dev = registry.principal("developer:party0.example")
    cert = registry.cert_for("developer:party0.example")
    m = manifest(inline(0, b"w()"), url=url)
    stale = sign_envelope(dev, cert, m, T0, DAY, validity_url=url + "fresh.sxg")
    fetcher.add(url + "manifest.sxg", stale.to_json())
    fetcher.add(url + "fresh.sxg", sign_envelope(dev, cert, m, T0 + 2 * DAY, DAY).to_json())
    v = verdict(page, shop, fetcher=fetcher, opts=EvaluationOptions(registry=registry, now=T0 + 2 * DAY + 5))
    assert v.ok


def test_inline_manifest_header_wins():
    page, shop, fetcher, registry = delegation_world(1)
    url = "https://party0.example/"
    env = sign_envelope(registry.principal("developer:party0.example"), registry.cert_for("developer:party0.example"),
                        manifest(inline(0, b"w()"), url=url), T0, DAY)
    fetcher.add(url, b"<script>w()</script>", headers={"x-acc-js-man": env.to_header(),
                                                       "x-acc-js-link": "https://nowhere.example/"})
    assert verdict(page, shop, fetcher=fetcher, opts=EvaluationOptions(registry=registry, now=T0)).ok


def test_generated_manifest_of_delegated_world_complies():
    page, _, fetcher, _ = delegation_world(2)
    report = measure(page, PAGE, fetcher=fetcher)
    assert evaluate(report, generate_manifest(report)).ok

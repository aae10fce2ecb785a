"""Offline case-study fixtures with deterministic keys.

Each study is a first-party page plus every third-party resource it needs,
served by a :class:`DictFetcher`. Contents are synthetic; the shapes follow
the usual deployment patterns: a single inline script, a pinned CDN
library, a chain of delegated iframes, and blind-trusted ad content next to
a delegated wallet.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .crypto import DAY, KeyRegistry, Principal, Role, SignedEnvelope, keygen, sign_envelope
from .manifest import Manifest, manifest_from_dict, serialize_manifest
from .measurement import DictFetcher, FetchResponse
from .measurement.fetcher import LINK_HEADER, MANIFEST_HEADER
from .sri import compute_sri

T0 = 1_700_000_000
ENVELOPE_TTL = 30 * DAY
NAMES = ("hello-world", "trusted-third-party", "delegate", "untrusted-sandbox")

HELLO_URL = "http://www.helloworld.com/"
HELLO_HTML = """<html><head>
  <meta charset="utf-8" name="x-acc-js-link" content="http://www.helloworld.com/manifest.sxg">
</head><body>
  <script>console.log("Hello World")</script>
</body></html>
"""

JQUERY_URL = "https://ajax.googleapis.com/ajax/libs/jquery/3.6.1/jquery.min.js"
JQUERY_BODY = b"/*! jQuery stand-in */ window.$ = function (s) { return { html: function (t) {} }; };\n"

SHOP_URL = "https://www.example-shop.com/"
WALLET_URL = "https://wallet.nimiq.com/"
HUB_URL = "https://hub.nimiq.com/iframe.html"
KEYGUARD_URL = "https://keyguard.nimiq.com/"
ADS_ORIGIN = "https://pagead2.googlesyndication.com"
AD_PAGE_URL = "https://www.helloworld.com/"


def _script_body(name: str) -> bytes:
    return f"/* {name} */ (function () {{ console.log({json.dumps(name)}); }})();\n".encode("utf-8")


WALLET_SCRIPTS = [f"{WALLET_URL}js/{n}.js" for n in ("runtime", "vendor", "common", "main", "i18n")]
HUB_SCRIPTS = [f"https://hub.nimiq.com/js/{n}.js" for n in
               ("runtime", "vendor", "rpc", "storage", "network", "iframe", "i18n")]
KEYGUARD_SCRIPTS = [f"{KEYGUARD_URL}{n}.js" for n in ("web-offline", "common", "request")]
AD_SCRIPTS = [f"{ADS_ORIGIN}/pagead/js/{n}.js" for n in
              ("adsbygoogle", "show_ads_impl", "reactive", "sodar", "ufs", "fy")]
AD_FRAMES = [f"https://googleads.g.doubleclick.net/pagead/ads?slot={i}" for i in range(6)]
AD_DYNAMIC_FRAME = "https://googleads.g.doubleclick.net/pagead/ads?slot=refresh"


@dataclass
class CaseStudy:
    name: str
    url: str
    page: bytes
    manifest: Manifest
    envelope: SignedEnvelope
    fetcher: DictFetcher
    registry: KeyRegistry
    now: int = T0
    mutations: str | None = None
    signers: dict[str, tuple[Principal, Any]] = field(default_factory=dict)
    # Third-party manifests by URL, as served (signed) by the fetcher.
    third_party: dict[str, Manifest] = field(default_factory=dict)


def _developer(registry: KeyRegistry, cn: str) -> tuple[Principal, Any]:
    return keygen(Role.DEVELOPER, cn, 90 * DAY, registry=registry, now=T0, seed=f"casestudy/{cn}".encode())


def _sign(dev, manifest: Manifest) -> SignedEnvelope:
    principal, cert = dev
    return sign_envelope(principal, cert, manifest, T0, ENVELOPE_TTL,
                         validity_url=manifest.url.rstrip("/") + "/manifest.validity")


def _html(scripts: list[str], extra: str = "", defer: bool = False) -> bytes:
    attr = " defer" if defer else ""
    tags = "\n".join(f'  <script src="{u}"{attr}></script>' for u in scripts)
    return f"<html><head>\n{tags}\n</head><body>{extra}</body></html>\n".encode("utf-8")


def _external(seq: int | None, url: str, *, load: str = "sync", dynamic: bool = False, trust: str = "assert",
              key: str = "src", **extra) -> dict:
    block = {"type": "external", key: url, "load": load, "dynamic": dynamic, "trust": trust, **extra}
    if seq is not None:
        block["seq"] = seq
    if trust == "assert":
        block["hash"] = str(compute_sri(_script_body(url)))
    return block


# -- Nimiq-shaped delegation chain -------------------------------------------------


def keyguard_manifest() -> dict:
    return {"url": KEYGUARD_URL, "manifest_version": "v0", "contents": [
        _external(i, u, load="defer", key="link") for i, u in enumerate(KEYGUARD_SCRIPTS)]}


def hub_blocks() -> list[dict]:
    blocks = [_external(i, u) for i, u in enumerate(HUB_SCRIPTS)]
    blocks.append({"seq": 7, "type": "iframe", "src_type": "link", "src": KEYGUARD_URL, "sandbox": "",
                   "dynamic": True, "trust": "delegate"})
    return blocks


def wallet_manifest() -> dict:
    blocks = [_external(i, u) for i, u in enumerate(WALLET_SCRIPTS)]
    blocks.append({"seq": 3, "type": "iframe", "src_type": "link", "src": HUB_URL, "sandbox": "",
                   "dynamic": True, "trust": "assert", "manifest": hub_blocks()})
    return {"url": WALLET_URL, "manifest_version": "v0", "contents": blocks}


SHOP_HTML = """<html><body>
 <script type="text/javascript">
  function addTransaction () {
    window.postMessage({'id': '123', 'amount': '10n', 'from':'abc'}, 'https://wallet.nimiq.com/');}
 </script>
 <script>var cart = [];</script>
 <iframe src="https://wallet.nimiq.com/" sandbox="allow-scripts" onload="addTransaction()"></iframe>
</body></html>
"""


def shop_manifest() -> dict:
    inline_a = SHOP_HTML.split("<script type=\"text/javascript\">")[1].split("</script>")[0]
    return {"url": SHOP_URL, "manifest_version": "v2", "contents": [
        {"seq": 0, "type": "inline", "load": "sync", "trust": "assert", "hash": str(compute_sri(inline_a.encode()))},
        {"seq": 1, "type": "inline", "load": "sync", "trust": "assert",
         "hash": str(compute_sri(b"var cart = [];"))},
        {"seq": 2, "type": "iframe", "src_type": "link", "src": WALLET_URL, "sandbox": "allow-scripts",
         "dynamic": False, "trust": "delegate"},
        {"seq": 3, "type": "event_handler", "trust": "assert", "hash": str(compute_sri(b"addTransaction()"))},
    ]}


def _serve_scripts(fetcher: DictFetcher, urls: list[str]) -> None:
    for u in urls:
        fetcher.add(u, _script_body(u))


def add_nimiq(fetcher: DictFetcher, registry: KeyRegistry, *, wallet: dict | None = None,
              keyguard: dict | None = None) -> dict[str, Manifest]:
    """Serve wallet, hub and keyguard, with signed wallet and keyguard manifests."""
    wallet_m = manifest_from_dict(wallet or wallet_manifest())
    keyguard_m = manifest_from_dict(keyguard or keyguard_manifest())
    wallet_env = _sign(_developer(registry, "wallet.nimiq.com"), wallet_m)
    keyguard_env = _sign(_developer(registry, "keyguard.nimiq.com"), keyguard_m)

    _serve_scripts(fetcher, WALLET_SCRIPTS + HUB_SCRIPTS + KEYGUARD_SCRIPTS)
    fetcher.add(WALLET_URL, _html(WALLET_SCRIPTS), headers={LINK_HEADER: WALLET_URL + "manifest.sxg"},
                mutations=f'ADD AfterLoad <iframe src="{HUB_URL}" sandbox=""></iframe>\n')
    fetcher.add(WALLET_URL + "manifest.sxg", wallet_env.to_json())
    fetcher.add(HUB_URL, _html(HUB_SCRIPTS),
                mutations=f'ADD AfterLoad <iframe src="{KEYGUARD_URL}" sandbox=""></iframe>\n')
    fetcher.add(KEYGUARD_URL, _html(KEYGUARD_SCRIPTS, defer=True), headers={MANIFEST_HEADER: keyguard_env.to_header()})
    return {WALLET_URL: wallet_m, KEYGUARD_URL: keyguard_m}


# -- builders ----------------------------------------------------------------------


def _finish(name, url, page, manifest_dict, fetcher, registry, cn, third_party=None, mutations=None) -> CaseStudy:
    manifest = manifest_from_dict(manifest_dict)
    dev = _developer(registry, cn)
    env = _sign(dev, manifest)
    fetcher.add(url, page, mutations=mutations)
    return CaseStudy(name, url, page, manifest, env, fetcher, registry, T0, mutations, {cn: dev}, third_party or {})


def build_hello_world() -> CaseStudy:
    page = HELLO_HTML.encode("utf-8")
    manifest = {"url": HELLO_URL, "manifest_version": "v0", "contents": [
        {"seq": 0, "type": "inline", "load": "sync", "trust": "assert",
         "hash": str(compute_sri(b'console.log("Hello World")'))}]}
    fetcher, registry = DictFetcher(), KeyRegistry()
    cs = _finish("hello-world", HELLO_URL, page, manifest, fetcher, registry, "helloworld.com")
    fetcher.add(HELLO_URL + "manifest.sxg", cs.envelope.to_json())
    return cs


def build_trusted_third_party() -> CaseStudy:
    integrity = compute_sri(JQUERY_BODY, "sha384")
    page = (f'<html><head>\n  <script src="{JQUERY_URL}" integrity="{integrity}" crossorigin="anonymous"></script>'
            '</head><body>\n  <script>$("body").html("Hello World")</script>\n</body></html>\n').encode("utf-8")
    manifest = {"url": HELLO_URL, "manifest_version": "v1", "contents": [
        {"seq": 0, "type": "external", "src": JQUERY_URL, "load": "sync", "trust": "assert",
         "hash": str(integrity), "crossorigin": "anonymous"},
        {"seq": 1, "type": "inline", "load": "sync", "trust": "assert",
         "hash": str(compute_sri(b'$("body").html("Hello World")'))}]}
    fetcher, registry = DictFetcher(), KeyRegistry()
    fetcher.add(JQUERY_URL, JQUERY_BODY)
    return _finish("trusted-third-party", HELLO_URL, page, manifest, fetcher, registry, "helloworld.com")


def build_delegate(*, shop: dict | None = None, wallet: dict | None = None, keyguard: dict | None = None) -> CaseStudy:
    """Shop page delegating to a wallet iframe, whose hub iframe delegates to a keyguard.

    The optional dicts replace the default manifests, which lets tests sign
    altered versions of any link in the chain.
    """
    fetcher, registry = DictFetcher(), KeyRegistry()
    third = add_nimiq(fetcher, registry, wallet=wallet, keyguard=keyguard)
    return _finish("delegate", SHOP_URL, SHOP_HTML.encode("utf-8"), shop or shop_manifest(), fetcher, registry,
                   "example-shop.com", third)


def untrusted_sandbox_manifest() -> dict:
    blocks = [_external(i, u, trust="blind-trust", crossorigin="anonymous") for i, u in enumerate(AD_SCRIPTS)]
    blocks.append({"seq": 6, "type": "iframe", "src_type": "link", "src": WALLET_URL,
                   "sandbox": "allow-same-origin allow-scripts", "dynamic": False, "trust": "delegate"})
    blocks += [{"seq": 7 + i, "type": "iframe", "src_type": "link", "src": u, "dynamic": False,
                "trust": "blind-trust"} for i, u in enumerate(AD_FRAMES)]
    blocks.append({"type": "iframe", "src_type": "link", "src": AD_DYNAMIC_FRAME, "dynamic": True,
                   "trust": "blind-trust"})
    return {"url": AD_PAGE_URL, "manifest_version": "v3", "contents": blocks}


def build_untrusted_sandbox() -> CaseStudy:
    scripts = "\n".join(f'  <script src="{u}" crossorigin="anonymous"></script>' for u in AD_SCRIPTS)
    frames = "\n".join(f'  <iframe src="{u}"></iframe>' for u in AD_FRAMES)
    page = (f"<html><head>\n{scripts}\n</head><body>\n"
            f'  <iframe src="{WALLET_URL}" sandbox="allow-same-origin allow-scripts"></iframe>\n'
            f"{frames}\n</body></html>\n").encode("utf-8")
    mutations = f'ADD AfterLoad <iframe src="{AD_DYNAMIC_FRAME}"></iframe>\n'
    fetcher, registry = DictFetcher(), KeyRegistry()
    third = add_nimiq(fetcher, registry)
    for u in AD_SCRIPTS:
        fetcher.add(u, _script_body(u))
    for u in AD_FRAMES + [AD_DYNAMIC_FRAME]:
        fetcher.add(u, None)  # cross-origin ad content, never observable
    return _finish("untrusted-sandbox", AD_PAGE_URL, page, untrusted_sandbox_manifest(), fetcher, registry,
                   "helloworld.com", third, mutations)


BUILDERS: dict[str, Callable[[], CaseStudy]] = {
    "hello-world": build_hello_world,
    "trusted-third-party": build_trusted_third_party,
    "delegate": build_delegate,
    "untrusted-sandbox": build_untrusted_sandbox,
}


def build_case_study(name: str) -> CaseStudy:
    try:
        return BUILDERS[name]()
    except KeyError:
        raise ValueError(f"unknown case study {name!r}; choose from {', '.join(NAMES)}") from None


def write_case_study(cs: CaseStudy, directory: str | Path) -> Path:
    """Materialize a case study as a fixtures directory.

    Layout: ``page.html``, optional ``page.mutations``, ``manifest.json``,
    ``manifest.sxg.json``, ``fixtures.json`` plus ``files/`` for the
    fetcher, ``keys/`` for the key registry and ``casestudy.json``.
    """
    root = Path(directory)
    files = root / "files"
    files.mkdir(parents=True, exist_ok=True)
    (root / "page.html").write_bytes(cs.page)
    if cs.mutations:
        (root / "page.mutations").write_text(cs.mutations, encoding="utf-8")
    (root / "manifest.json").write_text(serialize_manifest(cs.manifest, indent=2) + "\n", encoding="utf-8")
    (root / "manifest.sxg.json").write_text(cs.envelope.to_json(indent=2) + "\n", encoding="utf-8")
    index: dict[str, Any] = {}
    for i, url in enumerate(sorted(cs.fetcher.responses)):
        resp: FetchResponse = cs.fetcher.responses[url]
        entry: dict[str, Any] = {}
        if resp.headers:
            entry["headers"] = dict(resp.headers)
        if resp.body is None:
            entry["opaque"] = True
        else:
            (files / f"{i:03d}.body").write_bytes(resp.body)
            entry["body"] = f"files/{i:03d}.body"
        if resp.mutations:
            (files / f"{i:03d}.mutations").write_text(resp.mutations, encoding="utf-8")
            entry["mutations"] = f"files/{i:03d}.mutations"
        index[url] = entry
    (root / "fixtures.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    cs.registry.save(root / "keys")
    meta = {"name": cs.name, "url": cs.url, "now": cs.now, "page": "page.html",
            "mutations": "page.mutations" if cs.mutations else None, "envelope": "manifest.sxg.json"}
    (root / "casestudy.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return root


def with_manifest(cs: CaseStudy, manifest: Manifest) -> CaseStudy:
    """Same study with a re-signed first-party manifest."""
    (cn, dev), = cs.signers.items()
    return replace(cs, manifest=manifest, envelope=_sign(dev, manifest))

"""Active-content extraction from HTML documents."""

from __future__ import annotations

from dataclasses import dataclass
from html.parser import HTMLParser
from importlib import resources
from urllib.parse import urljoin

from ..manifest import ElementKind, LoadMode, SandboxPolicy, SrcType
from ..sri import compute_sri, parse_integrity
from .fetcher import LINK_HEADER, ResourceFetcher
from .model import ActiveElement

MAX_IFRAME_DEPTH = 8


class ParseFailure(ValueError):
    pass


def _load_event_handlers() -> frozenset[str]:
    text = resources.files(__package__).joinpath("event_handlers.txt").read_text(encoding="utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


EVENT_HANDLERS = _load_event_handlers()


@dataclass
class RawElement:
    tag: str
    attrs: list[tuple[str, str | None]]
    text: str = ""

    def get(self, name: str) -> str | None:
        for key, value in self.attrs:
            if key == name:
                return "" if value is None else value
        return None

    def has(self, name: str) -> bool:
        return any(key == name for key, _ in self.attrs)


class _Collector(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.nodes: list[RawElement] = []
        self.meta_link: str | None = None
        self._script: RawElement | None = None
        self._script_line = 0
        self._chunks: list[str] = []

    def _interesting(self, tag: str, attrs) -> bool:
        return tag in ("script", "iframe") or any(k in EVENT_HANDLERS for k, _ in attrs)

    def handle_starttag(self, tag, attrs):
        self._start(tag, attrs, closed=False)

    def handle_startendtag(self, tag, attrs):
        self._start(tag, attrs, closed=True)

    def _start(self, tag, attrs, closed):
        if tag == "meta":
            name = dict(attrs).get("name") or dict(attrs).get("http-equiv")
            if name and name.lower() == LINK_HEADER and self.meta_link is None:
                self.meta_link = dict(attrs).get("content")
        if not self._interesting(tag, attrs):
            return
        node = RawElement(tag, list(attrs))
        self.nodes.append(node)
        if tag == "script" and not closed:
            self._script = node
            self._script_line = self.getpos()[0]
            self._chunks = []

    def handle_data(self, data):
        if self._script is not None:
            self._chunks.append(data)

    def handle_endtag(self, tag):
        if tag == "script" and self._script is not None:
            self._script.text = "".join(self._chunks)
            self._script = None


def _decode(document: bytes | str) -> str:
    if isinstance(document, bytes):
        document = document.decode("utf-8", errors="surrogateescape")
    # HTML input-stream preprocessing normalizes newlines.
    return document.replace("\r\n", "\n").replace("\r", "\n")


def _encode(text: str) -> bytes:
    return text.encode("utf-8", errors="surrogateescape")


def parse_raw(document: bytes | str) -> tuple[list[RawElement], str | None]:
    """Return the raw script/iframe/handler-bearing elements and any manifest meta link."""
    parser = _Collector()
    parser.feed(_decode(document))
    parser.close()
    if parser._script is not None:
        raise ParseFailure(f"line {parser._script_line}: unterminated <script> element at end of document")
    return parser.nodes, parser.meta_link


def _load_mode(node: RawElement) -> LoadMode:
    if node.has("async"):
        return LoadMode.ASYNC
    if node.has("defer"):
        return LoadMode.DEFER
    return LoadMode.SYNC


def _crossorigin(node: RawElement) -> str | None:
    value = node.get("crossorigin")
    if value is None:
        return None
    # Missing or empty value is the anonymous state.
    return value.strip().lower() or "anonymous"


def _resolve(src: str, base_url: str | None) -> str:
    src = src.strip()
    return urljoin(base_url, src) if base_url else src


def elements_from_raw(
    nodes: list[RawElement],
    *,
    start_index: int = 0,
    base_url: str | None = None,
    fetcher: ResourceFetcher | None = None,
    depth: int = 0,
) -> list[ActiveElement]:
    from .replay import measure  # iframe documents are measured recursively

    out: list[ActiveElement] = []
    idx = start_index
    for node in nodes:
        if node.tag == "script":
            src = node.get("src")
            if src is not None:
                url = _resolve(src, base_url)
                content = None
                if fetcher is not None:
                    resp = fetcher.fetch(url)
                    if resp is not None and resp.body is not None:
                        content = resp.body
                out.append(ActiveElement(
                    kind=ElementKind.EXTERNAL, order_index=idx, src=url, content=content,
                    content_hash=compute_sri(content) if content is not None else None,
                    integrity=tuple(parse_integrity(node.get("integrity"))),
                    integrity_attr=node.get("integrity"),
                    crossorigin=_crossorigin(node), load=_load_mode(node), tag="script",
                ))
            else:
                content = _encode(node.text)
                out.append(ActiveElement(
                    kind=ElementKind.INLINE, order_index=idx, content=content,
                    content_hash=compute_sri(content), load=_load_mode(node), tag="script",
                ))
            idx += 1
        elif node.tag == "iframe":
            sandbox_attr = node.get("sandbox")
            sandbox = SandboxPolicy.parse(sandbox_attr) if sandbox_attr is not None else None
            src = node.get("src")
            srcdoc = node.get("srcdoc")
            common = dict(kind=ElementKind.IFRAME, order_index=idx, sandbox=sandbox,
                          crossorigin=_crossorigin(node), tag="iframe")
            if srcdoc is not None or src is None:
                # No src at all loads about:blank, which is an empty document.
                content = _encode(srcdoc or "")
                el = ActiveElement(src_type=SrcType.SRCDOC, content=content,
                                   content_hash=compute_sri(content), **common)
            elif src is not None and src.strip().lower().startswith("javascript:"):
                content = _encode(src)
                el = ActiveElement(src_type=SrcType.SCRIPT, content=content,
                                   content_hash=compute_sri(content), **common)
            else:
                url = _resolve(src, base_url)
                content = None
                children = None
                if fetcher is not None and depth < MAX_IFRAME_DEPTH:
                    resp = fetcher.fetch(url)
                    if resp is not None and resp.body is not None:
                        content = resp.body
                        inner = measure(resp.body, url, mutations=resp.mutations, fetcher=fetcher, depth=depth + 1)
                        children = inner.elements
                el = ActiveElement(src_type=SrcType.EXTERNAL, src=url, content=content,
                                   content_hash=compute_sri(content) if content is not None else None,
                                   children=children, **common)
            out.append(el)
            idx += 1
        for key, value in node.attrs:
            if key in EVENT_HANDLERS:
                content = _encode(value or "")
                out.append(ActiveElement(
                    kind=ElementKind.EVENT_HANDLER, order_index=idx, content=content,
                    content_hash=compute_sri(content), handler=key, tag=node.tag,
                ))
                idx += 1
    return out


def extract_static(
    document: bytes | str,
    *,
    base_url: str | None = None,
    fetcher: ResourceFetcher | None = None,
    depth: int = 0,
) -> list[ActiveElement]:
    """Active elements of a document in document order.

    Scripts become inline or external elements, every global event-handler
    attribute becomes its own element (hashed over the attribute value),
    and iframes are classified as srcdoc, ``javascript:`` script or external
    URL. With a fetcher, external script bodies are hashed and external
    iframe documents are measured into ``children``.
    """
    nodes, _ = parse_raw(document)
    return elements_from_raw(nodes, base_url=base_url, fetcher=fetcher, depth=depth)

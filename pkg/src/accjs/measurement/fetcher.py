"""Offline stand-ins for HTTP: resource fetchers backed by dicts or fixture directories."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

MANIFEST_HEADER = "x-acc-js-man"
LINK_HEADER = "x-acc-js-link"


@dataclass(frozen=True)
class FetchResponse:
    """A fetched resource.

    ``body`` is None when the resource exists but its content is opaque to
    the measuring context (cross-origin iframes). ``mutations`` is the
    mutation script observed inside a fetched document, if any.
    """

    headers: Mapping[str, str] = field(default_factory=dict)
    body: bytes | None = None
    mutations: str | None = None

    def header(self, name: str) -> str | None:
        name = name.lower()
        for key, value in self.headers.items():
            if key.lower() == name:
                return value
        return None


class ResourceFetcher(Protocol):
    def fetch(self, url: str) -> FetchResponse | None: ...


class DictFetcher:
    """Serves responses from an in-memory mapping. Safe for concurrent reads."""

    def __init__(self, responses: Mapping[str, FetchResponse] | None = None):
        self.responses: dict[str, FetchResponse] = dict(responses or {})

    def add(self, url: str, body: bytes | str | None = None, headers: Mapping[str, str] | None = None,
            mutations: str | None = None) -> None:
        if isinstance(body, str):
            body = body.encode("utf-8")
        self.responses[url] = FetchResponse(dict(headers or {}), body, mutations)

    def fetch(self, url: str) -> FetchResponse | None:
        return self.responses.get(url)


class DirectoryFetcher(DictFetcher):
    """Fetcher backed by a directory with a ``fixtures.json`` index.

    Index entries map a URL to ``{"body": <file>, "text": <inline body>,
    "headers": {...}, "mutations": <file>, "opaque": bool}``; all keys are
    optional.
    """

    INDEX = "fixtures.json"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        index = json.loads((self.root / self.INDEX).read_text(encoding="utf-8"))
        responses = {}
        for url, entry in index.items():
            body: bytes | None = None
            if "body" in entry:
                body = (self.root / entry["body"]).read_bytes()
            elif "text" in entry:
                body = entry["text"].encode("utf-8")
            if entry.get("opaque"):
                body = None
            mutations = None
            if "mutations" in entry:
                mutations = (self.root / entry["mutations"]).read_text(encoding="utf-8")
            responses[url] = FetchResponse(dict(entry.get("headers", {})), body, mutations)
        super().__init__(responses)

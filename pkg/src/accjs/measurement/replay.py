"""Replay of DOM mutation streams over a static measurement."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

from ..manifest import ElementKind, SrcType, strip_query
from .extract import elements_from_raw, parse_raw
from .fetcher import ResourceFetcher
from .model import ActiveElement, MeasurementReport


class Action(str, Enum):
    ADD = "ADD"
    REMOVE = "REMOVE"


class Phase(str, Enum):
    BEFORE_LOAD = "BeforeLoad"
    AFTER_LOAD = "AfterLoad"


_PHASES = {"beforeload": Phase.BEFORE_LOAD, "before": Phase.BEFORE_LOAD,
           "afterload": Phase.AFTER_LOAD, "after": Phase.AFTER_LOAD}


class UnknownTarget(LookupError):
    pass


class MutationSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class MutationEvent:
    """An element appended to or removed from the DOM.

    ``element`` is the serialized HTML of the element. Edits are expressed
    as a REMOVE of the old element followed by an ADD of the new one.
    """

    action: Action
    phase: Phase
    element: str

    def to_line(self) -> str:
        body = self.element
        if "\n" in body or body.startswith('"'):
            body = json.dumps(body)
        return f"{self.action.value} {self.phase.value} {body}"


def parse_mutation_script(text: str) -> list[MutationEvent]:
    """Parse ``ADD|REMOVE <phase> <element>`` lines; ``#`` starts a comment line.

    The element may be given as a JSON string to embed newlines.
    """
    events = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 2)
        if len(parts) < 3:
            raise MutationSyntaxError(f"line {lineno}: expected '<ACTION> <phase> <element>'")
        action_s, phase_s, body = parts
        try:
            action = Action(action_s.upper())
        except ValueError:
            raise MutationSyntaxError(f"line {lineno}: unknown action {action_s!r}") from None
        phase = _PHASES.get(phase_s.lower())
        if phase is None:
            raise MutationSyntaxError(f"line {lineno}: unknown phase {phase_s!r}")
        if body.startswith('"'):
            try:
                body = json.loads(body)
            except json.JSONDecodeError as exc:
                raise MutationSyntaxError(f"line {lineno}: bad JSON string: {exc}") from None
        events.append(MutationEvent(action, phase, body))
    return events


def _removal_key(el: ActiveElement) -> tuple:
    # Fetched bodies are not part of an element's DOM identity.
    fetched = el.kind is ElementKind.EXTERNAL or el.src_type is SrcType.EXTERNAL
    return (el.kind, el.src, el.src_type, el.handler, None if fetched else el.content)


def replay_mutations(
    base: Iterable[ActiveElement],
    events: Iterable[MutationEvent],
    *,
    url: str = "",
    base_url: str | None = None,
    fetcher: ResourceFetcher | None = None,
    depth: int = 0,
    manifest_link: str | None = None,
) -> MeasurementReport:
    """Apply a mutation stream to the statically extracted elements.

    Elements added before the load event join the static order; elements
    added after it are dynamic. Removed elements stay in the list marked
    non-persistent.
    """
    elements = list(base)
    next_idx = max((e.order_index for e in elements), default=-1) + 1
    boundary: int | None = None
    for ev in events:
        if ev.phase is Phase.AFTER_LOAD and boundary is None:
            boundary = next_idx
        elif ev.phase is Phase.BEFORE_LOAD and boundary is not None:
            raise ValueError("BeforeLoad mutation after the load boundary")
        nodes, _ = parse_raw(ev.element)
        if ev.action is Action.ADD:
            added = elements_from_raw(nodes, start_index=next_idx, base_url=base_url or url or None,
                                      fetcher=fetcher, depth=depth)
            dynamic = ev.phase is Phase.AFTER_LOAD
            elements.extend(replace(e, dynamic=dynamic) for e in added)
            next_idx += len(added)
        else:
            targets = elements_from_raw(nodes, base_url=base_url or url or None)
            if not targets:
                raise UnknownTarget(f"removal does not describe an active element: {ev.element!r}")
            for target in targets:
                key = _removal_key(target)
                for i, el in enumerate(elements):
                    if el.persistent and _removal_key(el) == key:
                        elements[i] = replace(el, persistent=False)
                        break
                else:
                    raise UnknownTarget(f"no live element matches removal of {ev.element!r}")
    if boundary is None:
        boundary = next_idx
    return MeasurementReport(url=strip_query(url), elements=tuple(elements),
                             load_boundary_index=boundary, manifest_link=manifest_link)


def measure(
    document: bytes | str,
    url: str,
    *,
    mutations: str | Iterable[MutationEvent] | None = None,
    fetcher: ResourceFetcher | None = None,
    depth: int = 0,
) -> MeasurementReport:
    """Full measurement of a page: static extraction followed by mutation replay."""
    nodes, meta_link = parse_raw(document)
    base = elements_from_raw(nodes, base_url=url or None, fetcher=fetcher, depth=depth)
    if isinstance(mutations, str):
        mutations = parse_mutation_script(mutations)
    return replay_mutations(base, mutations or (), url=url, fetcher=fetcher, depth=depth,
                            manifest_link=meta_link)

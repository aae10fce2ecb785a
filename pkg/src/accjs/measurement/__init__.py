"""Active-content measurement and manifest compliance."""

from .compliance import DelegationUnresolvable, EvaluationOptions, evaluate, resolve_delegated_manifest
from .extract import EVENT_HANDLERS, ParseFailure, extract_static
from .fetcher import DictFetcher, DirectoryFetcher, FetchResponse, ResourceFetcher
from .generate import generate_manifest
from .model import ActiveElement, ComplianceVerdict, MeasurementReport, Violation
from .replay import (
    Action,
    MutationEvent,
    Phase,
    UnknownTarget,
    measure,
    parse_mutation_script,
    replay_mutations,
)
from ..sri import compute_sri

__all__ = [
    "Action", "ActiveElement", "ComplianceVerdict", "DelegationUnresolvable", "DictFetcher",
    "DirectoryFetcher", "EVENT_HANDLERS", "EvaluationOptions", "FetchResponse", "MeasurementReport",
    "MutationEvent", "ParseFailure", "Phase", "ResourceFetcher", "UnknownTarget", "Violation",
    "compute_sri", "evaluate", "extract_static", "generate_manifest", "measure", "parse_mutation_script",
    "replay_mutations", "resolve_delegated_manifest",
]

"""Protocol simulation, adversary model and security-property checkers."""

from .adversary import AdversaryState, AdversaryUnsound
from .checkers import (
    CheckResult,
    EndToEndResult,
    check_accountability,
    check_all,
    check_authentication_of_origin,
    check_authentication_of_origin_code_verify,
    check_end_to_end,
    check_nonce_uniqueness,
    check_transparency,
)
from .claims import (
    BadClaimSignature,
    Claim,
    ClaimOutcome,
    ClaimVerdict,
    NoLogEntry,
    NonceMismatch,
    verify_claim,
)
from .scenario import AdversaryPolicy, Scenario, Step, Variant, random_scenario
from .simulator import (
    SimulationResult,
    Simulator,
    run_code_delivery,
    run_code_stapling,
    run_code_verify,
    run_scenario,
)
from .terms import Signed
from .trace import Trace, TraceEvent

__all__ = [
    "AdversaryPolicy", "AdversaryState", "AdversaryUnsound", "BadClaimSignature", "CheckResult", "Claim",
    "ClaimOutcome", "ClaimVerdict", "EndToEndResult", "NoLogEntry", "NonceMismatch", "Scenario", "Signed",
    "SimulationResult", "Simulator", "Step", "Trace", "TraceEvent", "Variant", "check_accountability",
    "check_all", "check_authentication_of_origin", "check_authentication_of_origin_code_verify",
    "check_end_to_end", "check_nonce_uniqueness", "check_transparency", "random_scenario", "run_code_delivery",
    "run_code_stapling", "run_code_verify", "run_scenario", "verify_claim",
]

"""Key exchange with man-in-the-middle detection through a public ledger."""

from .config import AdversaryConfig, ConfigInvalid, ScenarioConfig, load_scenario, parse_scenario
from .ledger import (
    Exhausted,
    InvalidWindow,
    Ledger,
    LedgerError,
    LedgerUnavailable,
    Pruned,
    QueryResult,
    RateLimited,
    RetentionViolation,
)
from .protocol import (
    AbortReason,
    Aborted,
    Accepted,
    PartyState,
    Phase,
    ProtocolParams,
    Role,
    Transcript,
    Variant,
    derive_event_digest,
    ka_derive,
    ka_keygen,
    may_start,
    run_protocol1,
    run_protocol2,
    verify_commitment,
)
from .records import Context, LedgerEvent, RoundRoot, SubmitReceipt
from .sim import RunReport, Simulation, run_scenario, summarize

__version__ = "0.1.0"

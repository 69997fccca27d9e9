"""Multi-node simulator of ledger-coordinated railway control.

Track elements are resources on a replicated WORM ledger; trains book them
through a validating gatekeeper, nodes agree on the booking order, and the
physical layer (agents + element twins) only ever moves on committed state.
"""

from .contract import ContractRules, expire_reservations, fee_for
from .crypto import Keyring, canonical_json, convention_secret, hash_hex, wallet_address
from .errors import (BadHash, BadProof, BrokenLink, ConfigError, NoRoute,
                     ParseError, RailchainError, ReplayError, ValidationError)
from .events import EVENT_KINDS, EventLog
from .ledger import (Chain, LedgerBlock, Transaction, append_block,
                     derive_state, load_chain, make_tx, save_chain,
                     seal_block, state_hash, verify_chain, verify_chain_file)
from .metrics import compute_metrics
from .netsim import NetConfig, Network, PartitionSpec
from .routing import (Route, TimedRoute, filter_available,
                      find_candidate_routes, schedule)
from .scenario import Scenario, load_scenario, parse_scenario
from .state import LedgerState, Reservation, TimeWindow
from .topology import Topology, load_topology, loads_topology
from .world import World

__version__ = "0.1.0"

__all__ = [
    "ContractRules", "expire_reservations", "fee_for",
    "Keyring", "canonical_json", "convention_secret", "hash_hex",
    "wallet_address",
    "RailchainError", "ParseError", "ValidationError", "ConfigError",
    "BrokenLink", "BadHash", "BadProof", "ReplayError", "NoRoute",
    "EVENT_KINDS", "EventLog",
    "Chain", "LedgerBlock", "Transaction", "append_block", "derive_state",
    "load_chain", "make_tx", "save_chain", "seal_block", "state_hash",
    "verify_chain", "verify_chain_file",
    "compute_metrics",
    "NetConfig", "Network", "PartitionSpec",
    "Route", "TimedRoute", "filter_available", "find_candidate_routes",
    "schedule",
    "Scenario", "load_scenario", "parse_scenario",
    "LedgerState", "Reservation", "TimeWindow",
    "Topology", "load_topology", "loads_topology",
    "World",
    "__version__",
]

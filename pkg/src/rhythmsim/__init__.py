"""Deterministic vehicular-network pseudonym-privacy simulator.

Implements a randomized hybrid credential scheme (RHyTHM): vehicles cut off
from the credential infrastructure fall back to grid-aligned, group-signed
self-certified pseudonyms; connected neighbors randomly join them so neither
population stands out; an analysis layer quantifies the resulting
unlinkability against closed-form predictions.
"""

__version__ = "0.1.0"

from .analysis import (
    AnalyticalParams,
    LinkingEstimate,
    ObservationLog,
    analytic_link_avg_with_k,
    analytic_link_baseline,
    analytic_link_self_to_self,
    analytic_link_vpki_to_self,
    analytic_link_vpki_to_vpki,
    anonymity_sets,
    empirical_link_from_log,
    empirical_link_probability,
)
from .credentials import (
    PseudonymPool,
    SelfCertifiedPseudonym,
    TimeGrid,
    VpkiPseudonym,
    gamma_bounds,
    infer_grid_from_neighbor,
    slot_bounds,
)
from .crypto import CryptoProfile, MockProvider, RealProvider, get_provider, latency_of
from .engine import RunTrace, Scenario, run
from .protocol import (
    Cam,
    HsmSlot,
    OptInPolicy,
    VehicleState,
    build_cam,
    opt_in_decision,
    process_cam,
    pseudonym_update,
    revert_check,
    rhythm_init,
    verify_cam,
)
from .vpki import Infrastructure, ReachabilityModel, RevocationList

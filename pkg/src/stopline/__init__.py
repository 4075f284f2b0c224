"""stopline: decentralized schedule-driven traffic signal control.

A mesoscopic signal-control library: intersections sense approaching vehicle
clusters, schedule phases with a forward dynamic program that minimizes
cumulative weighted delay, and weight phases by queue pressure exchanged with
neighbors through a naive mean-field approximation of a network-wide queue
model.  A deterministic vertical-queue simulator and an experiment harness
reproduce the comparative experiments at desk scale.
"""

from .network import (
    DemandProfile,
    GlobalParams,
    IntersectionSpec,
    LinkSpec,
    NetworkSpec,
    NetworkValidationError,
    PhaseSpec,
    ValidatedNetwork,
    neighbor_sets,
    validate_network,
)

__version__ = "0.1.0"

__all__ = [
    "DemandProfile",
    "GlobalParams",
    "IntersectionSpec",
    "LinkSpec",
    "NetworkSpec",
    "NetworkValidationError",
    "PhaseSpec",
    "ValidatedNetwork",
    "neighbor_sets",
    "validate_network",
    "__version__",
]

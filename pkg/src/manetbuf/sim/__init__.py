"""Monte Carlo counterpart of the analytic model."""

from .simulator import (
    NetworkState,
    Opportunity,
    Outcome,
    Packet,
    ReplicationResult,
    SimReport,
    Transmission,
    cyclic_derangement,
    execute_2hr,
    mac_geometry,
    mobility_step,
    random_derangement,
    run,
    schedule,
)

__all__ = [
    "NetworkState", "Opportunity", "Outcome", "Packet", "ReplicationResult", "SimReport",
    "Transmission", "cyclic_derangement", "execute_2hr", "mac_geometry", "mobility_step",
    "random_derangement", "run", "schedule",
]

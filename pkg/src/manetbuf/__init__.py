"""Analytic model and slotted simulator for MANETs with limited source and relay buffers."""

from .analytic import (
    DelayRegime,
    FixedPoint,
    Regime,
    RelayOSD,
    SourceOSD,
    TheoryReport,
    analyze,
    bs_infinite_regime,
    expected_delay,
    limiting_delay,
    limiting_throughput,
    overflow_fixed_point,
    relay_osd,
    relay_substate_dist,
    relay_transition_probs,
    service_rate,
    source_osd,
    throughput,
    throughput_capacity,
)
from .mac import EcGeometry, ec_mac_probs, ls_mac_probs, sched_probs
from .oracle import stationary_oracle
from .params import (
    ConvergenceError,
    Mac,
    Mobility,
    NetworkParams,
    ParameterError,
    SchedProbs,
)

__version__ = "0.1.0"

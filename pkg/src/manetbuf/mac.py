"""Closed-form scheduling probabilities for the cell-partitioned MAC protocols.

A MAC provider is any callable ``NetworkParams -> SchedProbs``. The two
built-in providers cover local scheduling (LS) and equivalence-class (EC)
scheduling; any other provider can be handed to :func:`sched_probs` (and
hence to ``analyze``) directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .params import Mac, NetworkParams, ParameterError, SchedProbs

MacProvider = Callable[[NetworkParams], SchedProbs]


@dataclass(frozen=True)
class EcGeometry:
    epsilon: int
    gamma: int


def _miss_power(m: int, k: int) -> float:
    """(1 - 1/m^2)**k evaluated without losing precision for large k."""
    if m == 1:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log1p(-1.0 / (m * m)))


def ls_mac_probs(n: int, m: int) -> SchedProbs:
    if n < 4 or m < 1:
        raise ParameterError(f"LS-MAC needs n >= 4 and m >= 1, got n={n}, m={m}")
    c = m * m
    q_n1 = _miss_power(m, n - 1)
    q_n = _miss_power(m, n)
    psd = c / n - (c - 1) / (n - 1) + (c - 1) / (n * (n - 1)) * q_n1
    psr = 0.5 * ((c - 1) / (n - 1) - c / (n - 1) * q_n - q_n1)
    # cancellation can leave tiny negative residue when the exact value is 0
    psd, psr = max(psd, 0.0), max(psr, 0.0)
    return SchedProbs(psd, psr, psr)


def ec_geometry(m: int, nu: int, delta: float) -> EcGeometry:
    # the 1e-9 slack keeps an exactly-integral argument from rounding up
    eps = math.ceil((1.0 + delta) * math.sqrt(2.0) * nu + nu - 1e-9)
    return EcGeometry(epsilon=min(eps, m), gamma=(2 * nu - 1) ** 2)


def ec_mac_probs(n: int, m: int, nu: int, delta: float) -> tuple[SchedProbs, EcGeometry]:
    if n < 4 or m < 1 or nu < 1 or delta < 0:
        raise ParameterError(f"invalid EC-MAC arguments n={n}, m={m}, nu={nu}, delta={delta}")
    geo = ec_geometry(m, nu, delta)
    c, g, e2 = m * m, geo.gamma, geo.epsilon ** 2
    if g > c:
        raise ParameterError(f"EC coverage Gamma={g} exceeds the {c} cells of the network")
    q_n1 = _miss_power(m, n - 1)
    psd = ((g - c / n) / (n - 1) + (c - 1 - (g - 1) * n) / (n * (n - 1)) * q_n1) / e2
    outside = (1.0 - g / c) ** (n - 1)
    psr = ((c - g) / (n - 1) * (1.0 - q_n1) - outside) / (2.0 * e2)
    psd, psr = max(psd, 0.0), max(psr, 0.0)
    return SchedProbs(psd, psr, psr), geo


def _ls_provider(params: NetworkParams) -> SchedProbs:
    return ls_mac_probs(params.n, params.m)


def _ec_provider(params: NetworkParams) -> SchedProbs:
    return ec_mac_probs(params.n, params.m, params.nu, params.delta)[0]


_PROVIDERS: dict[str, MacProvider] = {Mac.LS.value: _ls_provider, Mac.EC.value: _ec_provider}


def sched_probs(params: NetworkParams, provider: MacProvider | None = None) -> SchedProbs:
    if provider is not None:
        return provider(params)
    try:
        return _PROVIDERS[params.mac.value](params)
    except KeyError:
        raise ParameterError(f"no MAC provider registered for {params.mac!r}") from None

"""Scenario and scheduling-probability types shared by the analytic and simulation engines."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum


class ParameterError(ValueError):
    """Raised when a scenario or probability triple violates its preconditions."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class Mac(str, Enum):
    LS = "LS"
    EC = "EC"


class Mobility(str, Enum):
    IID = "IID"
    RW = "RW"


@dataclass(frozen=True)
class NetworkParams:
    """Complete description of one buffer-limited MANET scenario.

    ``nu`` and ``delta`` only matter for EC-MAC; ``mobility`` only matters
    to the simulator (the analytic model assumes uniform stationary locations).
    """

    n: int = 72
    m: int = 6
    Bs: int = 5
    Br: int = 5
    lambda_s: float = 0.05
    feedback: bool = False
    mac: Mac = Mac.LS
    nu: int = 1
    delta: float = 1.0
    mobility: Mobility = Mobility.IID

    def __post_init__(self):
        object.__setattr__(self, "mac", Mac(self.mac))
        object.__setattr__(self, "mobility", Mobility(self.mobility))
        for name in ("n", "m", "Bs", "Br", "nu"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise ParameterError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n < 4:
            raise ParameterError(f"n must be >= 4, got {self.n}")
        if self.m < 1:
            raise ParameterError(f"m must be >= 1, got {self.m}")
        if self.Bs < 1:
            raise ParameterError(f"Bs must be >= 1, got {self.Bs}")
        if self.Br < 0:
            raise ParameterError(f"Br must be >= 0, got {self.Br}")
        if not (0.0 < self.lambda_s <= 1.0):
            raise ParameterError(f"lambda_s must lie in (0, 1], got {self.lambda_s}")
        if self.nu < 1:
            raise ParameterError(f"nu must be >= 1, got {self.nu}")
        if not (self.delta >= 0.0) or math.isinf(self.delta):
            raise ParameterError(f"delta must be finite and >= 0, got {self.delta}")
        if self.mac is Mac.EC and (2 * self.nu - 1) > self.m:
            raise ParameterError(
                f"EC coverage (2*nu-1)^2 = {(2 * self.nu - 1) ** 2} exceeds m^2 = {self.m ** 2}"
            )

    def replace(self, **changes) -> "NetworkParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mac"] = self.mac.value
        d["mobility"] = self.mobility.value
        return d

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class SchedProbs:
    """Per-slot chances of Source-to-Destination, Source-to-Relay and Relay-to-Destination."""

    psd: float
    psr: float
    prd: float

    def __post_init__(self):
        for name in ("psd", "psr", "prd"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ParameterError(f"{name} must lie in [0, 1], got {value}")
        if abs(self.psr - self.prd) > 1e-12:
            raise ParameterError(f"psr ({self.psr}) must equal prd ({self.prd})")
        if self.psd + self.psr + self.prd > 1.0 + 1e-12:
            raise ParameterError("psd + psr + prd exceeds 1")

    def to_dict(self) -> dict:
        return asdict(self)

"""Exact evaluation of the buffer-limited two-hop relay queueing model.

The source buffer is a discrete-time Bernoulli/Bernoulli/1/Bs queue and the
relay buffer a birth-death chain on {0..Br}; the two couple only through the
source-empty probability (always) and the relay-overflow probability (with
feedback, where a fixed point is solved).  Every public function is a pure
function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

import numpy as np

from .mac import MacProvider, sched_probs
from .params import ConvergenceError, NetworkParams, ParameterError, SchedProbs

#: |lambda_s - mu_s| below which the removable tau = 1 singularity is used.
TAU_ONE_TOL = 1e-9
#: Fixed-point accuracy used by the original algorithm.
FIXED_POINT_TOL = 1e-6
FIXED_POINT_MAX_ITER = 10_000


@dataclass(frozen=True)
class SourceOSD:
    pi_s: np.ndarray
    mu_s: float
    tau: float

    @property
    def empty(self) -> float:
        return float(self.pi_s[0])


@dataclass(frozen=True)
class RelayOSD:
    pi_r: np.ndarray

    @property
    def overflow(self) -> float:
        return float(self.pi_r[-1])


@dataclass(frozen=True)
class FixedPoint:
    pi_rBr: float
    mu_s: float
    iterations: int
    residual: float
    damped: bool = False


@dataclass(frozen=True)
class TheoryReport:
    params: NetworkParams
    probs: SchedProbs
    T: float
    ED: float
    Tc: float
    Ls: float
    Lr: float
    pi_s0: float
    pi_rBr: float
    mu_s: float
    tau: float
    pi_s: np.ndarray = field(repr=False)
    pi_r: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "probs": self.probs.to_dict(),
            "T": self.T,
            "ED": self.ED,
            "Tc": self.Tc,
            "Ls": self.Ls,
            "Lr": self.Lr,
            "pi_s0": self.pi_s0,
            "pi_rBr": self.pi_rBr,
            "mu_s": self.mu_s,
            "tau": self.tau,
            "pi_s": [float(v) for v in self.pi_s],
            "pi_r": [float(v) for v in self.pi_r],
            "fixed_point_iterations": self.iterations,
            "fixed_point_residual": self.residual,
        }


class Regime(str, Enum):
    """Which buffer(s) are taken to infinity in the limiting throughput."""

    BsInf = "BsInf"
    BrInf = "BrInf"
    BothInf = "BothInf"


class DelayRegime(str, Enum):
    BsInfSaturated = "BsInfSaturated"
    BsInfStable = "BsInfStable"
    BrInf = "BrInf"
    BothInfStable = "BothInfStable"


# ---------------------------------------------------------------------------
# source buffer


def service_rate(probs: SchedProbs, feedback: bool, pi_rBr: float = 0.0) -> float:
    if not feedback:
        return probs.psd + probs.psr
    if not (0.0 <= pi_rBr <= 1.0):
        raise ParameterError(f"pi_rBr must lie in [0, 1], got {pi_rBr}")
    return probs.psd + probs.psr * (1.0 - pi_rBr)


def _check_rates(lambda_s: float, mu_s: float) -> None:
    if not (0.0 <= lambda_s <= 1.0):
        raise ParameterError(f"lambda_s must lie in (0, 1], got {lambda_s}")
    if not (0.0 < mu_s <= 1.0):
        raise ParameterError(f"mu_s must lie in (0, 1], got {mu_s}")
    if lambda_s == 1.0 and mu_s == 1.0:
        raise ParameterError("lambda_s = mu_s = 1 leaves tau undefined")


def source_tau(lambda_s: float, mu_s: float) -> float:
    _check_rates(lambda_s, mu_s)
    if lambda_s == 1.0:
        return math.inf
    return lambda_s * (1.0 - mu_s) / (mu_s * (1.0 - lambda_s))


def source_empty_probability(lambda_s: float, mu_s: float, Bs: float) -> float:
    """Closed-form probability that the source buffer is empty.

    ``Bs`` may be ``math.inf``, giving ``max(1 - lambda_s/mu_s, 0)``.
    """
    tau = source_tau(lambda_s, mu_s)
    if lambda_s == 0.0:
        return 1.0
    if math.isinf(tau):
        return 0.0
    if abs(lambda_s - mu_s) < TAU_ONE_TOL:
        return 0.0 if math.isinf(Bs) else (1.0 - mu_s) / (1.0 - mu_s + Bs)
    if tau < 1.0:
        tb = 0.0 if math.isinf(Bs) else tau ** Bs
        return (mu_s - lambda_s) / (mu_s - lambda_s * tb)
    # tau > 1: divide through by tau**Bs so nothing overflows
    if math.isinf(Bs):
        return 0.0
    r = math.exp(-Bs * math.log(tau))
    return (mu_s - lambda_s) * r / (mu_s * r - lambda_s)


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    top = np.max(logw)
    w = np.exp(logw - top)
    return w / w.sum()


def source_osd(lambda_s: float, mu_s: float, Bs: int) -> SourceOSD:
    """Stationary occupancy distribution of the Bs-slot source buffer.

    Uses the unnormalized weights 1, rho, rho*tau, rho*tau**2, ... with
    rho = lambda/(mu(1-lambda)); the form is continuous through tau = 1 so
    no special casing of the removable singularity is required.
    """
    if Bs < 1:
        raise ParameterError(f"Bs must be >= 1, got {Bs}")
    tau = source_tau(lambda_s, mu_s)
    if lambda_s == 1.0:
        pi = np.zeros(Bs + 1)
        pi[Bs] = 1.0
        return SourceOSD(pi, mu_s, tau)
    if lambda_s == 0.0:
        pi = np.zeros(Bs + 1)
        pi[0] = 1.0
        return SourceOSD(pi, mu_s, tau)
    logw = np.empty(Bs + 1)
    logw[0] = 0.0
    logw[1] = math.log(lambda_s) - math.log(mu_s) - math.log1p(-lambda_s)
    if Bs > 1:
        if tau == 0.0:
            logw[2:] = -np.inf
        else:
            logw[2:] = logw[1] + np.arange(1, Bs) * math.log(tau)
    return SourceOSD(_normalize_log(logw), mu_s, tau)


def source_mean_length(tau: float, Bs: float) -> float:
    """Mean source backlog given the buffer is not full (geometric in tau).

    Summed directly rather than through the closed form, which is 0/0 at
    tau = 1 and overflows for large tau**Bs.
    """
    if math.isinf(Bs):
        return tau / (1.0 - tau) if tau < 1.0 else math.inf
    Bs = int(Bs)
    if Bs <= 1 or tau == 0.0:
        return 0.0
    if math.isinf(tau):
        return float(Bs - 1)
    i = np.arange(Bs)
    w = _normalize_log(i * math.log(tau))
    return float(np.dot(i, w))


# ---------------------------------------------------------------------------
# relay buffer


def relay_transition_probs(
    probs: SchedProbs, pi_s0: float, n: int, Br: int
) -> tuple[np.ndarray, np.ndarray]:
    """Birth and death probabilities of the relay occupancy chain.

    Returns ``(up, down)`` where ``up[i] = p(i, i+1)`` and ``down[i] = p(i, i-1)``;
    ``up[Br]`` and ``down[0]`` are zero.
    """
    if n < 4:
        raise ParameterError(f"n must be >= 4, got {n}")
    if Br < 0:
        raise ParameterError(f"Br must be >= 0, got {Br}")
    up = np.zeros(Br + 1)
    down = np.zeros(Br + 1)
    up[:Br] = probs.psr * (1.0 - pi_s0)
    i = np.arange(1, Br + 1)
    down[1:] = probs.prd * i / (n - 3 + i)
    return up, down


def _relay_log_weights(n: int, Br: int, load: float) -> np.ndarray:
    """log of C(n-3+i, i) * load**i for i = 0..Br, via running ratios."""
    logw = np.zeros(Br + 1)
    if Br == 0:
        return logw
    i = np.arange(1, Br + 1)
    if load <= 0.0:
        logw[1:] = -np.inf
        return logw
    steps = np.log(n - 3 + i) - np.log(i) + math.log(load)
    logw[1:] = np.cumsum(steps)
    return logw


def relay_osd(n: int, Br: int, pi_s0: float, psr: float = 1.0) -> RelayOSD:
    """Stationary occupancy distribution of the shared relay buffer.

    ``psr = 0`` means no relay arrivals ever happen, so all mass sits at 0.
    """
    if n < 4:
        raise ParameterError(f"n must be >= 4, got {n}")
    if Br < 0:
        raise ParameterError(f"Br must be >= 0, got {Br}")
    if not (0.0 <= pi_s0 <= 1.0):
        raise ParameterError(f"pi_s0 must lie in [0, 1], got {pi_s0}")
    if psr == 0.0:
        pi = np.zeros(Br + 1)
        pi[0] = 1.0
        return RelayOSD(pi)
    return RelayOSD(_normalize_log(_relay_log_weights(n, Br, 1.0 - pi_s0)))


def relay_mean_length(pi_r: np.ndarray) -> float:
    """Mean relay occupancy given the relay buffer is not full."""
    Br = len(pi_r) - 1
    if Br <= 1:
        return 0.0
    free = 1.0 - pi_r[-1]
    if free <= 0.0:
        return 0.0
    return float(np.dot(np.arange(Br), pi_r[:-1]) / free)


def relay_substate_dist(n: int, i: int, l: int) -> float:
    """P(l non-empty relay queues | i relay packets), all multisets equally likely."""
    if not (1 <= l <= i):
        raise ParameterError(f"need 1 <= l <= i, got l={l}, i={i}")
    num = math.comb(n - 2, l) * math.comb(i - 1, i - l)
    return float(Fraction(num, math.comb(n - 3 + i, i)))


# ---------------------------------------------------------------------------
# coupling and metrics


def _pi_s0(lambda_s: float, mu_s: float, Bs: float) -> float:
    if math.isinf(Bs):
        return source_empty_probability(lambda_s, mu_s, Bs)
    return source_osd(lambda_s, mu_s, int(Bs)).empty


def _overflow(n: int, Br: float, pi_s0: float, psr: float) -> float:
    if math.isinf(Br):
        return 1.0 if (pi_s0 == 0.0 and psr > 0.0) else 0.0
    return relay_osd(n, int(Br), pi_s0, psr).overflow


def _solve_overflow(
    lambda_s: float, probs: SchedProbs, n: int, Bs: float, Br: float, tol: float, max_iter: int
) -> FixedPoint:
    def F(x: float) -> float:
        mu = probs.psd + probs.psr * (1.0 - x)
        return _overflow(n, Br, _pi_s0(lambda_s, mu, Bs), probs.psr)

    x = 0.0
    damped = False
    prev_step = 0.0
    residual = math.inf
    for it in range(1, max_iter + 1):
        step = F(x) - x
        residual = abs(step)
        if residual < tol:
            return FixedPoint(x, probs.psd + probs.psr * (1.0 - x), it, residual, damped)
        if not damped and (step * prev_step < 0.0 or it > max_iter // 2):
            damped = True
        x = min(max(x + (0.5 * step if damped else step), 0.0), 1.0)
        prev_step = step
    raise ConvergenceError(
        f"overflow fixed point did not converge in {max_iter} iterations "
        f"(residual {residual:.3e})",
        residual=residual,
        iterations=max_iter,
    )


def overflow_fixed_point(
    params: NetworkParams,
    probs: SchedProbs,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> FixedPoint:
    """Relay-overflow probability under feedback, by iteration from 0.

    Plain iteration is tried first; it switches to half-step damping if the
    iterates oscillate or half the budget is spent.  The returned ``pi_rBr``
    satisfies ``|x - F(x)| < tol``.
    """
    if not params.feedback:
        raise ParameterError("the overflow fixed point only applies with feedback")
    if params.Br < 1:
        raise ParameterError("the overflow fixed point needs Br >= 1")
    return _solve_overflow(params.lambda_s, probs, params.n, params.Bs, params.Br, tol, max_iter)


def overflow_map(params: NetworkParams, probs: SchedProbs, x: float) -> float:
    """One application of the overflow self-map (used to check a fixed point)."""
    mu = probs.psd + probs.psr * (1.0 - x)
    return _overflow(params.n, params.Br, _pi_s0(params.lambda_s, mu, params.Bs), probs.psr)


def throughput(pi_s0: float, pi_rBr: float, probs: SchedProbs) -> float:
    busy = 1.0 - pi_s0
    return probs.psd * busy + probs.psr * busy * (1.0 - pi_rBr)


def expected_delay(
    mu_s: float, Ls: float, Lr: float, pi_rBr: float, probs: SchedProbs, n: int
) -> float:
    """Mean end-to-end delay in slots: source queueing plus delivery."""
    if mu_s <= 0.0 or math.isinf(Ls):
        return math.inf
    deliver = probs.psd + probs.psr * (1.0 - pi_rBr)
    if deliver <= 0.0:
        return math.inf
    return (1.0 + Ls) / mu_s + (n - 2 + Lr) * (1.0 - pi_rBr) / deliver


def throughput_capacity(probs: SchedProbs, n: int, Br: int) -> float:
    if n < 4 or Br < 0:
        raise ParameterError(f"need n >= 4 and Br >= 0, got n={n}, Br={Br}")
    return probs.psd + probs.psr * Br / (n - 2 + Br)


# ---------------------------------------------------------------------------
# infinite-buffer limits


def _bs_inf_service(params: NetworkParams, probs: SchedProbs, tol: float, max_iter: int) -> float:
    if not params.feedback:
        return probs.psd + probs.psr
    if params.Br == 0:
        return probs.psd
    fp = _solve_overflow(params.lambda_s, probs, params.n, math.inf, params.Br, tol, max_iter)
    return fp.mu_s


def bs_infinite_regime(
    params: NetworkParams, probs: SchedProbs, tol: float = 1e-12, max_iter: int = FIXED_POINT_MAX_ITER
) -> DelayRegime:
    """The infinite-source-buffer delay regime that applies to ``params``."""
    mu = _bs_inf_service(params, probs, tol, max_iter)
    return DelayRegime.BsInfSaturated if params.lambda_s >= mu else DelayRegime.BsInfStable


def limiting_throughput(
    params: NetworkParams,
    probs: SchedProbs,
    regime: Regime | str,
    tol: float = 1e-12,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> float:
    regime = Regime(regime)
    lam = params.lambda_s
    if regime is Regime.BothInf:
        return min(lam, probs.psd + probs.psr)
    if regime is Regime.BrInf:
        mu = probs.psd + probs.psr
        return mu * (1.0 - _pi_s0(lam, mu, params.Bs))
    mu = _bs_inf_service(params, probs, tol, max_iter)
    rho = min(lam / mu, 1.0)
    w = np.exp(_relay_log_weights(params.n, params.Br, rho))
    return probs.psd * rho + probs.psr * rho * w[:-1].sum() / w.sum()


def limiting_delay(
    params: NetworkParams,
    probs: SchedProbs,
    regime: DelayRegime | str,
    tol: float = 1e-12,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> float:
    regime = DelayRegime(regime)
    lam, n = params.lambda_s, params.n
    total = probs.psd + probs.psr
    if regime is DelayRegime.BothInfStable:
        if lam >= total:
            raise ParameterError(
                f"BothInfStable needs lambda_s < psd + psr ({lam} >= {total})"
            )
        return (n - 1 - lam) / (total - lam)
    if regime is DelayRegime.BrInf:
        tau = source_tau(lam, total)
        p0 = _pi_s0(lam, total, params.Bs)
        if p0 <= 0.0:
            return math.inf
        Ls = source_mean_length(tau, params.Bs)
        return (n - 2 + p0 * (1.0 + Ls)) / (p0 * total)
    mu = _bs_inf_service(params, probs, tol, max_iter)
    saturated = lam >= mu
    if regime is DelayRegime.BsInfSaturated:
        if not saturated:
            raise ParameterError(f"BsInfSaturated needs lambda_s >= mu_s ({lam} < {mu})")
        return math.inf
    if saturated:
        raise ParameterError(f"BsInfStable needs lambda_s < mu_s ({lam} >= {mu})")
    pi_r = relay_osd(n, params.Br, 1.0 - lam / mu, probs.psr).pi_r
    x = float(pi_r[-1])
    Lr = relay_mean_length(pi_r)
    return (1.0 - lam) / (mu - lam) + (n - 2 + Lr) * (1.0 - x) / (probs.psd + probs.psr * (1.0 - x))


# ---------------------------------------------------------------------------
# full pipeline


def analyze(
    params: NetworkParams,
    provider: Optional[MacProvider] = None,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> TheoryReport:
    """Throughput, delay, capacity and occupancy laws for one scenario.

    With feedback the overflow probability comes from the fixed point; the
    reported ``pi_rBr`` is the last entry of the relay distribution evaluated
    at that point, so all reported quantities are mutually consistent.
    """
    probs = sched_probs(params, provider)
    iterations, residual = 0, 0.0
    if params.feedback and params.Br >= 1:
        fp = _solve_overflow(
            params.lambda_s, probs, params.n, params.Bs, params.Br, tol, max_iter
        )
        mu = fp.mu_s
        iterations, residual = fp.iterations, fp.residual
    else:
        # Br = 0 with feedback: the relay is always full, S-R never fires
        mu = service_rate(probs, params.feedback, 1.0 if params.feedback else 0.0)
    if mu <= 0.0:
        raise ParameterError("the MAC grants no transmission opportunities (mu_s = 0)")
    src = source_osd(params.lambda_s, mu, params.Bs)
    p0 = src.empty
    pi_r = relay_osd(params.n, params.Br, p0, probs.psr).pi_r
    x = float(pi_r[-1])
    Ls = source_mean_length(src.tau, params.Bs)
    Lr = relay_mean_length(pi_r)
    return TheoryReport(
        params=params,
        probs=probs,
        T=throughput(p0, x, probs),
        ED=expected_delay(mu, Ls, Lr, x, probs, params.n),
        Tc=throughput_capacity(probs, params.n, params.Br),
        Ls=Ls,
        Lr=Lr,
        pi_s0=p0,
        pi_rBr=x,
        mu_s=mu,
        tau=src.tau,
        pi_s=src.pi_s,
        pi_r=pi_r,
        iterations=iterations,
        residual=residual,
    )

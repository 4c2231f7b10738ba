"""Slotted Monte Carlo simulation of the cell-partitioned two-hop relay network.

The hot loop lives in :mod:`manetbuf.sim.kernel`; this module validates
inputs, seeds one independent stream per replication, merges replications
into a :class:`SimReport`, and exposes single-step helpers (mobility,
scheduling, one 2HR transmission) for inspection and testing.

A packet is identified by its source and generation slot.  At most one
packet is born per node per slot, so ``gen_slot * n + src`` is a unique
sequence number and no separate id needs to be carried through the queues.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from statistics import NormalDist, stdev

import numpy as np

from ..mac import ec_geometry
from ..params import Mac, Mobility, NetworkParams, ParameterError
from . import kernel as K

MIN_SLOTS = 10_000
Z95 = NormalDist().inv_cdf(0.975)


class Outcome(IntEnum):
    IDLE = K.IDLE
    DELIVERED_SD = K.DELIVERED_SD
    RELAYED = K.RELAYED
    DROPPED_RELAY = K.DROPPED_RELAY
    DELIVERED_RD = K.DELIVERED_RD


class Opportunity(IntEnum):
    NONE = K.OPP_NONE
    SD = K.OPP_SD
    SR = K.OPP_SR
    RD = K.OPP_RD


@dataclass(frozen=True)
class Packet:
    src: int
    dst: int
    gen_slot: int
    n: int = field(repr=False)

    @property
    def id(self) -> int:
        return self.gen_slot * self.n + self.src


@dataclass(frozen=True)
class Transmission:
    transmitter: int
    outcome: Outcome
    opportunity: Opportunity
    receiver: int  # -1 when nobody was addressed
    packet: Packet | None


# ---------------------------------------------------------------------------
# derangements and MAC geometry


def cyclic_derangement(n: int) -> np.ndarray:
    """phi(i) = i + 1 mod n."""
    return (np.arange(n, dtype=np.int64) + 1) % n


def random_derangement(n: int, seed) -> np.ndarray:
    """Uniform derangement by rejection; about e draws on average."""
    rng = np.random.default_rng(seed)
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not (perm == idx).any():
            return perm.astype(np.int64)


def _inverse(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm), dtype=perm.dtype)
    return inv


def mac_geometry(params: NetworkParams) -> tuple[int, int]:
    """(epsilon, nu) driving the schedule; LS-MAC is epsilon = nu = 1."""
    if params.mac is Mac.LS:
        return 1, 1
    return ec_geometry(params.m, params.nu, params.delta).epsilon, params.nu


_MOBILITY_CODE = {Mobility.IID: K.IID, Mobility.RW: K.RW}


# ---------------------------------------------------------------------------
# single-step helpers


def _to_cells(positions, m: int) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.int64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ParameterError(f"positions must have shape (n, 2), got {pos.shape}")
    if (pos < 0).any() or (pos >= m).any():
        raise ParameterError(f"positions must lie on the {m}x{m} torus")
    return pos[:, 0] * m + pos[:, 1]


def _to_rowcol(cells: np.ndarray, m: int) -> np.ndarray:
    return np.stack([cells // m, cells % m], axis=1)


def mobility_step(model, positions, m: int, rng: np.random.Generator) -> np.ndarray:
    """Move every node once; ``positions`` is an (n, 2) array of (row, col)."""
    cells = _to_cells(positions, m)
    row, col, _ = K.cell_tables(m, 1)
    K.move(cells, m, _MOBILITY_CODE[Mobility(model)], row, col, rng)
    return _to_rowcol(cells, m)


def _bucketed(cells: np.ndarray, m: int):
    ncells = m * m
    cnt = np.zeros(ncells, np.int64)
    start = np.zeros(ncells + 1, np.int64)
    nodes = np.zeros(len(cells), np.int64)
    K.bucket(cells, ncells, cnt, start, nodes)
    return cnt, start, nodes


def schedule(params: NetworkParams, positions, slot: int, rng: np.random.Generator):
    """Transmitters of ``slot`` with their coverage, as ``[(node, [(row, col), ...]), ...]``."""
    m = params.m
    cells = _to_cells(positions, m)
    eps, nu = mac_geometry(params)
    cnt, start, nodes = _bucketed(cells, m)
    tx = np.zeros(m * m, np.int64)
    ntx = K.select_transmitters(m, eps, slot, rng, cnt, start, nodes, tx)
    _, _, cov = K.cell_tables(m, nu)
    out = []
    for s in tx[:ntx]:
        covered = sorted({(int(c) // m, int(c) % m) for c in cov[cells[s]]})
        out.append((int(s), covered))
    return out


class NetworkState:
    """Mutable buffers and positions of every node, shared with the kernel.

    Useful for stepping the protocol one transmission at a time; :func:`run`
    keeps its own state inside the compiled loop.
    """

    def __init__(self, params: NetworkParams, dest=None, positions=None):
        n, m = params.n, params.m
        self.params = params
        self.dest = cyclic_derangement(n) if dest is None else np.asarray(dest, np.int64)
        if sorted(self.dest.tolist()) != list(range(n)) or (self.dest == np.arange(n)).any():
            raise ParameterError("dest must be a derangement of the nodes")
        self.inv_dest = _inverse(self.dest)
        self.cells = np.zeros(n, np.int64) if positions is None else _to_cells(positions, m)
        self.src_buf = np.zeros((n, params.Bs), np.int64)
        self.src_head = np.zeros(n, np.int64)
        self.src_len = np.zeros(n, np.int64)
        self.rel_buf = np.zeros((n, n, max(params.Br, 1)), np.int64)
        self.rel_head = np.zeros((n, n), np.int64)
        self.rel_len = np.zeros((n, n), np.int64)
        self.rel_count = np.zeros(n, np.int64)
        self.nonempty = np.zeros(n, np.int64)
        self.counters = np.zeros(K.N_COUNTERS, np.int64)
        self.delivered_flow = np.zeros(n, np.int64)
        self.delay_acc = np.zeros(2)

    @property
    def positions(self) -> np.ndarray:
        return _to_rowcol(self.cells, self.params.m)

    @positions.setter
    def positions(self, value):
        self.cells = _to_cells(value, self.params.m)

    def enqueue_source(self, node: int, gen_slot: int) -> bool:
        """Append a fresh packet at ``node``; False (dropped) when the buffer is full."""
        if self.src_len[node] >= self.params.Bs:
            return False
        K.push_source(node, gen_slot, self.src_buf, self.src_head, self.src_len)
        return True

    def enqueue_relay(self, node: int, dst: int, gen_slot: int) -> bool:
        """Place a packet for ``dst`` in ``node``'s relay buffer; False when full."""
        if dst == node or self.dest[node] == dst:
            raise ParameterError(f"node {node} cannot relay for destination {dst}")
        if self.rel_count[node] >= self.params.Br:
            return False
        K.push_relay(node, dst, gen_slot, self.rel_buf, self.rel_head, self.rel_len,
                     self.rel_count, self.nonempty)
        return True

    def source_queue(self, node: int) -> list[Packet]:
        cap = self.src_buf.shape[1]
        h, k = self.src_head[node], self.src_len[node]
        d, n = int(self.dest[node]), self.params.n
        return [Packet(node, d, int(self.src_buf[node, (h + i) % cap]), n) for i in range(k)]

    def relay_queue(self, node: int, dst: int) -> list[Packet]:
        cap = self.rel_buf.shape[2]
        h, k = self.rel_head[node, dst], self.rel_len[node, dst]
        s, n = int(self.inv_dest[dst]), self.params.n
        return [Packet(s, dst, int(self.rel_buf[node, dst, (h + i) % cap]), n) for i in range(k)]

    def relay_count(self, node: int) -> int:
        return int(self.rel_count[node])

    def check(self):
        K.check_buffers(self.params.Bs, self.params.Br, self.dest, self.src_len,
                        self.rel_len, self.rel_count, self.nonempty)


def execute_2hr(state: NetworkState, transmitter: int, slot: int,
                rng: np.random.Generator) -> Transmission:
    """Let ``transmitter`` act once under two-hop relay at the current positions."""
    p = state.params
    m = p.m
    eps, nu = mac_geometry(p)
    row, col, cov = K.cell_tables(m, nu)
    cnt, start, nodes = _bucketed(state.cells, m)
    tx = np.array([transmitter], np.int64)
    log = np.zeros((1, 4), np.int64)
    K.transmit_slot(
        slot, 0, tx, 1, state.cells, m, nu, state.dest, state.inv_dest, p.Br, p.feedback,
        state.src_buf, state.src_head, state.src_len,
        state.rel_buf, state.rel_head, state.rel_len, state.rel_count, state.nonempty,
        cnt, start, nodes, row, col, cov,
        state.counters, state.delivered_flow, state.delay_acc, log, rng,
    )
    outcome, opp, r, g = (int(v) for v in log[0])
    packet = None
    if g >= 0:
        packet = Packet(transmitter, int(state.dest[transmitter]), g, p.n)
        if outcome == K.DELIVERED_RD:
            packet = Packet(int(state.inv_dest[r]), r, g, p.n)
    return Transmission(transmitter, Outcome(outcome), Opportunity(opp), r, packet)


# ---------------------------------------------------------------------------
# full runs


@dataclass(frozen=True)
class ReplicationResult:
    """Raw counts of one replication.  ``*_window`` counts exclude warm-up."""

    replication: int
    generated: int
    delivered: int
    dropped_source: int
    dropped_relay: int
    in_flight: int
    generated_window: int
    delivered_window: int
    dropped_source_window: int
    dropped_relay_window: int
    relayed_window: int
    transmissions_window: int
    opportunities: tuple[int, int, int]  # (SD, SR, RD) inside the window
    delivered_flow: np.ndarray
    hist_s: np.ndarray
    hist_r: np.ndarray
    substate: np.ndarray  # [relay occupancy, nonempty queues] slot-node counts
    delay_count: int
    delay_sum: float
    delay_sq: float

    @property
    def conserved(self) -> bool:
        return self.generated == (self.delivered + self.dropped_source
                                  + self.dropped_relay + self.in_flight)

    @property
    def mean_delay(self) -> float:
        return self.delay_sum / self.delay_count if self.delay_count else math.nan


def _replicate(job) -> ReplicationResult:
    params, slots, warmup, seed_seq, dest, check_every, rep = job
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    eps, nu = mac_geometry(params)
    (counters, flow, hist_s, hist_r, substate,
     dsum, dsq, in_flight) = K.simulate(
        params.n, params.m, params.Bs, params.Br, params.lambda_s, params.feedback,
        eps, nu, _MOBILITY_CODE[params.mobility], dest, _inverse(dest),
        slots, warmup, check_every, rng,
    )
    c = [int(v) for v in counters]
    res = ReplicationResult(
        replication=rep,
        generated=c[K.C_GEN], delivered=c[K.C_DELIV],
        dropped_source=c[K.C_DROP_SRC], dropped_relay=c[K.C_DROP_REL],
        in_flight=int(in_flight),
        generated_window=c[K.C_GEN_W], delivered_window=c[K.C_DELIV_W],
        dropped_source_window=c[K.C_DROP_SRC_W], dropped_relay_window=c[K.C_DROP_REL_W],
        relayed_window=c[K.C_RELAYED_W], transmissions_window=c[K.C_TX_W],
        opportunities=(c[K.C_OPP_SD], c[K.C_OPP_SR], c[K.C_OPP_RD]),
        delivered_flow=flow, hist_s=hist_s, hist_r=hist_r, substate=substate,
        delay_count=c[K.C_DELAY_N], delay_sum=float(dsum), delay_sq=float(dsq),
    )
    if not res.conserved:
        raise AssertionError(f"packet accounting broken in replication {rep}")
    return res


def _halfwidth(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    if len(vals) < 2:
        return math.nan
    return Z95 * stdev(vals) / math.sqrt(len(vals))


def _plain(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


@dataclass(frozen=True)
class SimReport:
    params: NetworkParams
    seed: int
    slots_run: int
    warmup_slots: int
    dest: np.ndarray
    replications: tuple[ReplicationResult, ...]

    # merged views; everything below is derived from ``replications``

    @property
    def window(self) -> int:
        return self.slots_run - self.warmup_slots

    def _total(self, name):
        return sum(getattr(r, name) for r in self.replications)

    @property
    def delivered(self) -> np.ndarray:
        """Per-flow deliveries inside the window, summed over replications."""
        return sum(r.delivered_flow for r in self.replications)

    @property
    def throughput_per_flow(self) -> np.ndarray:
        return self.delivered / (self.window * len(self.replications))

    def throughput_by_replication(self) -> list[float]:
        n = self.params.n
        return [r.delivered_window / (n * self.window) for r in self.replications]

    @property
    def throughput(self) -> float:
        return float(np.mean(self.throughput_per_flow))

    @property
    def mean_delay(self) -> float:
        cnt = self._total("delay_count")
        return self._total("delay_sum") / cnt if cnt else math.nan

    @property
    def dropped_source(self) -> int:
        return self._total("dropped_source")

    @property
    def dropped_relay(self) -> int:
        return self._total("dropped_relay")

    @property
    def generated(self) -> int:
        return self._total("generated")

    @property
    def delivered_total(self) -> int:
        return self._total("delivered")

    @property
    def in_flight(self) -> int:
        return self._total("in_flight")

    @property
    def conserved(self) -> bool:
        return all(r.conserved for r in self.replications)

    @property
    def empirical_pi_s(self) -> np.ndarray:
        h = sum(r.hist_s for r in self.replications)
        return h / h.sum()

    @property
    def empirical_pi_r(self) -> np.ndarray:
        h = sum(r.hist_r for r in self.replications)
        return h / h.sum()

    @property
    def substate_counts(self) -> np.ndarray:
        return sum(r.substate for r in self.replications)

    def _node_slots(self) -> int:
        return self.params.n * self.window

    def opportunities_by_replication(self) -> list[tuple[float, float, float]]:
        ns = self._node_slots()
        return [tuple(o / ns for o in r.opportunities) for r in self.replications]

    @property
    def opportunity_rates(self) -> tuple[float, float, float]:
        """Empirical (psd, psr, prd): per-node, per-slot opportunity frequencies."""
        per = self.opportunities_by_replication()
        return tuple(float(np.mean([p[k] for p in per])) for k in range(3))

    @property
    def transmit_frequency(self) -> float:
        return self._total("transmissions_window") / (self._node_slots() * len(self.replications))

    @property
    def ci_halfwidth(self) -> dict[str, float]:
        per_opp = self.opportunities_by_replication()
        return {
            "throughput": _halfwidth(self.throughput_by_replication()),
            "mean_delay": _halfwidth([r.mean_delay for r in self.replications]),
            "psd": _halfwidth([p[0] for p in per_opp]),
            "psr": _halfwidth([p[1] for p in per_opp]),
            "prd": _halfwidth([p[2] for p in per_opp]),
        }

    def summary(self) -> dict:
        psd, psr, prd = self.opportunity_rates
        return {
            "params": self.params.to_dict(),
            "seed": self.seed,
            "slots_run": self.slots_run,
            "warmup_slots": self.warmup_slots,
            "replications": len(self.replications),
            "throughput": self.throughput,
            "mean_delay": self.mean_delay,
            "ci_halfwidth": self.ci_halfwidth,
            "delivered": self.delivered,
            "throughput_per_flow": self.throughput_per_flow,
            "generated": self.generated,
            "delivered_total": self.delivered_total,
            "dropped_source": self.dropped_source,
            "dropped_relay": self.dropped_relay,
            "in_flight": self.in_flight,
            "conserved": self.conserved,
            "empirical_pi_s": self.empirical_pi_s,
            "empirical_pi_r": self.empirical_pi_r,
            "opportunity_rates": {"psd": psd, "psr": psr, "prd": prd},
            "transmit_frequency": self.transmit_frequency,
        }

    def to_dict(self) -> dict:
        """JSON-ready merged summary plus every replication's raw counts."""
        d = self.summary()
        d["dest"] = self.dest
        d["per_replication"] = [
            {k: getattr(r, k) for k in r.__dataclass_fields__} for r in self.replications
        ]
        return _plain(d)


def run(
    params: NetworkParams,
    slots: int = 2_000_000,
    warmup_fraction: float = 0.2,
    seed: int = 0,
    replications: int = 10,
    workers: int = 1,
    derangement_seed=None,
    check_every: int = 1024,
) -> SimReport:
    """Simulate ``replications`` independent runs of ``slots`` slots each.

    Statistics use the last ``1 - warmup_fraction`` of every run.  Buffer
    invariants are checked every ``check_every`` slots (1 = every slot).
    """
    if not isinstance(params, NetworkParams):
        raise ParameterError("params must be a NetworkParams")
    if int(slots) != slots or slots < MIN_SLOTS:
        raise ParameterError(f"slots must be an integer >= {MIN_SLOTS}, got {slots}")
    if not (0.0 <= warmup_fraction <= 0.5):
        raise ParameterError(f"warmup_fraction must lie in [0, 0.5], got {warmup_fraction}")
    if int(replications) != replications or replications < 1:
        raise ParameterError(f"replications must be a positive integer, got {replications}")
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    if check_every < 0:
        raise ParameterError(f"check_every must be >= 0, got {check_every}")
    slots, replications = int(slots), int(replications)
    warmup = int(math.floor(slots * warmup_fraction))
    dest = (cyclic_derangement(params.n) if derangement_seed is None
            else random_derangement(params.n, derangement_seed))

    streams = np.random.SeedSequence(seed).spawn(replications)
    jobs = [(params, slots, warmup, ss, dest, check_every, k) for k, ss in enumerate(streams)]
    if workers == 1 or replications == 1:
        results = [_replicate(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, replications)) as pool:
            results = list(pool.map(_replicate, jobs))
    results.sort(key=lambda r: r.replication)
    return SimReport(params, seed, slots, warmup, dest, tuple(results))

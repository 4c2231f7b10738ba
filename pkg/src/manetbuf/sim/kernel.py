"""Compiled slot loop of the cell-partitioned MANET.

Cells are indexed ``row * m + col``.  LS-MAC is the special case
``eps = 1, nu = 1`` of the equivalence-class schedule (every cell active,
coverage = own cell), so one code path serves both MACs.

Random numbers come from a ``numpy.random.Generator`` and are consumed in a
fixed order each slot: mobility, packet generation, transmitter selection,
then per transmitter the protocol coin and the receiver choice.
"""

import numpy as np
from numba import njit

IID = 0
RW = 1

# transmission outcomes
IDLE = 0
DELIVERED_SD = 1
RELAYED = 2
DROPPED_RELAY = 3
DELIVERED_RD = 4

# operation opportunities
OPP_NONE = 0
OPP_SD = 1
OPP_SR = 2
OPP_RD = 3

# counter slots
C_GEN = 0
C_DELIV = 1
C_DROP_SRC = 2
C_DROP_REL = 3
C_GEN_W = 4
C_DELIV_W = 5
C_DROP_SRC_W = 6
C_DROP_REL_W = 7
C_OPP_SD = 8
C_OPP_SR = 9
C_OPP_RD = 10
C_DELAY_N = 11
C_RELAYED_W = 12
C_TX_W = 13
N_COUNTERS = 14


@njit(cache=True, inline="always")
def _uniform_index(rng, k):
    # rng.random() < 1, so the floor never reaches k
    return int(rng.random() * k)


@njit(cache=True, inline="always")
def _wrap(x, m):
    if x < 0:
        return x + m
    if x >= m:
        return x - m
    return x


@njit(cache=True)
def move(pos, m, model, row, col, rng):
    """One mobility step for every node, in place.

    RW picks one of the nine cells of the 3 x 3 torus neighbourhood
    (staying put included) with a single draw.
    """
    c = m * m
    for i in range(pos.shape[0]):
        if model == IID:
            pos[i] = _uniform_index(rng, c)
        else:
            k = _uniform_index(rng, 9)
            r = _wrap(row[pos[i]] + k // 3 - 1, m)
            q = _wrap(col[pos[i]] + k % 3 - 1, m)
            pos[i] = r * m + q


@njit(cache=True)
def bucket(pos, ncells, cell_cnt, cell_start, cell_nodes):
    """Counting sort of nodes by cell; members of a cell stay in id order."""
    cell_cnt[:] = 0
    for i in range(pos.shape[0]):
        cell_cnt[pos[i]] += 1
    cell_start[0] = 0
    for c in range(ncells):
        cell_start[c + 1] = cell_start[c] + cell_cnt[c]
    # second pass rebuilds the counts while placing nodes
    cell_cnt[:] = 0
    for i in range(pos.shape[0]):
        c = pos[i]
        cell_nodes[cell_start[c] + cell_cnt[c]] = i
        cell_cnt[c] += 1


@njit(cache=True)
def select_transmitters(m, eps, slot, rng, cell_cnt, cell_start, cell_nodes, tx_out):
    """Pick one uniform transmitter per non-empty active cell; returns the count."""
    k = slot % (eps * eps)
    a = k // eps
    b = k % eps
    ntx = 0
    for r in range(a, m, eps):
        for col in range(b, m, eps):
            cell = r * m + col
            cnt = cell_cnt[cell]
            if cnt > 0:
                tx_out[ntx] = cell_nodes[cell_start[cell] + _uniform_index(rng, cnt)]
                ntx += 1
    return ntx


@njit(cache=True)
def cell_tables(m, nu):
    """Row and column of every cell, and the cells within its coverage.

    Coverage of cell ``c`` is the (2nu-1) x (2nu-1) torus square centred on
    it, listed row-major starting from the top-left corner.
    """
    ncells = m * m
    row = np.empty(ncells, np.int64)
    col = np.empty(ncells, np.int64)
    w = 2 * nu - 1
    cov = np.empty((ncells, w * w), np.int64)
    for c in range(ncells):
        row[c] = c // m
        col[c] = c % m
        k = 0
        for dr in range(1 - nu, nu):
            for dc in range(1 - nu, nu):
                cov[c, k] = ((row[c] + dr) % m) * m + (col[c] + dc) % m
                k += 1
    return row, col, cov


@njit(cache=True, inline="always")
def covers(cell_a, cell_b, row, col, m, nu):
    dr = abs(row[cell_a] - row[cell_b])
    dc = abs(col[cell_a] - col[cell_b])
    return min(dr, m - dr) <= nu - 1 and min(dc, m - dc) <= nu - 1


@njit(cache=True, inline="always")
def _pop_source(node, src_buf, src_head, src_len):
    g = src_buf[node, src_head[node]]
    src_head[node] += 1
    if src_head[node] == src_buf.shape[1]:
        src_head[node] = 0
    src_len[node] -= 1
    return g


@njit(cache=True, inline="always")
def push_source(node, g, src_buf, src_head, src_len):
    slot = src_head[node] + src_len[node]
    if slot >= src_buf.shape[1]:
        slot -= src_buf.shape[1]
    src_buf[node, slot] = g
    src_len[node] += 1


@njit(cache=True, inline="always")
def push_relay(node, dst, g, rel_buf, rel_head, rel_len, rel_count, nonempty):
    slot = rel_head[node, dst] + rel_len[node, dst]
    if slot >= rel_buf.shape[2]:
        slot -= rel_buf.shape[2]
    rel_buf[node, dst, slot] = g
    if rel_len[node, dst] == 0:
        nonempty[node] += 1
    rel_len[node, dst] += 1
    rel_count[node] += 1


@njit(cache=True, inline="always")
def _pop_relay(node, dst, rel_buf, rel_head, rel_len, rel_count, nonempty):
    g = rel_buf[node, dst, rel_head[node, dst]]
    rel_head[node, dst] += 1
    if rel_head[node, dst] == rel_buf.shape[2]:
        rel_head[node, dst] = 0
    rel_len[node, dst] -= 1
    rel_count[node] -= 1
    if rel_len[node, dst] == 0:
        nonempty[node] -= 1
    return g


@njit(cache=True)
def transmit_slot(
    t, warmup, tx, ntx, pos, m, nu, dest, inv_dest, Br, feedback,
    src_buf, src_head, src_len,
    rel_buf, rel_head, rel_len, rel_count, nonempty,
    cell_cnt, cell_start, cell_nodes, row, col, cov,
    counters, delivered_flow, delay_acc, log, rng,
):
    """Run the two-hop relay protocol for the first ``ntx`` entries of ``tx``.

    Row ``k`` of ``log`` receives ``(outcome, opportunity, receiver, gen_slot)``
    for transmitter ``tx[k]``; ``gen_slot`` is -1 when no packet moved.
    Counters only cover slots ``t >= warmup``, except the whole-run totals.
    """
    inside = t >= warmup
    for k in range(ntx):
        s = tx[k]
        d = dest[s]
        cs = pos[s]
        outcome = IDLE
        opp = OPP_NONE
        r = -1
        g = -1
        if covers(cs, pos[d], row, col, m, nu):
            opp = OPP_SD
            r = d
            if src_len[s] > 0:
                outcome = DELIVERED_SD
                g = _pop_source(s, src_buf, src_head, src_len)
        else:
            ncov = cov.shape[1]
            others = -1
            for a in range(ncov):
                others += cell_cnt[cov[cs, a]]
            if others > 0:
                to_relay = rng.random() < 0.5
                j = _uniform_index(rng, others)
                # j-th node of the coverage in listing order, skipping s
                for a in range(ncov):
                    cell = cov[cs, a]
                    if cell != cs and j >= cell_cnt[cell]:
                        j -= cell_cnt[cell]
                        continue
                    for q in range(cell_start[cell], cell_start[cell] + cell_cnt[cell]):
                        v = cell_nodes[q]
                        if v == s:
                            continue
                        if j == 0:
                            r = v
                            break
                        j -= 1
                    if r >= 0:
                        break
                if to_relay:
                    opp = OPP_SR
                    if src_len[s] > 0:
                        if rel_count[r] >= Br:
                            if not feedback:
                                outcome = DROPPED_RELAY
                                g = _pop_source(s, src_buf, src_head, src_len)
                        else:
                            outcome = RELAYED
                            g = _pop_source(s, src_buf, src_head, src_len)
                            push_relay(r, d, g, rel_buf, rel_head, rel_len, rel_count, nonempty)
                else:
                    opp = OPP_RD
                    if rel_len[s, r] > 0:
                        outcome = DELIVERED_RD
                        g = _pop_relay(s, r, rel_buf, rel_head, rel_len, rel_count, nonempty)

        log[k, 0] = outcome
        log[k, 1] = opp
        log[k, 2] = r
        log[k, 3] = g
        if inside:
            if opp == OPP_SD:
                counters[C_OPP_SD] += 1
            elif opp == OPP_SR:
                counters[C_OPP_SR] += 1
            elif opp == OPP_RD:
                counters[C_OPP_RD] += 1
        if outcome == DROPPED_RELAY:
            counters[C_DROP_REL] += 1
            if inside:
                counters[C_DROP_REL_W] += 1
        elif outcome == RELAYED:
            if inside:
                counters[C_RELAYED_W] += 1
        elif outcome == DELIVERED_SD or outcome == DELIVERED_RD:
            flow = s if outcome == DELIVERED_SD else inv_dest[r]
            counters[C_DELIV] += 1
            if inside:
                counters[C_DELIV_W] += 1
                delivered_flow[flow] += 1
            if g >= warmup:
                counters[C_DELAY_N] += 1
                delay = float(t - g)
                delay_acc[0] += delay
                delay_acc[1] += delay * delay


@njit(cache=True)
def check_buffers(Bs, Br, dest, src_len, rel_len, rel_count, nonempty):
    """Raise AssertionError on any bound or bookkeeping violation."""
    n = src_len.shape[0]
    for i in range(n):
        if src_len[i] < 0 or src_len[i] > Bs:
            raise AssertionError("source buffer bound violated")
        if rel_count[i] < 0 or rel_count[i] > Br:
            raise AssertionError("relay buffer bound violated")
        if rel_len[i, i] != 0 or rel_len[i, dest[i]] != 0:
            raise AssertionError("relay queue holds a packet of its own flow")
        total = 0
        busy = 0
        for j in range(n):
            total += rel_len[i, j]
            if rel_len[i, j] > 0:
                busy += 1
        if total != rel_count[i] or busy != nonempty[i]:
            raise AssertionError("relay bookkeeping out of sync")


@njit(cache=True)
def simulate(n, m, Bs, Br, lam, feedback, eps, nu, mobility, dest, inv_dest,
             slots, warmup, check_every, rng):
    ncells = m * m
    row, col, cov = cell_tables(m, nu)
    pos = np.empty(n, np.int64)
    for i in range(n):
        pos[i] = _uniform_index(rng, ncells)

    src_buf = np.zeros((n, Bs), np.int64)
    src_head = np.zeros(n, np.int64)
    src_len = np.zeros(n, np.int64)
    rcap = max(Br, 1)
    rel_buf = np.zeros((n, n, rcap), np.int64)
    rel_head = np.zeros((n, n), np.int64)
    rel_len = np.zeros((n, n), np.int64)
    rel_count = np.zeros(n, np.int64)
    nonempty = np.zeros(n, np.int64)

    cell_cnt = np.zeros(ncells, np.int64)
    cell_start = np.zeros(ncells + 1, np.int64)
    cell_nodes = np.zeros(n, np.int64)
    tx = np.zeros(ncells, np.int64)

    counters = np.zeros(N_COUNTERS, np.int64)
    delivered_flow = np.zeros(n, np.int64)
    hist_s = np.zeros(Bs + 1, np.int64)
    hist_r = np.zeros(Br + 1, np.int64)
    substate = np.zeros((Br + 1, Br + 1), np.int64)
    delay_acc = np.zeros(2)
    log = np.zeros((ncells, 4), np.int64)

    for t in range(slots):
        inside = t >= warmup
        move(pos, m, mobility, row, col, rng)

        for i in range(n):
            if rng.random() < lam:
                counters[C_GEN] += 1
                if inside:
                    counters[C_GEN_W] += 1
                if src_len[i] == Bs:
                    counters[C_DROP_SRC] += 1
                    if inside:
                        counters[C_DROP_SRC_W] += 1
                else:
                    push_source(i, t, src_buf, src_head, src_len)

        if inside:
            for i in range(n):
                hist_s[src_len[i]] += 1
                hist_r[rel_count[i]] += 1
                substate[rel_count[i], nonempty[i]] += 1

        bucket(pos, ncells, cell_cnt, cell_start, cell_nodes)
        ntx = select_transmitters(m, eps, t, rng, cell_cnt, cell_start, cell_nodes, tx)
        if inside:
            counters[C_TX_W] += ntx
        transmit_slot(
            t, warmup, tx, ntx, pos, m, nu, dest, inv_dest, Br, feedback,
            src_buf, src_head, src_len,
            rel_buf, rel_head, rel_len, rel_count, nonempty,
            cell_cnt, cell_start, cell_nodes, row, col, cov,
            counters, delivered_flow, delay_acc, log, rng,
        )

        if check_every > 0 and t % check_every == 0:
            check_buffers(Bs, Br, dest, src_len, rel_len, rel_count, nonempty)

    check_buffers(Bs, Br, dest, src_len, rel_len, rel_count, nonempty)
    in_flight = src_len.sum() + rel_count.sum()
    return (counters, delivered_flow, hist_s, hist_r, substate,
            delay_acc[0], delay_acc[1], in_flight)

"""Brute-force stationary distributions for finite Markov chains.

Independent of the closed forms in :mod:`manetbuf.analytic`: the chains are
assembled from their one-step dynamics and solved as linear systems.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.sparse.csgraph import connected_components

from .params import ParameterError


class DegenerateChainWarning(UserWarning):
    pass


def _closed_classes(P: np.ndarray) -> int:
    adj = P > 0
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = 0
    for c in range(ncomp):
        members = labels == c
        # a class is closed when no probability leaks to another class
        if not adj[np.ix_(members, ~members)].any():
            closed += 1
    return closed


def _period(P: np.ndarray) -> int:
    """Period of the (assumed irreducible) recurrent part, by BFS levels."""
    adj = P > 0
    n = len(P)
    level = np.full(n, -1)
    level[0] = 0
    frontier = [0]
    g = 0
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(v)
                else:
                    g = math.gcd(g, level[u] + 1 - level[v])
        frontier = nxt
    return g or 1


def stationary_oracle(P, tol: float = 1e-12) -> np.ndarray:
    """Stationary vector of the row-stochastic matrix ``P``.

    Raises :class:`ParameterError` for non-stochastic input or when more than
    one closed class makes the answer non-unique.  Periodic chains still have
    a unique stationary vector; they only trigger a warning.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ParameterError(f"transition matrix must be square, got shape {P.shape}")
    if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0):
        raise ParameterError("transition matrix is not row-stochastic")
    n = len(P)
    if n == 1:
        return np.ones(1)
    if _closed_classes(P) != 1:
        raise ParameterError("chain has several closed classes; stationary vector not unique")
    if _period(P) > 1:
        warnings.warn("periodic chain: power iteration would not converge", DegenerateChainWarning)

    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    # one refinement step of the linear solve
    r = b - A @ pi
    pi = pi + np.linalg.solve(A, r)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = np.max(np.abs(pi @ P - pi))
    if residual >= tol:
        raise ParameterError(f"stationary solve residual {residual:.3e} exceeds {tol:.1e}")
    return pi


def birth_death_matrix(up, down) -> np.ndarray:
    """Tridiagonal transition matrix with self-loops completing each row."""
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    k = len(up)
    P = np.zeros((k, k))
    for i in range(k):
        if i + 1 < k:
            P[i, i + 1] = up[i]
        if i > 0:
            P[i, i - 1] = down[i]
        P[i, i] = 1.0 - P[i].sum()
    return P


def source_chain_matrix(lambda_s: float, mu_s: float, Bs: int) -> np.ndarray:
    """Source-buffer chain observed at slot boundaries.

    Within a slot the head-of-line packet is served first (probability mu_s
    when non-empty), then a packet arrives with probability lambda_s and is
    dropped only if the buffer is still full.
    """
    P = np.zeros((Bs + 1, Bs + 1))
    for i in range(Bs + 1):
        outcomes = ((mu_s, 1), (1.0 - mu_s, 0)) if i > 0 else ((1.0, 0),)
        for p_served, served in outcomes:
            after = i - served
            for p_arr, arr in ((lambda_s, 1), (1.0 - lambda_s, 0)):
                j = min(after + arr, Bs)
                P[i, j] += p_served * p_arr
    return P

"""Compiled inner loops: allocation on flattened routes and the exact-jump chain."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .topology import Topology

REACHED_HORIZON = 0
NEED_UNIFORMS = 1
RECORD_FULL = 2


class CompiledTopology:
    """Flat-array view of a topology for the compiled allocation.

    Links are renumbered by their position in ``link_order``. ``theta`` rows of
    all classes live in one buffer; ``hop_in[h]`` points at the input slot of
    hop ``h`` and the output slot is ``hop_in[h] + 1``.
    """

    def __init__(self, topology: Topology):
        order = topology.link_order
        self.cap = np.array([topology.capacities[l] for l in order], dtype=np.float64)
        route_len = np.array([c.length for c in topology.classes], dtype=np.int64)
        theta_off = np.zeros(len(route_len), dtype=np.int64)
        if len(route_len):
            theta_off[1:] = np.cumsum(route_len + 1)[:-1]
        hop_ptr = [0]
        hop_cls = []
        hop_in = []
        for l in order:
            for k, i in topology.hops_by_link[l]:
                hop_cls.append(k)
                hop_in.append(theta_off[k] + i - 1)
            hop_ptr.append(len(hop_cls))
        self.hop_ptr = np.array(hop_ptr, dtype=np.int64)
        self.hop_cls = np.array(hop_cls, dtype=np.int64)
        self.hop_in = np.array(hop_in, dtype=np.int64)
        self.theta_off = theta_off
        self.route_len = route_len
        self.theta = np.zeros(int((route_len + 1).sum()), dtype=np.float64)

    def psi(self, x) -> np.ndarray:
        out = np.empty(len(self.route_len), dtype=np.float64)
        alloc(np.asarray(x, dtype=np.float64), self.cap, self.hop_ptr, self.hop_in,
              self.theta_off, self.route_len, self.theta, out)
        return out


@njit(cache=True)
def alloc(x, cap, hop_ptr, hop_in, theta_off, route_len, theta, psi):
    K = x.shape[0]
    for k in range(K):
        theta[theta_off[k]] = x[k]
    for l in range(cap.shape[0]):
        s = hop_ptr[l]
        e = hop_ptr[l + 1]
        if s == e:
            continue
        C = cap[l]
        n_inf = 0
        R = 0.0
        for h in range(s, e):
            v = theta[hop_in[h]]
            if math.isinf(v):
                n_inf += 1
            else:
                R += v
        if n_inf > 0:
            share = C / n_inf
            for h in range(s, e):
                if math.isinf(theta[hop_in[h]]):
                    theta[hop_in[h] + 1] = share
                else:
                    theta[hop_in[h] + 1] = 0.0
        elif R > C:
            f = C / R
            for h in range(s, e):
                theta[hop_in[h] + 1] = theta[hop_in[h]] * f
        else:
            for h in range(s, e):
                theta[hop_in[h] + 1] = theta[hop_in[h]]
    for k in range(K):
        psi[k] = theta[theta_off[k] + route_len[k]]


@njit(cache=True)
def _accumulate(a, b, psi, n, edges, int_psi, int_n):
    nb = edges.shape[0] - 1
    if nb <= 0 or b <= edges[0] or a >= edges[nb]:
        return
    j = np.searchsorted(edges, a, side="right") - 1
    if j < 0:
        j = 0
    K = psi.shape[0]
    while j < nb and edges[j] < b:
        lo = max(a, edges[j])
        hi = min(b, edges[j + 1])
        if hi > lo:
            w = hi - lo
            for k in range(K):
                int_psi[j, k] += psi[k] * w
                int_n[j, k] += n[k] * w
        j += 1


@njit(cache=True)
def run_chain(state, T, lam, mu, acc, fixed, active,
              cap, hop_ptr, hop_in, theta_off, route_len, theta,
              u, counters, stride, rec_t, rec_n, edges, int_psi, int_n):
    """Advance the chain until the horizon, the uniforms or the record buffer run out.

    ``state`` holds the counts (mutated in place); ``counters`` is
    ``[t, u_pos, rec_pos, events]`` stored as float64 and also mutated.
    """
    K = state.shape[0]
    x = np.empty(K, dtype=np.float64)
    psi = np.empty(K, dtype=np.float64)
    death = np.empty(K, dtype=np.float64)
    t = counters[0]
    u_pos = int(counters[1])
    rec_pos = int(counters[2])
    events = int(counters[3])
    n_u = u.shape[0]
    status = REACHED_HORIZON
    while True:
        if rec_pos >= rec_t.shape[0]:
            status = RECORD_FULL
            break
        for k in range(K):
            if active[k]:
                x[k] = state[k] * acc[k]
            else:
                x[k] = fixed[k]
        alloc(x, cap, hop_ptr, hop_in, theta_off, route_len, theta, psi)
        total = 0.0
        for k in range(K):
            if active[k]:
                d = mu[k] * psi[k] if state[k] > 0 else 0.0
                death[k] = d
                total += lam[k] + d
            else:
                death[k] = 0.0
        if total <= 0.0:
            _accumulate(t, T, psi, state, edges, int_psi, int_n)
            t = T
            status = REACHED_HORIZON
            break
        if u_pos + 2 > n_u:
            status = NEED_UNIFORMS
            break
        t_next = t - math.log1p(-u[u_pos]) / total
        if t_next >= T:
            _accumulate(t, T, psi, state, edges, int_psi, int_n)
            u_pos += 1
            t = T
            status = REACHED_HORIZON
            break
        _accumulate(t, t_next, psi, state, edges, int_psi, int_n)
        target = u[u_pos + 1] * total
        u_pos += 2
        chosen = -1
        delta = 0
        acc_rate = 0.0
        for k in range(K):
            if not active[k]:
                continue
            acc_rate += lam[k]
            if target < acc_rate:
                chosen = k
                delta = 1
                break
            acc_rate += death[k]
            if target < acc_rate:
                chosen = k
                delta = -1
                break
        if chosen < 0:
            # Round-off at the top of the rate ladder: take the last admissible event.
            for k in range(K - 1, -1, -1):
                if active[k] and (death[k] > 0.0 or lam[k] > 0.0):
                    chosen = k
                    delta = -1 if death[k] > 0.0 else 1
                    break
        state[chosen] += delta
        t = t_next
        events += 1
        if events % stride == 0:
            rec_t[rec_pos] = t
            for k in range(K):
                rec_n[rec_pos, k] = state[k]
            rec_pos += 1
    counters[0] = t
    counters[1] = u_pos
    counters[2] = rec_pos
    counters[3] = events
    return status

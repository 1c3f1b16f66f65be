"""Tail-drop bandwidth allocation.

At every link the classes' output rates are their input rates scaled by
``min(C_l / R_l, 1)`` where ``R_l`` is the total input rate of the link.
Links are processed in a topological order, so one pass suffices on an acyclic
network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import AlphaOutOfRange, DimensionMismatch, FlowdropError
from .topology import Topology, TreeMeta, analyze_tree, linear_length

INF = math.inf


@dataclass(frozen=True)
class AllocationTable:
    """Per-hop rates of every class.

    ``theta[k][i]`` is the class-k rate at the output of the i-th link of its
    route (``theta[k][0]`` is the input rate ``x_k``); ``psi[k]`` is the
    end-to-end throughput; ``link_input[l]`` is ``R_l``.
    """

    theta: tuple[tuple, ...]
    psi: tuple
    link_input: Mapping[int, object]


def _propagate(topology: Topology, x: Sequence, one, zero):
    caps = topology.capacities
    theta = [[xk] + [None] * topology.classes[k].length for k, xk in enumerate(x)]
    link_input = {}
    for l in topology.link_order:
        hops = topology.hops_by_link[l]
        if not hops:
            link_input[l] = zero
            continue
        inputs = [theta[k][i - 1] for k, i in hops]
        n_inf = sum(1 for v in inputs if v == INF)
        C = caps[l]
        if n_inf:
            # Infinite offered rate: finite inputs are crowded out entirely and the
            # saturated inputs split the capacity (only one can enter a tree link).
            link_input[l] = INF
            for (k, i), v in zip(hops, inputs):
                theta[k][i] = C / n_inf if v == INF else zero
            continue
        R = sum(inputs, zero)
        link_input[l] = R
        if R > C:
            factor = C / R
            for (k, i), v in zip(hops, inputs):
                theta[k][i] = v * factor
        else:
            for (k, i), v in zip(hops, inputs):
                theta[k][i] = v
    return AllocationTable(
        theta=tuple(tuple(row) for row in theta),
        psi=tuple(row[-1] for row in theta),
        link_input=link_input,
    )


def allocate(topology: Topology, x: Sequence, *, exact: bool = False) -> AllocationTable:
    """Tail-drop allocation for input rates ``x`` (one per class).

    With ``exact=True`` all arithmetic is done on :class:`fractions.Fraction`
    (inputs may be ints, Fractions or decimal strings).
    """
    if len(x) != topology.n_classes:
        raise DimensionMismatch(f"expected {topology.n_classes} rates, got {len(x)}")
    if exact:
        xs = [Fraction(v) for v in x]
        caps_exact = Topology(
            {l: Fraction(c) for l, c in topology.capacities.items()},
            topology.classes,
            topology.link_order,
        )
        if any(v < 0 for v in xs):
            raise FlowdropError("rates must be non-negative")
        return _propagate(caps_exact, xs, Fraction(1), Fraction(0))
    xs = [float(v) for v in x]
    if any(not math.isfinite(v) or v < 0 for v in xs):
        raise FlowdropError("rates must be finite and non-negative")
    return _propagate(topology, xs, 1.0, 0.0)


def throughputs(topology: Topology, counts: Sequence[int]) -> tuple[float, ...]:
    """``phi(n) = psi(a * n)``: throughputs as a function of flow counts."""
    a = topology.access_rates
    if len(counts) != len(a):
        raise DimensionMismatch(f"expected {len(a)} counts, got {len(counts)}")
    return allocate(topology, [ak * nk for ak, nk in zip(a, counts)]).psi


def quasi_stationary_allocate(topology: Topology, alpha: float, x_rest: Sequence[float]):
    """Allocation on a linear network with class 0 fixed at rate ``alpha`` after link 1.

    ``x_rest`` holds the input rates of classes ``2..L``. Returns
    ``(psi0, (psi_2, ..., psi_L))`` where ``psi0`` is the class-0 throughput.
    Link capacities are taken from the topology (the unit-capacity recursion
    ``min(t, t / (t + x_k))`` generalizes to ``min(t, C_k t / (t + x_k))``).
    """
    L = linear_length(topology)
    route = topology.classes[0].route
    C1 = topology.capacities[route[0]]
    if not (0.0 <= alpha <= C1):
        raise AlphaOutOfRange(f"alpha must lie in [0, {C1}], got {alpha}")
    if len(x_rest) != L - 1:
        raise DimensionMismatch(f"expected {L - 1} rates for classes 2..L, got {len(x_rest)}")
    t = float(alpha)
    psi = []
    for link, xk in zip(route[1:], x_rest):
        C = topology.capacities[link]
        total = t + xk
        if total > C:
            psi.append(min(xk, C * xk / total))
            t = min(t, C * t / total)
        else:
            psi.append(xk)
    return t, tuple(psi)


def saturated_allocate(
    topology: Topology,
    finite_rates: Mapping[int, float],
    meta: TreeMeta | None = None,
) -> dict[int, float]:
    """Worst-case throughputs of the classes in ``finite_rates`` on an upstream tree.

    ``finite_rates`` maps class index to input rate for the set U of classes
    kept finite; every other class is saturated (infinitely many flows). A
    saturated class entering link l leaves nothing to the finite inputs of l and
    emits exactly ``C_l``. The limit is exact, no large surrogate is used.
    Restricted to upstream trees (raises NotUpstreamTree otherwise).
    """
    if meta is None:
        meta = analyze_tree(topology, check_saturable=False)
    if not finite_rates:
        raise FlowdropError("the set of finite classes must not be empty")
    x = [INF] * topology.n_classes
    for k, v in finite_rates.items():
        v = float(v)
        if v < 0 or not math.isfinite(v):
            raise FlowdropError(f"rate of class index {k} must be finite and non-negative")
        x[k] = v
    table = _propagate(topology, x, 1.0, 0.0)
    return {k: table.psi[k] for k in finite_rates}


def saturated_hop_rates(topology: Topology, finite_rates: Mapping[int, float], k: int) -> tuple[float, ...]:
    """Per-hop rates ``theta_k^i`` of class ``k`` in the saturated allocation."""
    x = [INF] * topology.n_classes
    for j, v in finite_rates.items():
        x[j] = float(v)
    return _propagate(topology, x, 1.0, 0.0).theta[k]

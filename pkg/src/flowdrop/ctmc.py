"""Exact-jump simulation of the flow-count Markov process and its variants.

In state ``n`` class k gains a flow at rate ``lambda_k`` and loses one at rate
``mu_k * phi_k(n)`` with ``phi_k(n) = psi_k(a * n)``. The same compiled loop
drives the plain, scaled, quasi-stationary (class 0 frozen at a fixed rate)
and saturated (classes outside U frozen at infinite rate) chains.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .errors import AlphaOutOfRange, FlowdropError, TooShort
from .topology import FlowClass, Topology, analyze_tree, linear_length

_UNIFORM_CHUNK = 1 << 16


@dataclass(frozen=True)
class SimParams:
    """Simulation settings.

    ``stride`` records the state after every ``stride``-th event (the initial
    and terminal states are always recorded). ``burn_in`` and ``batches``
    control the time averages accumulated during the run.
    """

    horizon: float
    seed: int | np.random.SeedSequence | None = 0
    stride: int = 1
    beta: float = 1.0
    burn_in: float = 0.2
    batches: int = 20

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise FlowdropError(f"horizon must be finite and > 0, got {self.horizon}")
        if self.stride < 1:
            raise FlowdropError(f"stride must be >= 1, got {self.stride}")
        if not self.beta >= 1:
            raise FlowdropError(f"beta must be >= 1, got {self.beta}")
        if not 0 <= self.burn_in < 1:
            raise FlowdropError(f"burn_in must lie in [0, 1), got {self.burn_in}")
        if self.batches < 1:
            raise FlowdropError(f"batches must be >= 1, got {self.batches}")


@dataclass
class Trajectory:
    """Sampled piecewise-constant path of a chain.

    ``states[j]`` holds on ``[times[j], times[j+1])``; the last row is the
    state at the horizon. ``scale`` maps counts to rates (``a / beta``), so
    ``scaled_states`` is the path ``beta^-1 a * N_beta(t)``.
    ``batch_throughput[j, k]`` and ``batch_count[j, k]`` are time averages of
    ``phi_k`` and ``n_k`` over the j-th post-burn-in batch window.
    """

    times: np.ndarray
    states: np.ndarray
    class_ids: tuple
    events: int
    seed: object
    horizon: float
    scale: np.ndarray
    batch_edges: np.ndarray = field(repr=False)
    batch_throughput: np.ndarray = field(repr=False)
    batch_count: np.ndarray = field(repr=False)

    @property
    def scaled_states(self) -> np.ndarray:
        return self.states * self.scale

    def state_at(self, t) -> np.ndarray:
        """State(s) at time(s) ``t`` (right-continuous)."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.states[np.clip(idx, 0, len(self.times) - 1)]

    def to_csv(self, path) -> None:
        header = "t," + ",".join(f"n_{c}" for c in self.class_ids)
        data = np.column_stack([self.times, self.states])
        fmt = ["%.17g"] + ["%d"] * self.states.shape[1]
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


@dataclass
class ChainModel:
    """Rates and frozen inputs of a chain over a topology."""

    topology: Topology
    arrival: np.ndarray
    service: np.ndarray
    access: np.ndarray
    fixed: np.ndarray
    active: np.ndarray

    @classmethod
    def plain(cls, topology: Topology, beta: float = 1.0) -> "ChainModel":
        K = topology.n_classes
        return cls(
            topology,
            beta * np.asarray(topology.arrival_rates, dtype=float),
            beta * np.asarray(topology.service_rates, dtype=float),
            np.asarray(topology.access_rates, dtype=float) / beta,
            np.zeros(K),
            np.ones(K, dtype=np.bool_),
        )

    def departure_rates(self, counts) -> np.ndarray:
        n = np.asarray(counts, dtype=float)
        x = np.where(self.active, n * self.access, self.fixed)
        psi = _kernel.CompiledTopology(self.topology).psi(x)
        return np.where(self.active & (n > 0), self.service * psi, 0.0)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def replica_seed(master_seed: int, *index: int) -> np.random.SeedSequence:
    """Independent stream for a replica, derived from the master seed by index."""
    return np.random.SeedSequence(master_seed, spawn_key=tuple(int(i) for i in index))


def run_model(model: ChainModel, n0: Sequence[int], params: SimParams) -> Trajectory:
    ct = _kernel.CompiledTopology(model.topology)
    K = model.topology.n_classes
    state = np.asarray(n0, dtype=np.int64).copy()
    if state.shape != (K,):
        raise FlowdropError(f"initial state must have {K} entries")
    if (state < 0).any():
        raise FlowdropError("initial counts must be non-negative")
    state[~model.active] = 0
    T = float(params.horizon)
    rng = _rng(params.seed)
    edges = np.linspace(params.burn_in * T, T, params.batches + 1)
    int_psi = np.zeros((params.batches, K))
    int_n = np.zeros((params.batches, K))
    cap = 1024
    rec_t = np.empty(cap)
    rec_n = np.empty((cap, K), dtype=np.int64)
    counters = np.zeros(4)
    u = rng.random(_UNIFORM_CHUNK)
    initial = state.copy()
    while True:
        status = _kernel.run_chain(
            state, T, model.arrival, model.service, model.access, model.fixed, model.active,
            ct.cap, ct.hop_ptr, ct.hop_in, ct.theta_off, ct.route_len, ct.theta,
            u, counters, params.stride, rec_t, rec_n, edges, int_psi, int_n,
        )
        if status == _kernel.REACHED_HORIZON:
            break
        if status == _kernel.NEED_UNIFORMS:
            u = rng.random(_UNIFORM_CHUNK)
            counters[1] = 0
        else:
            cap *= 2
            rec_t = np.resize(rec_t, cap)
            rec_n = np.resize(rec_n, (cap, K))
    m = int(counters[2])
    times = np.concatenate([[0.0], rec_t[:m], [T]])
    states = np.vstack([initial[None, :], rec_n[:m], state[None, :]])
    widths = np.diff(edges)[:, None]
    return Trajectory(
        times=times,
        states=states,
        class_ids=tuple(c.id for c in model.topology.classes),
        events=int(counters[3]),
        seed=params.seed,
        horizon=T,
        scale=model.access.copy(),
        batch_edges=edges,
        batch_throughput=int_psi / widths,
        batch_count=int_n / widths,
    )


def _restrict(traj: Trajectory, keep: Sequence[int]) -> Trajectory:
    keep = list(keep)
    return Trajectory(
        times=traj.times,
        states=traj.states[:, keep],
        class_ids=tuple(traj.class_ids[k] for k in keep),
        events=traj.events,
        seed=traj.seed,
        horizon=traj.horizon,
        scale=traj.scale[keep],
        batch_edges=traj.batch_edges,
        batch_throughput=traj.batch_throughput,
        batch_count=traj.batch_count,
    )


def simulate(topology: Topology, n0: Sequence[int], params: SimParams) -> Trajectory:
    """Simulate the flow-count process ``N(t)`` (``params.beta`` is ignored)."""
    return run_model(ChainModel.plain(topology), n0, params)


def simulate_scaled(topology: Topology, n0: Sequence[int], params: SimParams) -> Trajectory:
    """Simulate ``N_beta``: arrivals ``beta*lambda``, services ``beta*mu``, access ``a/beta``.

    ``Trajectory.scaled_states`` gives the path ``beta^-1 a * N_beta(t)``.
    """
    return run_model(ChainModel.plain(topology, params.beta), n0, params)


def quasi_stationary_model(topology: Topology, alpha: float, beta: float = 1.0) -> ChainModel:
    """Chain of classes ``2..L`` of a linear network with class 0 frozen at rate ``alpha``.

    The model lives on links ``2..L``; class 0 (index 0) is a frozen input and
    the remaining indices are classes ``2..L`` in order.
    """
    L = linear_length(topology)
    route = topology.classes[0].route
    C1 = topology.capacities[route[0]]
    if not (0.0 <= alpha <= C1):
        raise AlphaOutOfRange(f"alpha must lie in [0, {C1}], got {alpha}")
    if L < 2:
        raise FlowdropError("the quasi-stationary chain needs L >= 2")
    c0 = topology.classes[0]
    caps = {l: topology.capacities[l] for l in route[1:]}
    classes = [FlowClass(c0.id, route[1:], c0.access_rate, 0.0, c0.service_rate)]
    classes += list(topology.classes[2:])
    sub = Topology(caps, tuple(classes), tuple(route[1:]))
    model = ChainModel.plain(sub, beta)
    model.active[0] = False
    model.fixed[0] = alpha
    return model


def simulate_quasi_stationary(
    topology: Topology, alpha: float, n0_rest: Sequence[int], params: SimParams
) -> Trajectory:
    """Simulate the chain of classes ``2..L`` with class 0 fixed at rate ``alpha``.

    Departure rates are ``mu_k * phi~_k(alpha, n)``; honours ``params.beta``.
    Column 0 of ``batch_throughput`` holds the class-0 throughput ``phi~_0``.
    """
    model = quasi_stationary_model(topology, alpha, params.beta)
    traj = run_model(model, [0, *n0_rest], params)
    return _restrict(traj, range(1, model.topology.n_classes))


def saturated_model(topology: Topology, finite: Sequence[int], beta: float = 1.0) -> ChainModel:
    analyze_tree(topology, check_saturable=False)
    model = ChainModel.plain(topology, beta)
    finite = set(finite)
    if not finite:
        raise FlowdropError("the set of tracked classes must not be empty")
    for k in range(topology.n_classes):
        if k not in finite:
            model.active[k] = False
            model.fixed[k] = math.inf
    return model


def simulate_saturated(
    topology: Topology, finite: Sequence[int], n0: Sequence[int], params: SimParams
) -> Trajectory:
    """Simulate the classes ``finite`` of an upstream tree with all others saturated.

    ``n0`` gives the initial counts of the classes in ``finite`` (same order).
    Honours ``params.beta``. Raises NotUpstreamTree.
    """
    finite = list(finite)
    if len(n0) != len(finite):
        raise FlowdropError("n0 must give one count per tracked class")
    model = saturated_model(topology, finite, params.beta)
    full = np.zeros(topology.n_classes, dtype=np.int64)
    full[finite] = n0
    return _restrict(run_model(model, full, params), finite)


class Verdict(str, enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class DriftResult:
    verdict: Verdict
    slope: float
    slope_se: float
    returns: int
    level: int


def drift_classify(
    traj: Trajectory,
    burn_in: float = 0.2,
    *,
    min_returns: int = 10,
    return_level: int | None = None,
    slope_sigmas: float = 3.0,
    n_points: int = 200,
) -> DriftResult:
    """Empirical stability verdict from a path.

    After the burn-in fraction, the path is Stable if it returns to the set
    ``{n : |n|_1 <= level}`` at least ``min_returns`` times (or never leaves
    it); otherwise Unstable if the least-squares slope of ``|n(t)|_1`` on a
    regular time grid exceeds ``slope_sigmas`` standard errors; otherwise
    Inconclusive. ``level`` defaults to ``|n(0)|_1``; a larger
    ``return_level`` widens the set.

    The path must be recorded with stride 1 for the return count to be exact.
    """
    if not 0 <= burn_in < 1:
        raise FlowdropError("burn_in must lie in [0, 1)")
    t0 = burn_in * traj.horizon
    norms = traj.states.sum(axis=1)
    level = int(norms[0])
    if return_level is not None:
        level = max(level, int(return_level))
    after = traj.times >= t0
    start = max(int(np.argmax(after)) - 1, 0) if after.any() else len(norms) - 1
    window = norms[start:]
    if len(window) < 2 or traj.horizon - t0 <= 0:
        raise TooShort("trajectory has no events after the burn-in")

    inside = window <= level
    returns = int(np.count_nonzero(inside[1:] & ~inside[:-1]))

    grid = np.linspace(t0, traj.horizon, n_points)
    y = traj.state_at(grid).sum(axis=1).astype(float)
    xc = grid - grid.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xc
    se = math.sqrt(float(resid @ resid) / max(n_points - 2, 1) / sxx)

    if inside.all() or returns >= min_returns:
        verdict = Verdict.STABLE
    elif slope > 0 and slope > slope_sigmas * se:
        verdict = Verdict.UNSTABLE
    else:
        verdict = Verdict.INCONCLUSIVE
    return DriftResult(verdict, slope, se, returns, level)

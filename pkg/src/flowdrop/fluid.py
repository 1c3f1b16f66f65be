"""Fluid-limit ODE systems of the flow-count process.

All systems are integrated with a fixed-step fourth-order Runge-Kutta scheme.
After each step (and each stage) states are projected to the non-negative
orthant, and a component sitting at 0 with a negative drift is frozen there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._kernel import CompiledTopology
from .errors import DegenerateStart, DimensionMismatch, EmptyGrid, FlowdropError
from .topology import Topology, linear_length

Evaluator = Callable[[float], float]


@dataclass
class FluidPath:
    """Discretized ODE solution.

    ``alpha[j]`` is ``z_0 / (z_0 + z_1)`` (linear-network systems only; at the
    origin the last defined value is carried). ``hit_zero_time[k]`` is the first
    time component k reaches 0, interpolated within the step, or ``None``.
    ``info`` collects system-specific diagnostics.
    """

    times: np.ndarray
    states: np.ndarray
    class_ids: tuple
    alpha: np.ndarray | None = None
    hit_zero_time: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def slopes(self, fraction: float = 0.5) -> np.ndarray:
        """Least-squares slope of each component over the final ``fraction`` of the path."""
        keep = self.times >= self.times[-1] * (1 - fraction)
        t = self.times[keep]
        if len(t) < 2:
            return np.zeros(self.states.shape[1])
        tc = t - t.mean()
        z = self.states[keep]
        return tc @ (z - z.mean(axis=0)) / (tc @ tc)

    def to_csv(self, path) -> None:
        cols = [self.times[:, None], self.states]
        header = "t," + ",".join(f"z_{c}" for c in self.class_ids) + ",alpha"
        alpha = self.alpha if self.alpha is not None else np.full(len(self.times), np.nan)
        cols.append(alpha[:, None])
        np.savetxt(path, np.hstack(cols), delimiter=",", header=header, comments="", fmt="%.12g")


def _frozen(rhs):
    def wrapped(z):
        d = rhs(z)
        d[(z <= 0.0) & (d < 0.0)] = 0.0
        return d
    return wrapped


def _integrate(rhs, z0, T, step, *, after_step=None, stop=None, record_every=1):
    """Projected RK4. ``after_step(t, z)`` may adjust the state in place; ``stop(z)`` ends the run."""
    if not (T > 0 and step > 0):
        raise FlowdropError("T and step must be > 0")
    n = max(1, math.ceil(T / step - 1e-9))
    h = T / n
    f = _frozen(rhs)
    z = np.maximum(np.asarray(z0, dtype=float), 0.0)
    K = z.size
    hit = [0.0 if z[k] == 0.0 else None for k in range(K)]
    times = [0.0]
    states = [z.copy()]
    t = 0.0
    for i in range(1, n + 1):
        k1 = f(z)
        k2 = f(np.maximum(z + 0.5 * h * k1, 0.0))
        k3 = f(np.maximum(z + 0.5 * h * k2, 0.0))
        k4 = f(np.maximum(z + h * k3, 0.0))
        raw = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        for k in range(K):
            if hit[k] is None and raw[k] <= 0.0 < z[k]:
                hit[k] = t + h * z[k] / (z[k] - raw[k])
        z = np.maximum(raw, 0.0)
        t = i * h
        if after_step is not None:
            after_step(t, z)
        for k in range(K):
            if hit[k] is None and z[k] == 0.0:
                hit[k] = t
        done = stop is not None and stop(z)
        if i % record_every == 0 or i == n or done:
            times.append(t)
            states.append(z.copy())
        if done:
            break
    return np.array(times), np.array(states), tuple(None if h is None else float(h) for h in hit)


def _linear_rates(topology: Topology):
    L = linear_length(topology)
    lam = np.asarray(topology.arrival_rates, dtype=float)
    mu = np.asarray(topology.service_rates, dtype=float)
    return L, lam, mu


def _check_z0(topology: Topology, z0, *, allow_origin: bool = False) -> np.ndarray:
    z = np.asarray(z0, dtype=float)
    if z.shape != (topology.n_classes,):
        raise DimensionMismatch(f"z0 must have {topology.n_classes} entries")
    if (z < 0).any() or not np.isfinite(z).all():
        raise FlowdropError("z0 must be finite and non-negative")
    if z[0] + z[1] <= 0.0 and not allow_origin:
        raise DegenerateStart("z0_0 + z0_1 must be > 0: the class-0 share at link 1 is undefined")
    return z


def _alpha_series(states: np.ndarray, first: float) -> np.ndarray:
    s = states[:, 0] + states[:, 1]
    out = np.empty(len(states))
    last = first
    for j in range(len(states)):
        if s[j] > 0:
            last = states[j, 0] / s[j]
        out[j] = last
    return out


def integrate_general(topology: Topology, z0: Sequence[float], T: float, step: float = 1e-3,
                      *, record_every: int = 1) -> FluidPath:
    """General-phase fluid dynamics of a linear network while some ``z_k > 0``, ``k >= 2``.

    ``z_0' = lambda_0``, ``z_1' = lambda_1 - mu_1 C_1 z_1 / (z_0 + z_1)`` and
    ``z_k' = (lambda_k - mu_k) 1{z_k > 0}``. The path stops at the first time
    all of ``z_2..z_L`` are 0; ``info["exit_time"]`` and ``info["exit_state"]``
    report it (``None`` when the horizon comes first).
    """
    L, lam, mu = _linear_rates(topology)
    # From z0_0 + z0_1 = 0 the share is defined for t > 0 as soon as class 0 arrives.
    z = _check_z0(topology, z0, allow_origin=lam[0] > 0)
    C1 = topology.capacities[topology.classes[0].route[0]]

    def rhs(x):
        d = np.empty_like(x)
        s = x[0] + x[1]
        d[0] = lam[0]
        d[1] = lam[1] - mu[1] * C1 * (x[1] / s if s > 0 else 0.0)
        for k in range(2, L + 1):
            d[k] = lam[k] - mu[k] if x[k] > 0 else 0.0
        return d

    def stop(x):
        return L < 2 or not (x[2:] > 0).any()

    ids = tuple(c.id for c in topology.classes)
    if stop(z):
        times, states, hit = np.array([0.0]), z[None, :].copy(), tuple(0.0 if v == 0 else None for v in z)
    else:
        times, states, hit = _integrate(rhs, z, T, step, stop=stop, record_every=record_every)
    exited = stop(states[-1])
    info = {
        "exit_time": float(times[-1]) if exited else None,
        "exit_state": states[-1].tolist() if exited else None,
    }
    first = z[0] / (z[0] + z[1]) if z[0] + z[1] > 0 else np.nan
    return FluidPath(times, states, ids, _alpha_series(states, first), hit, info)


def _averaged(topology, z0, evaluator, T, step, record_every):
    """Shared integrator of the averaged system ``z_0' = lambda_0 - mu_0 h(alpha)``, ``z_1' = lambda_1 - mu_1 (1 - alpha)``."""
    L, lam, mu = _linear_rates(topology)
    z = _check_z0(topology, z0)
    if (z[2:] != 0).any():
        raise FlowdropError("the averaged dynamics start with z_k = 0 for k >= 2")
    state = {"alpha": z[0] / (z[0] + z[1]), "pinned": False}
    origin_tol = step * float(lam[:2].sum() + mu[:2].sum())

    def drifts(a):
        return lam[0] - mu[0] * float(evaluator(a)), lam[1] - mu[1] * (1.0 - a)

    def rhs(x):
        d = np.zeros_like(x)
        if state["pinned"]:
            return d
        s = x[0] + x[1]
        a = x[0] / s if s > 0 else state["alpha"]
        d[0], d[1] = drifts(a)
        return d

    def after_step(t, x):
        if state["pinned"]:
            x[:] = 0.0
            return
        s = x[0] + x[1]
        if s > 0:
            state["alpha"] = x[0] / s
        d0, d1 = drifts(state["alpha"])
        if s <= origin_tol and d0 <= 0 and d1 <= 0:
            # Sub-critical at the origin: the fluid stays at 0.
            x[:] = 0.0
            state["pinned"] = True
            state.setdefault("origin_time", t)

    times, states, hit = _integrate(rhs, z, T, step, after_step=after_step, record_every=record_every)
    alpha = _alpha_series(states, z[0] / (z[0] + z[1]))
    ids = tuple(c.id for c in topology.classes)
    info = {"origin_time": state.get("origin_time")}
    return FluidPath(times, states, ids, alpha, hit, info)


def integrate_quasi_stationary(topology: Topology, z0: Sequence[float], phibar: Evaluator, T: float,
                               step: float = 1e-3, *, record_every: int = 1) -> FluidPath:
    """Averaged dynamics with ``z_2..z_L`` pinned at 0.

    ``z_0' = lambda_0 - mu_0 phibar(alpha)`` and ``z_1' = lambda_1 - mu_1 (1 - alpha)``
    with ``alpha = z_0 / (z_0 + z_1)``; ``phibar`` is any callable (a table,
    an envelope, the limit formula). Unit capacity on link 1. Once the state
    comes within one step of the origin with both drifts non-positive it is
    pinned at 0 and ``info["origin_time"]`` records when.
    """
    return _averaged(topology, z0, phibar, T, step, record_every)


def band_for(env: Evaluator, alphas: np.ndarray, rho0: float, rho1: float, direction: str,
             eta: float | None = None):
    """``(alpha_0, lo, hi)`` of the alpha-band used by the bounding dynamics.

    F: ``alpha_0 = max{alpha : f(alpha) = rho_0}`` and band
    ``[alpha_0 + eta, 1 - rho_1 - eta]``. G: ``alpha_0 = min{alpha : g(alpha) = rho_0}``
    (1 when g stays below ``rho_0``) and band ``[1 - rho_1 + eta, alpha_0 - eta]``.
    ``eta`` defaults to a twentieth of the gap. ``lo``/``hi`` are ``None`` if the
    gap is empty.
    """
    fine = np.linspace(0.0, 1.0, max(2001, 4 * len(alphas) + 1))
    vals = np.asarray(env(fine), dtype=float)
    if direction == "F":
        below = np.nonzero(vals <= rho0)[0]
        alpha0 = _refine(env, fine, below[-1], rho0, up=True) if below.size else 0.0
        gap = (1.0 - rho1) - alpha0
    elif direction == "G":
        above = np.nonzero(vals >= rho0)[0]
        alpha0 = _refine(env, fine, above[0], rho0, up=False) if above.size else 1.0
        gap = alpha0 - (1.0 - rho1)
    else:
        raise FlowdropError(f"direction must be 'F' or 'G', got {direction!r}")
    if gap <= 0:
        return float(alpha0), None, None
    eta = gap / 20.0 if eta is None else eta
    alpha0 = float(alpha0)
    if direction == "F":
        return alpha0, alpha0 + eta, 1.0 - rho1 - eta
    return alpha0, 1.0 - rho1 + eta, alpha0 - eta


def _refine(env, fine, j, level, up):
    """Bisection on the fine grid cell adjacent to index ``j`` for ``env = level``."""
    if up:
        if j == len(fine) - 1:
            return 1.0
        lo, hi = fine[j], fine[j + 1]
        inside = lambda a: env(a) <= level
    else:
        if j == 0:
            return 0.0
        lo, hi = fine[j - 1], fine[j]
        inside = lambda a: env(a) < level
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            lo = mid
        else:
            hi = mid
    return lo if up else hi


def integrate_bound(topology: Topology, z0: Sequence[float], envelope, direction: str, T: float,
                    step: float = 1e-3, *, eta: float | None = None, record_every: int = 1) -> FluidPath:
    """Bounding dynamics F (with the lower envelope f) or G (with the upper envelope g).

    Besides the path, ``info`` reports ``alpha0``, the band ``[lo, hi]``, the
    first time alpha enters it, whether alpha stays inside afterwards (up to
    the largest one-step change of alpha), ``origin_time`` and the slopes of
    both components over the final half of the horizon.
    """
    if len(getattr(envelope, "alphas", [0.0])) == 0:
        raise EmptyGrid("envelope has no grid points")
    if direction not in ("F", "G"):
        raise FlowdropError(f"direction must be 'F' or 'G', got {direction!r}")
    rho = topology.rho
    alphas = np.asarray(getattr(envelope, "alphas", np.linspace(0, 1, 51)))
    alpha0, lo, hi = band_for(envelope, alphas, rho[0], rho[1], direction, eta)
    path = _averaged(topology, z0, envelope, T, step, record_every)
    entry, stays = None, None
    if lo is not None:
        a = path.alpha
        live = (path.states[:, 0] + path.states[:, 1]) > 0
        inside = (a >= lo) & (a <= hi) & live
        if inside.any():
            j = int(np.argmax(inside))
            entry = float(path.times[j])
            tol = float(np.abs(np.diff(a)).max()) if len(a) > 1 else 0.0
            tail = a[j:][live[j:]]
            stays = bool(((tail >= lo - tol) & (tail <= hi + tol)).all())
    path.info.update(
        direction=direction,
        alpha0=alpha0,
        band=(lo, hi) if lo is not None else None,
        band_entry_time=entry,
        stays_in_band=stays,
        final_slopes=path.slopes(0.5)[:2].tolist(),
    )
    return path


def integrate_lln(topology: Topology, x0: Sequence[float], T: float, step: float = 1e-2,
                  *, tol: float = 1e-3, record_every: int = 1) -> FluidPath:
    """Large-numbers limit ``x_k' = a_k (lambda_k - mu_k psi_k(x))`` with projection at 0.

    ``info["at_fixed_point"]`` tells whether the terminal state satisfies
    ``max_k |psi_k(x) - rho_k| <= tol``.
    """
    x = np.asarray(x0, dtype=float)
    if x.shape != (topology.n_classes,):
        raise DimensionMismatch(f"x0 must have {topology.n_classes} entries")
    if (x < 0).any() or not np.isfinite(x).all():
        raise FlowdropError("x0 must be finite and non-negative")
    ct = CompiledTopology(topology)
    a = np.asarray(topology.access_rates, dtype=float)
    lam = np.asarray(topology.arrival_rates, dtype=float)
    mu = np.asarray(topology.service_rates, dtype=float)
    rho = np.asarray(topology.rho, dtype=float)

    def rhs(z):
        return a * (lam - mu * ct.psi(z))

    times, states, hit = _integrate(rhs, x, T, step, record_every=record_every)
    psi_end = ct.psi(states[-1])
    gap = float(np.abs(psi_end - rho).max()) if len(rho) else 0.0
    info = {
        "final_state": states[-1].tolist(),
        "fixed_point_gap": gap,
        "at_fixed_point": gap <= tol,
    }
    return FluidPath(times, states, tuple(c.id for c in topology.classes), None, hit, info)

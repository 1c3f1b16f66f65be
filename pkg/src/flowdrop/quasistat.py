"""Average class-0 throughput in the quasi-stationary regime of a linear network.

With the class-0 rate after link 1 frozen at ``alpha``, classes ``2..L`` form
an ergodic chain (when every ``rho_k < 1``) and ``phibar(alpha)`` is the mean
class-0 throughput under its stationary law. Estimators: Monte Carlo along the
chain, an exact birth-death solve for ``L = 2``, a truncated-generator solve
for small ``L``, and the small-access-rate limit ``min(alpha, min_k 1 - rho_k)``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from functools import partial
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .allocation import quasi_stationary_allocate
from .ctmc import SimParams, replica_seed, simulate_quasi_stationary
from .errors import AlphaOutOfRange, EmptyGrid, FlowdropError, NotErgodic, TruncationTooSmall
from .parallel import map_tasks
from .topology import Topology, linear_from_rho, linear_length

MONTE_CARLO = "monte_carlo"
EXACT = "exact_truncated"
LIMIT = "limit_formula"


@dataclass(frozen=True)
class PhiBarEstimate:
    alpha: float
    value: float
    method: str
    standard_error: float | None = None
    truncation_mass: float | None = None
    beta: float = 1.0

    @property
    def error_bar(self) -> float:
        """Standard error for Monte Carlo, truncation mass for exact solves, else 0."""
        if self.standard_error is not None:
            return self.standard_error
        return self.truncation_mass or 0.0


@dataclass(frozen=True)
class GammaPoint:
    alpha: float
    gamma: tuple[float, ...]
    residual: float


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")


def _check_ergodic(rho_rest: Sequence[float]) -> None:
    bad = [r for r in rho_rest if not r < 1.0]
    if bad:
        raise NotErgodic(f"the quasi-stationary chain needs rho_k < 1 for k >= 2, got {list(rho_rest)}")


def phibar_exact_L2(rho2: float, a2: float, alpha: float, n_max: int = 10_000, tol: float = 1e-10) -> PhiBarEstimate:
    """Exact ``phibar(alpha)`` for ``L = 2`` by detailed balance on ``{0..n_max}``.

    The class-2 chain is birth-death with birth rate ``lambda_2`` and death rate
    ``mu_2 * min(n a2, n a2 / (alpha + n a2))``; only ``rho2`` matters. The
    neglected tail mass is bounded by a geometric series and must be below
    ``tol``. Unit link capacities.
    """
    _check_alpha(alpha)
    _check_ergodic([rho2])
    if a2 <= 0:
        raise FlowdropError("access rate must be > 0")
    if rho2 == 0.0:
        return PhiBarEstimate(alpha, alpha, EXACT, truncation_mass=0.0)
    n = np.arange(1, n_max + 1, dtype=float)
    x = n * a2
    phi2 = np.minimum(x, x / (alpha + x))
    log_pi = np.concatenate([[0.0], np.cumsum(math.log(rho2) - np.log(phi2))])
    shift = log_pi.max()
    w = np.exp(log_pi - shift)
    z = w.sum()
    # Birth/death ratios decrease in n, so the first neglected ratio bounds the rest.
    x_next = (n_max + 1) * a2
    r = rho2 / min(x_next, x_next / (alpha + x_next))
    tail = math.inf if r >= 1 else w[-1] * r / (1 - r)
    mass = tail / (z + tail) if math.isfinite(tail) else 1.0
    if not mass < tol:
        raise TruncationTooSmall(f"tail mass {mass:.3g} beyond n_max={n_max} exceeds {tol:g}")
    pi = w / z
    xs = np.concatenate([[0.0], x])
    phi0 = np.minimum(alpha, alpha / np.maximum(alpha + xs, 1e-300)) if alpha > 0 else np.zeros_like(xs)
    return PhiBarEstimate(alpha, float(pi @ phi0), EXACT, truncation_mass=mass)


def phibar_exact_truncated(topology: Topology, alpha: float, n_max: int = 40, beta: float = 1.0) -> PhiBarEstimate:
    """``phibar(alpha)`` from the generator truncated to ``{0..n_max}^(L-1)``.

    Cross-check solver for small ``L`` (at most 3 with ``n_max <= 60``).
    ``truncation_mass`` reports the stationary mass on the truncation boundary.
    """
    L = linear_length(topology)
    rest = topology.classes[2:]
    _check_alpha(alpha)
    _check_ergodic([c.rho for c in rest])
    dims = L - 1
    if dims > 2 or n_max > 60:
        raise FlowdropError("truncated solve is limited to L <= 3 and n_max <= 60")
    lam = np.array([c.arrival_rate for c in rest]) * beta
    mu = np.array([c.service_rate for c in rest]) * beta
    acc = np.array([c.access_rate for c in rest]) / beta
    states = list(itertools.product(range(n_max + 1), repeat=dims))
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    phi0 = np.empty(len(states))
    for s, i in index.items():
        psi0, psi = quasi_stationary_allocate(topology, alpha, [nk * ak for nk, ak in zip(s, acc)])
        phi0[i] = psi0
        out = 0.0
        for k in range(dims):
            if s[k] < n_max and lam[k] > 0:
                up = list(s)
                up[k] += 1
                rows.append(i); cols.append(index[tuple(up)]); vals.append(lam[k])
                out += lam[k]
            if s[k] > 0:
                d = mu[k] * psi[k]
                down = list(s)
                down[k] -= 1
                rows.append(i); cols.append(index[tuple(down)]); vals.append(d)
                out += d
        rows.append(i); cols.append(i); vals.append(-out)
    m = len(states)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
    A = Q.T.tolil()
    A[0, :] = np.ones(m)
    b = np.zeros(m)
    b[0] = 1.0
    pi = spla.spsolve(A.tocsc(), b)
    boundary = np.array([max(s) == n_max for s in states])
    return PhiBarEstimate(alpha, float(pi @ phi0), EXACT, truncation_mass=float(pi[boundary].sum()), beta=beta)


def phibar_limit(alpha: float, rho_rest: Sequence[float]) -> float:
    """Small-access-rate limit ``min(alpha, min_k (1 - rho_k))``."""
    _check_alpha(alpha)
    _check_ergodic(rho_rest)
    return min([alpha] + [1.0 - r for r in rho_rest])


def gamma_fixed_point(alpha: float, rho_rest: Sequence[float], *, verify: bool = True) -> GammaPoint:
    """Fixed point of the scaled quasi-stationary dynamics of classes ``2..L``.

    Built link by link: the class-0 rate reaching link k is
    ``t = min(alpha, min_{j<k} (1 - rho_j))`` and class k needs
    ``max(rho_k, rho_k t / (1 - rho_k))``. With ``verify`` the residuals
    ``rho_k - psi~_k(alpha, gamma)`` are computed through the allocation.
    """
    _check_alpha(alpha)
    _check_ergodic(rho_rest)
    gamma = []
    t = alpha
    for r in rho_rest:
        gamma.append(max(r, r / (1.0 - r) * t))
        t = min(t, 1.0 - r)
    residual = 0.0
    if verify and rho_rest:
        top = linear_from_rho([0.0, 0.0, *rho_rest])
        _, psi = quasi_stationary_allocate(top, alpha, gamma)
        residual = max(abs(r - p) for r, p in zip(rho_rest, psi))
    return GammaPoint(alpha, tuple(gamma), residual)


def _initial_counts(topology: Topology, alpha: float, beta: float) -> list[int]:
    rest = topology.classes[2:]
    gamma = gamma_fixed_point(alpha, [c.rho for c in rest], verify=False).gamma
    return [int(round(g * beta / c.access_rate)) for g, c in zip(gamma, rest)]


def phibar_mc(topology: Topology, alpha: float, params: SimParams, batches: int | None = None) -> PhiBarEstimate:
    """Monte Carlo ``phibar(alpha)``: time average of ``phi~_0`` after burn-in.

    Standard error by batch means over ``batches`` (default ``params.batches``).
    Honours ``params.beta`` (the scaled chain of rates ``beta*lambda``,
    ``beta*mu`` and access ``a/beta``). The chain starts at the rounded
    fluid fixed point.
    """
    L = linear_length(topology)
    _check_alpha(alpha)
    _check_ergodic([c.rho for c in topology.classes[2:]])
    if batches is not None:
        params = replace(params, batches=batches)
    if params.batches < 2:
        raise FlowdropError("batch means need at least two batches")
    if alpha == 0.0:
        return PhiBarEstimate(alpha, 0.0, MONTE_CARLO, standard_error=0.0, beta=params.beta)
    if L == 1:
        return PhiBarEstimate(alpha, alpha, MONTE_CARLO, standard_error=0.0, beta=params.beta)
    n0 = _initial_counts(topology, alpha, params.beta)
    traj = simulate_quasi_stationary(topology, alpha, n0, params)
    means = traj.batch_throughput[:, 0]
    se = float(means.std(ddof=1) / math.sqrt(len(means)))
    return PhiBarEstimate(alpha, float(means.mean()), MONTE_CARLO, standard_error=se, beta=params.beta)


def phibar_scaled_mc(topology: Topology, alpha: float, beta: float, params: SimParams) -> PhiBarEstimate:
    """Monte Carlo estimate of ``phibar_beta(alpha)`` under the beta-scaled chain."""
    return phibar_mc(topology, alpha, replace(params, beta=beta))


@dataclass(frozen=True)
class PhiBarTable:
    """``phibar`` sampled on an increasing grid of ``[0, 1]``; evaluated by linear interpolation."""

    alphas: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    method: str
    beta: float = 1.0

    def __post_init__(self):
        if len(self.alphas) == 0:
            raise EmptyGrid("phibar table has no grid points")
        if np.any(np.diff(self.alphas) <= 0):
            raise FlowdropError("phibar grid must be strictly increasing")

    def __call__(self, alpha):
        return np.interp(alpha, self.alphas, self.values)

    @property
    def max_step(self) -> float:
        return float(np.diff(self.alphas).max()) if len(self.alphas) > 1 else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "value", "se_or_trunc", "method", "beta"])
            for a, v, e in zip(self.alphas, self.values, self.errors):
                w.writerow([repr(float(a)), repr(float(v)), repr(float(e)), self.method, repr(float(self.beta))])

    @classmethod
    def from_csv(cls, path) -> "PhiBarTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise EmptyGrid(f"{path}: no rows")
        return cls(
            np.array([float(r["alpha"]) for r in rows]),
            np.array([float(r["value"]) for r in rows]),
            np.array([float(r["se_or_trunc"]) for r in rows]),
            rows[0]["method"],
            float(rows[0]["beta"]),
        )

    @classmethod
    def from_estimates(cls, estimates: Sequence[PhiBarEstimate]) -> "PhiBarTable":
        if not estimates:
            raise EmptyGrid("no estimates")
        return cls(
            np.array([e.alpha for e in estimates]),
            np.array([e.value for e in estimates]),
            np.array([e.error_bar for e in estimates]),
            estimates[0].method,
            estimates[0].beta,
        )


def alpha_grid(step: float = 0.02, start: float = 0.0, stop: float = 1.0) -> np.ndarray:
    if step <= 0:
        raise EmptyGrid("grid step must be > 0")
    n = int(round((stop - start) / step))
    grid = start + step * np.arange(n + 1)
    return np.clip(grid, start, stop)


def _table_point(task, topology, method, beta, params, n_max):
    i, alpha = task
    if method == LIMIT:
        v = phibar_limit(alpha, [c.rho for c in topology.classes[2:]])
        return PhiBarEstimate(alpha, v, LIMIT, beta=math.inf)
    if method == EXACT:
        L = linear_length(topology)
        if L == 2:
            c2 = topology.classes[2]
            return replace(phibar_exact_L2(c2.rho, c2.access_rate / beta, alpha, n_max), beta=beta)
        return phibar_exact_truncated(topology, alpha, min(n_max, 40), beta)
    p = replace(params, beta=beta, seed=replica_seed(params.seed or 0, i))
    return phibar_mc(topology, alpha, p)


def phibar_table(
    topology: Topology,
    alphas: Sequence[float],
    method: str = EXACT,
    *,
    beta: float = 1.0,
    params: SimParams | None = None,
    n_max: int = 10_000,
    workers: int | None = 1,
) -> PhiBarTable:
    """Tabulate ``phibar`` on a grid. Monte Carlo points use one stream per grid index."""
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise EmptyGrid("empty alpha grid")
    if method == MONTE_CARLO and params is None:
        params = SimParams(horizon=2000.0)
    fn = partial(_table_point, topology=topology, method=method, beta=beta, params=params, n_max=n_max)
    return PhiBarTable.from_estimates(map_tasks(fn, list(enumerate(alphas)), workers))


@dataclass(frozen=True)
class EnvelopeTable:
    alphas: np.ndarray
    values: np.ndarray
    mode: str

    def __call__(self, alpha):
        return np.interp(alpha, self.alphas, self.values)


def envelope(alphas: Sequence[float], values: Sequence[float], mode: str) -> EnvelopeTable:
    """Monotone envelopes of sampled ``phibar``.

    ``inf_upper``: ``f(alpha) = inf over [alpha, 1]`` (running minimum from the
    right). ``sup_lower``: ``g(alpha) = sup over [0, alpha]`` (running maximum
    from the left). Both are non-decreasing and ``f <= samples <= g``.
    """
    a = np.asarray(alphas, dtype=float)
    v = np.asarray(values, dtype=float)
    if a.size == 0:
        raise EmptyGrid("empty grid")
    if a.shape != v.shape:
        raise FlowdropError("grid and samples differ in length")
    if mode == "inf_upper":
        env = np.minimum.accumulate(v[::-1])[::-1]
    elif mode == "sup_lower":
        env = np.maximum.accumulate(v)
    else:
        raise FlowdropError(f"unknown envelope mode {mode!r}")
    return EnvelopeTable(a, env, mode)

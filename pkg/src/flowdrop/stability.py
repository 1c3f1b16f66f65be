"""Stability analysis: per-link optimal conditions, sufficient bounds for linear
networks, the large-numbers fixed point and the upstream-tree recursion."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .allocation import allocate, saturated_allocate, saturated_hop_rates
from .errors import (
    EmptyGrid,
    FlowdropError,
    NoConvergence,
    NoEligibleChild,
    NoRoot,
    OptimalConditionViolated,
)
from .quasistat import PhiBarTable
from .topology import Topology, TreeMeta, analyze_tree, linear_length


class LinearVerdict(str, enum.Enum):
    STABLE = "ProvablyStable"
    UNSTABLE = "ProvablyUnstable"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class OptimalReport:
    loads: dict
    capacities: dict
    ok: bool
    boundary: tuple
    violated: tuple

    def to_dict(self) -> dict:
        return {
            "loads": {str(l): v for l, v in self.loads.items()},
            "capacities": {str(l): v for l, v in self.capacities.items()},
            "ok": self.ok,
            "boundary_links": list(self.boundary),
            "violated_links": list(self.violated),
        }


def check_optimal(topology: Topology) -> OptimalReport:
    """Compare the load ``sum of rho_k`` of every link with its capacity.

    ``ok`` holds iff every load is strictly below capacity; links at equality
    are listed in ``boundary``, overloaded ones in ``violated``.
    """
    loads = topology.link_loads()
    caps = dict(topology.capacities)
    boundary = tuple(l for l in topology.link_order if loads[l] == caps[l])
    violated = tuple(l for l in topology.link_order if loads[l] > caps[l])
    return OptimalReport(loads, caps, not boundary and not violated, boundary, violated)


@dataclass(frozen=True)
class StabilityReport:
    verdict: LinearVerdict
    rho: tuple
    loads: dict
    inf_threshold: float | None
    sup_threshold: float | None
    margin: float
    reason: str
    provenance: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        d["loads"] = {str(l): v for l, v in self.loads.items()}
        d["rho"] = list(self.rho)
        return d


def _interval_extreme(table: PhiBarTable, lo: float, hi: float, which) -> tuple[float, float]:
    """Extreme of the interpolated table on ``[lo, hi]`` and the largest error bar it touches."""
    a = table.alphas
    inside = (a > lo) & (a < hi)
    pts = np.concatenate([[lo, hi], a[inside]])
    vals = table(pts)
    j = int(which(vals))
    # Error bars of the grid points bracketing the extreme.
    idx = np.clip(np.searchsorted(a, pts[j]), 1, len(a) - 1)
    err = float(max(table.errors[idx - 1], table.errors[idx]))
    return float(vals[j]), err


def classify_linear(topology: Topology, table: PhiBarTable) -> StabilityReport:
    """Three-way verdict from the sufficient stability and instability bounds.

    Stable if every ``rho_k < 1`` and ``rho_0 < inf over [1 - rho_1, 1]`` of
    phibar; unstable if some ``rho_k > 1`` or ``rho_0 > sup over [0, 1 - rho_1]``.
    The thresholds are widened by a margin: half the grid step (phibar is
    1-Lipschitz, so linear interpolation is off by at most that) plus three
    error bars. For ``L = 2`` phibar is increasing, so both thresholds equal
    ``phibar(1 - rho_1)`` and the bracketing grid values are used instead of
    the step margin. Equalities are Indeterminate.
    """
    L = linear_length(topology)
    if len(table.alphas) == 0:
        raise EmptyGrid("phibar table is empty")
    if table.alphas[0] > 0.0 or table.alphas[-1] < 1.0:
        raise FlowdropError("phibar table must cover [0, 1]")
    rho = tuple(topology.rho)
    loads = topology.link_loads()
    prov = {"method": table.method, "beta": table.beta, "grid_points": len(table.alphas),
            "grid_step": table.max_step}

    def report(verdict, inf_t, sup_t, margin, reason):
        return StabilityReport(verdict, rho, loads, inf_t, sup_t, margin, reason, prov)

    if any(r > 1.0 for r in rho):
        return report(LinearVerdict.UNSTABLE, None, None, 0.0, "some class has rho_k > 1")
    if rho[1] >= 1.0:
        return report(LinearVerdict.INDETERMINATE, None, None, 0.0, "rho_1 = 1: interval degenerates")
    x = 1.0 - rho[1]

    if L == 2:
        j = int(np.searchsorted(table.alphas, x))
        if j < len(table.alphas) and math.isclose(table.alphas[j], x, abs_tol=1e-12):
            lo_v = hi_v = float(table.values[j])
            lo_e = hi_e = float(table.errors[j])
        else:
            lo_v, hi_v = float(table.values[j - 1]), float(table.values[j])
            lo_e, hi_e = float(table.errors[j - 1]), float(table.errors[j])
        inf_t = lo_v - 3.0 * lo_e
        sup_t = hi_v + 3.0 * hi_e
        margin = max(sup_t - inf_t, 0.0) / 2.0
        reason = "monotone phibar: threshold phibar(1 - rho_1)"
    else:
        inf_v, inf_e = _interval_extreme(table, x, 1.0, np.argmin)
        sup_v, sup_e = _interval_extreme(table, 0.0, x, np.argmax)
        half = table.max_step / 2.0
        inf_t = inf_v - half - 3.0 * inf_e
        sup_t = sup_v + half + 3.0 * sup_e
        margin = half + 3.0 * max(inf_e, sup_e)
        reason = "envelope bounds over [1 - rho_1, 1] and [0, 1 - rho_1]"

    if all(r < 1.0 for r in rho) and rho[0] < inf_t:
        return report(LinearVerdict.STABLE, inf_t, sup_t, margin, reason)
    if rho[0] > sup_t:
        return report(LinearVerdict.UNSTABLE, inf_t, sup_t, margin, reason)
    return report(LinearVerdict.INDETERMINATE, inf_t, sup_t, margin, reason)


@dataclass(frozen=True)
class FixedPointReport:
    status: str  # "unique", "none" or "boundary"
    point: tuple | None
    residual: float | None
    optimal: OptimalReport


def lln_fixed_point(topology: Topology) -> FixedPointReport:
    """Fixed point of the large-numbers dynamics: ``rho`` under strict optimal conditions."""
    opt = check_optimal(topology)
    if opt.violated:
        return FixedPointReport("none", None, None, opt)
    if opt.boundary:
        return FixedPointReport("boundary", None, None, opt)
    rho = topology.rho
    psi = allocate(topology, rho).psi
    residual = max((abs(p - r) for p, r in zip(psi, rho)), default=0.0)
    return FixedPointReport("unique", tuple(rho), residual, opt)


# Upstream trees


@dataclass(frozen=True)
class K0Selection:
    index: int
    class_id: object
    path: tuple  # links of the selected route, entry first
    effective_capacity: dict
    succ_links: tuple  # (link, load through the link, effective capacity), entry first
    sigma: tuple  # product-form rates per hop, entry first


def _load_through(meta: TreeMeta, rho: Sequence[float], link: int) -> float:
    return sum(rho[k] for k in meta.classes_through.get(link, ()))


def tree_select_k0(topology: Topology, rho: Sequence[float] | None = None,
                   meta: TreeMeta | None = None) -> K0Selection:
    """First class of the stabilization order on an upstream tree.

    Walk down from the root. If a class enters the current link it is
    selected; otherwise move to the first child ``l`` (declaration order)
    whose load is below its effective capacity. The path is then re-checked:
    every link on it must carry a load strictly below its effective capacity.
    """
    meta = meta or analyze_tree(topology)
    rho = topology.rho if rho is None else tuple(rho)
    caps = topology.capacities
    eff = meta.effective_capacity
    link = meta.root
    while link not in meta.entry:
        tried = []
        for child in meta.children.get(link, ()):
            load = _load_through(meta, rho, child)
            tried.append((child, load, eff[child]))
            if load < eff[child]:
                link = child
                break
        else:
            detail = ", ".join(f"link {l}: {ld:.6g} >= {e:.6g}" for l, ld, e in tried)
            raise NoEligibleChild(f"no child of link {link} satisfies load < effective capacity ({detail})")
    k0 = meta.entry[link]
    route = topology.classes[k0].route
    succ = tuple((l, _load_through(meta, rho, l), eff[l]) for l in route)
    bad = [s for s in succ if not s[1] < s[2]]
    if bad:
        raise NoEligibleChild(f"path of class {topology.classes[k0].id} fails load < effective capacity at {bad}")
    sigma = []
    for i in range(len(route)):
        prod = 1.0
        for l in route[i + 1:]:
            prod *= sum(caps[j] for j in meta.children.get(l, ())) / caps[l] if meta.children.get(l) else 1.0
        sigma.append(rho[k0] * prod)
    return K0Selection(k0, topology.classes[k0].id, tuple(route), dict(eff), succ, tuple(sigma))


def _solve_coordinate(topology, meta, rates, k, target, tol):
    """Smallest-residual root of ``psi_k(x_k; rates) = target`` by bisection in ``x_k``."""
    def psi(x):
        r = dict(rates)
        r[k] = x
        return saturated_allocate(topology, r, meta)[k]

    if target <= 0.0:
        return 0.0
    r = dict(rates)
    r.pop(k, None)
    limit = saturated_hop_rates(topology, r, k)[-1]
    if not limit > target:
        raise NoRoot(f"class {topology.classes[k].id}: limit throughput {limit:.6g} <= rho {target:.6g}")
    hi = max(target, 1e-12)
    while psi(hi) < target:
        hi *= 2.0
        if hi > 1e15:
            raise NoRoot(f"class {topology.classes[k].id}: no bracket for rho {target:.6g}")
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if psi(mid) < target:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class FixedPointStep:
    order: tuple  # class indices solved jointly, in selection order
    alpha: dict  # class index -> input rate at the fixed point
    residuals: dict  # class index -> lambda_k - mu_k psi_k
    iterations: int


def tree_fixed_points(topology: Topology, sequence: Sequence[int], next_class: int,
                      prior: Mapping[int, float] | None = None, *, meta: TreeMeta | None = None,
                      tol: float = 1e-10, max_iter: int = 10_000) -> FixedPointStep:
    """Saturated fixed point for the classes ``sequence + [next_class]``.

    Classes outside this set are saturated. The system
    ``lambda_k = mu_k psi_k(x)`` over the finite classes is solved by
    coordinatewise bisection sweeps (each coordinate is monotone in its own
    rate) until no coordinate moves by more than ``tol``.
    """
    meta = meta or analyze_tree(topology, check_saturable=False)
    order = tuple(sequence) + (next_class,)
    if len(set(order)) != len(order):
        raise FlowdropError("a class may appear only once in the sequence")
    rho = topology.rho
    x = {k: float((prior or {}).get(k, 0.0)) for k in order}
    for it in range(1, max_iter + 1):
        delta = 0.0
        for k in order:
            new = _solve_coordinate(topology, meta, x, k, rho[k], tol * 1e-3)
            delta = max(delta, abs(new - x[k]))
            x[k] = new
        if delta <= tol:
            break
    else:
        raise NoConvergence(f"no convergence after {max_iter} sweeps (last change {delta:.3g})")
    psi = saturated_allocate(topology, x, meta)
    cls = topology.classes
    residuals = {k: cls[k].arrival_rate - cls[k].service_rate * psi[k] for k in order}
    return FixedPointStep(order, x, residuals, it)


@dataclass(frozen=True)
class TreeAnalysis:
    verdict: str
    order: tuple  # class ids
    k0: K0Selection
    steps: tuple  # FixedPointStep per stage
    sigma_exact: tuple  # per-hop rates of k0 at its first fixed point
    optimal: OptimalReport
    extrapolated: bool = field(default=False)

    def to_dict(self, topology: Topology) -> dict:
        ids = [c.id for c in topology.classes]
        return {
            "verdict": self.verdict,
            "order": list(self.order),
            "k0": {
                "class": self.k0.class_id,
                "path": list(self.k0.path),
                "succ_links": [{"link": l, "load": ld, "effective_capacity": e} for l, ld, e in self.k0.succ_links],
                "sigma_product": list(self.k0.sigma),
                "sigma_exact": list(self.sigma_exact),
            },
            "effective_capacity": {str(l): v for l, v in self.k0.effective_capacity.items()},
            "fixed_points": [
                {
                    "classes": [ids[k] for k in s.order],
                    "alpha": {str(ids[k]): v for k, v in s.alpha.items()},
                    "residuals": {str(ids[k]): v for k, v in s.residuals.items()},
                    "iterations": s.iterations,
                }
                for s in self.steps
            ],
            "extrapolated_beyond_two_classes": self.extrapolated,
            "optimal": self.optimal.to_dict(),
        }


def _next_class(topology, meta, fixed: Mapping[int, float]) -> int:
    """First remaining class whose throughput, when all its flows are present, exceeds rho."""
    rho = topology.rho
    for c in range(topology.n_classes):
        if c in fixed:
            continue
        limit = saturated_hop_rates(topology, dict(fixed), c)[-1]
        if limit > rho[c]:
            return c
    raise NoEligibleChild(f"no remaining class can be stabilized given {sorted(fixed)}")


def tree_asymptotic_report(topology: Topology, *, tol: float = 1e-10) -> TreeAnalysis:
    """Full stabilization order ``k_0, k_1, ...`` with the fixed point of each stage.

    Refused with OptimalConditionViolated unless every link load is strictly
    below capacity. Beyond the first two stages the next class is the first
    remaining one whose limiting throughput, with the chosen classes at their
    fixed-point rates and all others saturated, exceeds its load.
    """
    opt = check_optimal(topology)
    if not opt.ok:
        raise OptimalConditionViolated(
            f"optimal conditions fail (violated links {list(opt.violated)}, boundary links {list(opt.boundary)})"
        )
    meta = analyze_tree(topology)
    sel = tree_select_k0(topology, meta=meta)
    steps = [tree_fixed_points(topology, (), sel.index, meta=meta, tol=tol)]
    sigma_exact = saturated_hop_rates(topology, {sel.index: steps[0].alpha[sel.index]}, sel.index)[1:]
    sequence = [sel.index]
    while len(sequence) < topology.n_classes:
        nxt = _next_class(topology, meta, steps[-1].alpha)
        steps.append(tree_fixed_points(topology, sequence, nxt, steps[-1].alpha, meta=meta, tol=tol))
        sequence.append(nxt)
    for s in steps:
        worst = max(abs(v) for v in s.residuals.values())
        if worst > 1e-9:
            raise NoConvergence(f"fixed-point residual {worst:.3g} above 1e-9")
    ids = tuple(topology.classes[k].id for k in sequence)
    return TreeAnalysis("AsymptoticallyStable", ids, sel, tuple(steps), tuple(sigma_exact), opt,
                        extrapolated=len(sequence) > 2)

"""Replicated stability-region sweeps over (rho_0, rho_1) for linear networks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from functools import partial
from typing import Sequence

import numpy as np

from .ctmc import SimParams, Verdict, drift_classify, replica_seed, simulate
from .errors import ConfigError
from .parallel import map_tasks
from .quasistat import EXACT, LIMIT, MONTE_CARLO, PhiBarTable, alpha_grid, phibar_table
from .stability import LinearVerdict, check_optimal, classify_linear
from .topology import build_linear

CSV_HEADER = [
    "rho0", "rho1", "access_mult", "n_stable", "n_unstable", "n_inconclusive",
    "thm1_stable", "thm2_unstable", "optimal_ok",
]


@dataclass(frozen=True)
class SweepGrid:
    """Sweep settings; ``sweep.json`` uses exactly these field names.

    The rho_0 and rho_1 axes run from ``*_min`` to ``*_max`` in steps of
    ``*_step``. ``rho_rest`` fixes ``rho_2..rho_L`` (so ``L = 1 + len(rho_rest)``).
    Every class of a cell gets the access rate ``access_mult``. A replica
    counts as Stable when it returns at least ``min_returns`` times to
    ``{|n|_1 <= ceil(return_scale / access_mult)}`` after the burn-in.
    """

    rho0_min: float = 0.05
    rho0_max: float = 0.95
    rho0_step: float = 0.05
    rho1_min: float = 0.05
    rho1_max: float = 0.95
    rho1_step: float = 0.05
    rho_rest: tuple = (0.5,)
    access_mults: tuple = (1.0, 0.5, 0.25, 0.125)
    replicas: int = 20
    horizon: float = 1e4
    seed: int = 0
    burn_in: float = 0.2
    min_returns: int = 10
    return_scale: float = 1.0
    phibar_method: str = "auto"
    phibar_step: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "rho_rest", tuple(float(r) for r in self.rho_rest))
        object.__setattr__(self, "access_mults", tuple(float(a) for a in self.access_mults))
        for name in ("rho0_min", "rho0_max", "rho1_min", "rho1_max"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not all(0.0 < r < 1.0 for r in self.rho_rest):
            raise ConfigError("rho_rest entries must lie in (0, 1)")
        if self.rho0_step <= 0 or self.rho1_step <= 0 or self.phibar_step <= 0:
            raise ConfigError("steps must be > 0")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if not self.access_mults or any(a <= 0 for a in self.access_mults):
            raise ConfigError("access_mults must be non-empty and positive")
        if self.phibar_method not in ("auto", EXACT, MONTE_CARLO, LIMIT, "exact", "mc", "limit"):
            raise ConfigError(f"unknown phibar_method {self.phibar_method!r}")

    @staticmethod
    def _axis(lo, hi, step) -> list[float]:
        if hi < lo:
            return []
        n = int(math.floor((hi - lo) / step + 1e-9))
        return [round(lo + i * step, 10) for i in range(n + 1)]

    @property
    def rho0_values(self) -> list[float]:
        return self._axis(self.rho0_min, self.rho0_max, self.rho0_step)

    @property
    def rho1_values(self) -> list[float]:
        return self._axis(self.rho1_min, self.rho1_max, self.rho1_step)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SweepGrid":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rho_rest"] = list(self.rho_rest)
        d["access_mults"] = list(self.access_mults)
        return d


@dataclass(frozen=True)
class SweepRow:
    rho0: float
    rho1: float
    access_mult: float
    n_stable: int
    n_unstable: int
    n_inconclusive: int
    thm1_stable: bool
    thm2_unstable: bool
    optimal_ok: bool

    @property
    def majority_stable(self) -> bool:
        return 2 * self.n_stable > self.n_stable + self.n_unstable + self.n_inconclusive


@dataclass(frozen=True)
class SweepResult:
    grid: SweepGrid
    rows: tuple

    def limit_stable(self, row: SweepRow) -> bool:
        """Inside the small-access-rate region ``rho_0 < min(1 - rho_1, min_k 1 - rho_k)``."""
        return row.rho0 < min([1.0 - row.rho1] + [1.0 - r for r in self.grid.rho_rest])

    def majority_stable(self, access_mult: float) -> set:
        return {(r.rho0, r.rho1) for r in self.rows if r.access_mult == access_mult and r.majority_stable}


def _topology(grid: SweepGrid, rho0: float, rho1: float, mult: float):
    rho = [rho0, rho1, *grid.rho_rest]
    return build_linear(len(grid.rho_rest) + 1, 1.0, access_rates=mult, arrival_rates=rho, service_rates=1.0)


def _overlay_table(grid: SweepGrid, mult: float, workers) -> PhiBarTable:
    method = {"exact": EXACT, "mc": MONTE_CARLO, "limit": LIMIT}.get(grid.phibar_method, grid.phibar_method)
    if method == "auto":
        method = EXACT if len(grid.rho_rest) == 1 else MONTE_CARLO
    # phibar does not depend on rho_0 and rho_1.
    top = _topology(grid, 0.5, 0.5, mult)
    params = SimParams(horizon=max(2000.0, 200.0 / mult), seed=grid.seed)
    return phibar_table(top, alpha_grid(grid.phibar_step), method, params=params, workers=workers)


def _cell(task, grid: SweepGrid) -> tuple[int, int, int]:
    i0, i1, im, rho0, rho1, mult = task
    top = _topology(grid, rho0, rho1, mult)
    level = math.ceil(grid.return_scale / mult)
    counts = {Verdict.STABLE: 0, Verdict.UNSTABLE: 0, Verdict.INCONCLUSIVE: 0}
    n0 = [0] * top.n_classes
    for rep in range(grid.replicas):
        params = SimParams(horizon=grid.horizon, seed=replica_seed(grid.seed, i0, i1, im, rep))
        traj = simulate(top, n0, params)
        res = drift_classify(traj, grid.burn_in, min_returns=grid.min_returns, return_level=level)
        counts[res.verdict] += 1
    return counts[Verdict.STABLE], counts[Verdict.UNSTABLE], counts[Verdict.INCONCLUSIVE]


def run_sweep(grid: SweepGrid, *, workers: int | None = 1) -> SweepResult:
    """Simulate every (cell, multiplier) pair and attach the analytic overlays.

    Deterministic in ``grid.seed``: replica ``r`` of cell ``(i, j)`` at
    multiplier index ``m`` uses the stream ``(seed, i, j, m, r)``.
    """
    r0s, r1s = grid.rho0_values, grid.rho1_values
    if not r0s or not r1s:
        return SweepResult(grid, ())
    tasks = [
        (i0, i1, im, r0, r1, m)
        for im, m in enumerate(grid.access_mults)
        for i0, r0 in enumerate(r0s)
        for i1, r1 in enumerate(r1s)
    ]
    counts = map_tasks(partial(_cell, grid=grid), tasks, workers)
    tables = {m: _overlay_table(grid, m, workers) for m in grid.access_mults}
    rows = []
    for (i0, i1, im, r0, r1, m), (ns, nu, ni) in zip(tasks, counts):
        top = _topology(grid, r0, r1, m)
        rep = classify_linear(top, tables[m])
        rows.append(SweepRow(
            r0, r1, m, ns, nu, ni,
            rep.verdict is LinearVerdict.STABLE,
            rep.verdict is LinearVerdict.UNSTABLE,
            check_optimal(top).ok,
        ))
    rows.sort(key=lambda r: (r.rho0, r.rho1, -r.access_mult))
    return SweepResult(grid, tuple(rows))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(round(v, 10))
    return str(v)


def emit_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in result.rows:
            w.writerow([_fmt(getattr(r, name)) for name in CSV_HEADER])


def read_csv(path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            SweepRow(
                float(d["rho0"]), float(d["rho1"]), float(d["access_mult"]),
                int(d["n_stable"]), int(d["n_unstable"]), int(d["n_inconclusive"]),
                d["thm1_stable"] == "1", d["thm2_unstable"] == "1", d["optimal_ok"] == "1",
            )
            for d in reader
        ]


def binomial_noise(n: int, p: float = 0.5, z: float = 1.96) -> float:
    """Half-width of the normal-approximation 95% band for a count out of ``n``."""
    return z * math.sqrt(n * p * (1 - p))


def noisy_cell(row: SweepRow) -> bool:
    """Whether the Stable count is within the binomial noise band of a tie."""
    n = row.n_stable + row.n_unstable + row.n_inconclusive
    return abs(row.n_stable - n / 2) <= binomial_noise(n)


def region_checks(result: SweepResult, base_mult: float, reduced_mult: float, tol_steps: int = 1) -> dict:
    """Containment in the optimal region and growth of the region as access rates shrink.

    Returns the offending cells: majority-Stable cells more than ``tol_steps``
    grid steps outside the optimal region, and cells majority-Stable at
    ``base_mult`` but not at ``reduced_mult`` unless either count is a
    binomial-noise split.
    """
    g = result.grid
    step = max(g.rho0_step, g.rho1_step) * tol_steps
    bound0 = min([1.0 - r for r in g.rho_rest])
    outside = [
        (r.rho0, r.rho1, r.access_mult) for r in result.rows
        if r.majority_stable and not (r.rho0 + r.rho1 < 1.0 + step and r.rho0 < bound0 + step)
    ]
    by_key = {(r.rho0, r.rho1, r.access_mult): r for r in result.rows}
    not_contained = []
    for r in result.rows:
        if r.access_mult != base_mult or not r.majority_stable:
            continue
        other = by_key.get((r.rho0, r.rho1, reduced_mult))
        if other is not None and not other.majority_stable and not (noisy_cell(r) or noisy_cell(other)):
            not_contained.append((r.rho0, r.rho1))
    return {"outside_optimal": outside, "not_contained": not_contained}


def lln_tracking_gap(topology, beta: float, replicas: int = 20, *, seed: int = 0, T: float = 10.0,
                     step: float = 1e-2) -> dict:
    """Distance between the scaled chain and the large-numbers ODE, both started at the origin.

    All replicas are sampled on the ODE time grid. ``median_path_gap`` is the
    sup-norm distance from the pointwise median of the replica paths to the
    ODE; ``gaps`` holds each replica's own sup-norm distance.
    """
    from .ctmc import simulate_scaled
    from .fluid import integrate_lln

    path = integrate_lln(topology, [0.0] * topology.n_classes, T, step)
    samples = []
    for rep in range(replicas):
        params = SimParams(horizon=T, seed=replica_seed(seed, rep), beta=beta)
        traj = simulate_scaled(topology, [0] * topology.n_classes, params)
        samples.append(traj.state_at(path.times) * traj.scale)
    samples = np.array(samples)
    gaps = np.abs(samples - path.states).max(axis=(1, 2))
    median_path = np.median(samples, axis=0)
    return {
        "beta": beta,
        "median_path_gap": float(np.abs(median_path - path.states).max()),
        "gaps": gaps.tolist(),
        "median_gap": float(np.median(gaps)),
    }


def saturated_scaled_mean(topology, finite: Sequence[int], beta: float, *, horizon: float = 1000.0,
                          seed: int = 0, start: Sequence[float] | None = None) -> np.ndarray:
    """Time-average of ``(a / beta) n`` for the tracked classes of the saturated chain after burn-in."""
    from .ctmc import simulate_saturated

    finite = list(finite)
    acc = np.array([topology.classes[k].access_rate for k in finite])
    n0 = [0] * len(finite) if start is None else [int(round(x * beta / a)) for x, a in zip(start, acc)]
    traj = simulate_saturated(topology, finite, n0, SimParams(horizon=horizon, seed=seed, beta=beta))
    return traj.batch_count.mean(axis=0) * acc / beta

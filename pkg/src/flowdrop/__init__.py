"""Flow-level models of networks without congestion control under tail-drop sharing."""

from importlib.metadata import PackageNotFoundError, version

from .allocation import allocate, quasi_stationary_allocate, saturated_allocate, throughputs
from .ctmc import SimParams, Trajectory, drift_classify, simulate, simulate_quasi_stationary, simulate_saturated, simulate_scaled
from .errors import FlowdropError
from .fluid import FluidPath, integrate_bound, integrate_general, integrate_lln, integrate_quasi_stationary
from .quasistat import (
    PhiBarEstimate,
    PhiBarTable,
    envelope,
    gamma_fixed_point,
    phibar_exact_L2,
    phibar_limit,
    phibar_mc,
    phibar_scaled_mc,
)
from .stability import check_optimal, classify_linear, lln_fixed_point, tree_asymptotic_report, tree_fixed_points, tree_select_k0
from .sweep import SweepGrid, emit_csv, run_sweep
from .topology import Topology, analyze_tree, build_linear, load_topology, validate_topology

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

import numpy as np
import pytest

from flowdrop.errors import DegenerateStart, EmptyGrid, FlowdropError
from flowdrop.fluid import integrate_bound, integrate_general, integrate_lln, integrate_quasi_stationary
from flowdrop.quasistat import alpha_grid, envelope, phibar_exact_L2, phibar_limit

from conftest import linear


def limit_table(rho2=0.5, step=0.02):
    a = alpha_grid(step)
    return a, np.array([phibar_limit(x, [rho2]) for x in a])


def test_general_zero_drift_component_is_constant():
    top = linear([0.2, 0.3, 1.0, 0.5])
    path = integrate_general(top, [0.5, 0.5, 0.4, 0.2], T=1.0)
    assert np.allclose(path.states[:, 2], 0.4)


def test_general_hand_solved_exit():
    top = linear([0.2, 0.3, 0.5])
    path = integrate_general(top, [0.0, 0.0, 1.0], T=10.0, step=1e-3)
    assert path.hit_zero_time[2] == pytest.approx(1.0 / (1.0 - 0.5), abs=1e-6)
    assert path.info["exit_time"] == pytest.approx(2.0, abs=2e-3)
    assert path.info["exit_state"][0] == pytest.approx(0.2 * path.info["exit_time"], rel=1e-9)
    with pytest.raises(DegenerateStart):
        integrate_general(linear([0.0, 0.3, 0.5]), [0.0, 0.0, 1.0], T=1.0)


def test_general_transient_component_never_exits():
    top = linear([0.2, 0.3, 1.5])
    path = integrate_general(top, [0.5, 0.5, 0.1], T=20.0, step=1e-2)
    assert path.info["exit_time"] is None
    assert path.slopes()[2] == pytest.approx(0.5, abs=1e-9)


def test_quasi_stationary_constant_phibar_drains():
    top = linear([0.2, 0.2, 0.5])
    path = integrate_quasi_stationary(top, [0.5, 0.5, 0.0], lambda a: 0.5, T=20.0, step=1e-3)
    assert path.info["origin_time"] is not None
    assert (path.final_state == 0).all()
    assert (path.states >= 0).all()


def test_quasi_stationary_limit_hits_origin():
    top = linear([0.15, 0.3, 0.3])
    a, v = limit_table(0.3)
    path = integrate_quasi_stationary(top, [0.5, 0.5, 0.0], lambda x: np.interp(x, a, v), T=20.0)
    assert path.info["origin_time"] is not None and path.info["origin_time"] < 20.0


def test_quasi_stationary_fixed_ray():
    rho1 = 0.3
    alpha_star = 1.0 - rho1
    rho0 = phibar_exact_L2(0.5, 1.0, alpha_star).value
    top = linear([rho0, rho1, 0.5])
    phibar = lambda x: phibar_exact_L2(0.5, 1.0, float(np.clip(x, 0, 1))).value
    path = integrate_quasi_stationary(top, [alpha_star, rho1, 0.0], phibar, T=2.0, step=1e-2)
    assert np.allclose(path.alpha, alpha_star, atol=1e-9)


def test_quasi_stationary_rejects_bad_start():
    top = linear([0.2, 0.2, 0.5])
    with pytest.raises(DegenerateStart):
        integrate_quasi_stationary(top, [0.0, 0.0, 0.0], lambda a: a, T=1.0)
    with pytest.raises(FlowdropError):
        integrate_quasi_stationary(top, [0.5, 0.5, 0.1], lambda a: a, T=1.0)


def test_step_halving():
    top = linear([0.15, 0.3, 0.3])
    a, v = limit_table(0.3)
    ends = [integrate_quasi_stationary(top, [0.5, 0.5, 0.0], lambda x: np.interp(x, a, v), T=0.5, step=h).final_state
            for h in (4e-3, 2e-3, 1e-3)]
    d1 = np.abs(ends[0] - ends[1]).max()
    d2 = np.abs(ends[1] - ends[2]).max()
    assert d2 <= 1e-3 and d2 <= d1 + 1e-12


def _noisy_table():
    rng = np.random.default_rng(1)
    a = alpha_grid(0.05)
    v = np.array([phibar_exact_L2(0.5, 1.0, x).value for x in a]) + rng.normal(0, 0.01, a.size)
    return a, np.clip(v, 0, None)


@pytest.mark.parametrize("rho", [(0.2, 0.3), (0.45, 0.4), (0.3, 0.6)])
def test_bounds_sandwich_averaged_path(rho):
    a, v = _noisy_table()
    top = linear([*rho, 0.5])
    z0 = [0.6, 0.4, 0.0]
    exact = integrate_quasi_stationary(top, z0, lambda x: np.interp(x, a, v), T=5.0, step=1e-3)
    F = integrate_bound(top, z0, envelope(a, v, "inf_upper"), "F", T=5.0, step=1e-3)
    G = integrate_bound(top, z0, envelope(a, v, "sup_lower"), "G", T=5.0, step=1e-3)
    tol = 1e-9
    assert (F.states[:, :2] >= exact.states[:, :2] - tol).all()
    assert (G.states[:, :2] <= exact.states[:, :2] + tol).all()


def test_constant_envelopes_coincide_with_averaged_path():
    a = alpha_grid(0.1)
    v = np.full(a.size, 0.4)
    top = linear([0.2, 0.3, 0.5])
    z0 = [0.5, 0.5, 0.0]
    ref = integrate_quasi_stationary(top, z0, lambda x: 0.4, T=3.0)
    for mode, d in (("inf_upper", "F"), ("sup_lower", "G")):
        path = integrate_bound(top, z0, envelope(a, v, mode), d, T=3.0)
        assert np.allclose(path.states, ref.states)


def test_bound_F_trapped_in_band():
    top = linear([0.15, 0.3, 0.3])
    a, v = limit_table(0.3)
    path = integrate_bound(top, [0.5, 0.5, 0.0], envelope(a, v, "inf_upper"), "F", T=20.0)
    assert path.info["band"] is not None
    assert path.info["band_entry_time"] is not None and path.info["stays_in_band"]
    assert path.info["origin_time"] is not None


def test_bound_errors():
    top = linear([0.15, 0.3, 0.3])
    a, v = limit_table(0.3)
    with pytest.raises(FlowdropError):
        integrate_bound(top, [0.5, 0.5, 0.0], envelope(a, v, "inf_upper"), "H", T=1.0)
    with pytest.raises(DegenerateStart):
        integrate_bound(top, [0.0, 0.0, 0.0], envelope(a, v, "inf_upper"), "F", T=1.0)
    with pytest.raises(EmptyGrid):
        envelope([], [], "inf_upper")


def test_lln_constant_at_fixed_point(unit_line):
    path = integrate_lln(unit_line, unit_line.rho, T=5.0)
    assert np.allclose(path.states, np.array(unit_line.rho)[None, :])


def test_lln_converges_from_origin(unit_line):
    path = integrate_lln(unit_line, [0, 0, 0], T=200.0)
    assert np.abs(path.final_state - np.array([0.2, 0.3, 0.3])).max() <= 1e-3
    assert path.info["at_fixed_point"]


def test_lln_overloaded_grows():
    top = linear([0.6, 0.2, 0.5])
    path = integrate_lln(top, [0, 0, 0], T=100.0)
    assert not path.info["at_fixed_point"]
    assert path.slopes().sum() > 0.05
    assert (path.states >= 0).all()


def test_fluid_csv(tmp_path):
    top = linear([0.2, 0.3, 0.5])
    path = integrate_general(top, [0.5, 0.5, 0.5], T=1.0, step=1e-2)
    out = tmp_path / "p.csv"
    path.to_csv(out)
    header = out.read_text().splitlines()[0]
    assert header == "t,z_0,z_1,z_2,alpha"

import pytest

from flowdrop.errors import ConfigError
from flowdrop.sweep import CSV_HEADER, SweepGrid, emit_csv, read_csv, region_checks, run_sweep


def one_cell(rho0, rho1, **kw):
    base = dict(rho0_min=rho0, rho0_max=rho0, rho1_min=rho1, rho1_max=rho1, access_mults=(1.0,),
                replicas=4, horizon=2000.0, seed=1, phibar_step=0.1)
    base.update(kw)
    return SweepGrid(**base)


def test_header_is_fixed():
    assert CSV_HEADER == ["rho0", "rho1", "access_mult", "n_stable", "n_unstable", "n_inconclusive",
                          "thm1_stable", "thm2_unstable", "optimal_ok"]


def test_grid_validation_and_fields():
    with pytest.raises(ConfigError):
        SweepGrid.from_dict({"rho0_step": 0.1, "bogus": 1})
    with pytest.raises(ConfigError):
        SweepGrid(rho0_min=0.0)
    g = SweepGrid(rho0_min=0.1, rho0_max=0.3, rho0_step=0.1)
    assert g.rho0_values == [0.1, 0.2, 0.3]
    assert SweepGrid.from_dict(g.to_dict()) == g


def test_zero_area_grid_is_empty():
    g = one_cell(0.5, 0.3, rho0_min=0.6, rho0_max=0.5)
    assert run_sweep(g).rows == ()


def test_single_cell_one_row_per_multiplier():
    res = run_sweep(one_cell(0.2, 0.3, access_mults=(1.0, 0.5)))
    assert [r.access_mult for r in res.rows] == [1.0, 0.5]
    assert all(r.n_stable + r.n_unstable + r.n_inconclusive == 4 for r in res.rows)


def test_small_access_cell_is_stable():
    res = run_sweep(one_cell(0.15, 0.3, rho_rest=(0.3,), access_mults=(0.125,), replicas=100, horizon=1e4))
    (row,) = res.rows
    assert row.n_stable >= 95
    assert row.optimal_ok and row.thm1_stable


def test_overloaded_cell_is_unstable():
    (row,) = run_sweep(one_cell(0.7, 0.1, replicas=10)).rows
    assert 2 * row.n_unstable > 10
    assert not row.optimal_ok and row.thm2_unstable


def test_deterministic_and_round_trip(tmp_path):
    g = one_cell(0.2, 0.2, rho0_max=0.3, rho0_step=0.1, replicas=3)
    a, b = run_sweep(g), run_sweep(g)
    assert a.rows == b.rows
    path = tmp_path / "region.csv"
    emit_csv(a, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert tuple(read_csv(path)) == a.rows
    again = tmp_path / "again.csv"
    emit_csv(b, again)
    assert path.read_bytes() == again.read_bytes()


def test_region_checks_shapes():
    res = run_sweep(one_cell(0.35, 0.5, access_mults=(1.0, 0.125), replicas=6, horizon=5000.0))
    checks = region_checks(res, 1.0, 0.125)
    assert checks["outside_optimal"] == [] and checks["not_contained"] == []

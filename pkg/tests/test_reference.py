import math

import numpy as np
import pytest

from mildns.calculus import heat_trajectory, spectral_divergence
from mildns.grid import Field, Trajectory, make_grid, random_field
from mildns.reference import (CFLError, compare, energy, localized_vortex, perturbed_taylor_green,
                              rk4_solve, taylor_green)
from mildns.spaces import lebesgue_norm

from oracles import taylor_green_exact

TWO_PI = 2 * math.pi


@pytest.mark.parametrize("d,n", [(2, 32), (3, 16)])
def test_taylor_green_is_solenoidal(d, n):
    g = make_grid(d, n, TWO_PI)
    assert spectral_divergence(taylor_green(g, 1.3)) <= 1e-14
    assert spectral_divergence(perturbed_taylor_green(g, 1.3)) <= 1e-14


def test_taylor_green_norm_and_zero_amplitude(grid2):
    A = 1.7
    assert lebesgue_norm(taylor_green(grid2, A), 2.0) == pytest.approx(A * math.pi * math.sqrt(2), rel=1e-13)
    assert np.max(np.abs(taylor_green(grid2, 0.0).values)) == 0.0


def test_taylor_green_scales_with_box():
    g = make_grid(2, 16, 3.0)
    u = taylor_green(g)
    x, y = g.coords()
    c = TWO_PI / 3.0
    assert np.allclose(u.values[0], np.sin(c * x) * np.cos(c * y), atol=1e-15)


@pytest.mark.parametrize("d,n,L", [(2, 64, 12.0), (3, 32, 12.0)])
def test_localized_vortex(d, n, L):
    g = make_grid(d, n, L)
    u = localized_vortex(g, 1.0, amplitude=2.5)
    assert spectral_divergence(u) <= 1e-12
    assert np.max(u.magnitude()) == pytest.approx(2.5, rel=1e-14)
    with pytest.raises(ValueError):
        localized_vortex(g, 0.0)


def test_energy_of_taylor_green_decays_exactly():
    g = make_grid(2, 32, TWO_PI)
    run = rk4_solve(taylor_green(g), 0.5, 1e-3)
    e0 = run.energy[0][1]
    for t, e in run.energy_rows():
        assert e == pytest.approx(e0 * math.exp(-4 * t), rel=1e-6)
    exact = taylor_green_exact(g.coords(), g.L, 1.0, 0.5)
    assert np.max(np.abs(run.trajectory[-1].values - exact)) < 1e-10


def _end_state(dt):
    g = make_grid(2, 16, TWO_PI)
    return rk4_solve(perturbed_taylor_green(g, 0.5), 1.0, dt).trajectory[-1].values


def test_fourth_order_convergence():
    ref = _end_state(1 / 800)
    errs = [np.max(np.abs(_end_state(dt) - ref)) for dt in (1 / 25, 1 / 50, 1 / 100)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(abs(o - 4) <= 0.3 for o in orders), orders


def test_zero_datum_stays_zero(grid2):
    run = rk4_solve(Field.zeros(grid2, 2), 1.0, 0.1)
    assert all(np.max(np.abs(f.values)) == 0.0 for f in run.trajectory.fields)


def test_cfl_violation_suggests_step():
    g = make_grid(2, 32, TWO_PI)
    u0 = perturbed_taylor_green(g, 50.0)
    with pytest.raises(CFLError, match="use dt <=") as exc:
        rk4_solve(u0, 0.1, 0.05)
    assert 0 < exc.value.suggested < 0.05
    run = rk4_solve(u0, 0.01, exc.value.suggested)
    assert np.all(np.isfinite(run.trajectory[-1].values))


def test_steps_land_on_save_times(grid2):
    save = [0.0, 0.013, 0.1, 0.37]
    run = rk4_solve(taylor_green(grid2), 0.37, 0.01, save_times=save)
    assert np.array_equal(run.trajectory.times, np.array(save))
    for bad in ([0.1, 0.37], [0.0, 0.2, 0.1, 0.37], [0.0, 0.2]):
        with pytest.raises(ValueError):
            rk4_solve(taylor_green(grid2), 0.37, 0.01, save_times=bad)


def test_rejects_bad_inputs(grid2):
    with pytest.raises(ValueError):
        rk4_solve(taylor_green(grid2), 1.0, 0.0)
    with pytest.raises(ValueError, match="divergence"):
        rk4_solve(random_field(grid2, 1, 2), 1.0, 0.1)


def test_linear_limit_matches_heat_flow(grid2):
    u0 = random_field(grid2, 4, 2, solenoidal=True)
    save = np.linspace(0, 1, 6)
    run = rk4_solve(u0, 1.0, 0.05, save_times=save, nonlinear=False)
    heat = heat_trajectory(u0, save)
    for a, b in zip(run.trajectory.fields, heat.fields):
        assert np.max(np.abs(a.values - b.values)) <= 1e-10


def test_energy_is_nonincreasing():
    g = make_grid(2, 32, TWO_PI)
    run = rk4_solve(perturbed_taylor_green(g, 3.0), 0.5, 2e-3)
    e = [v for _, v in run.energy]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(e, e[1:]))


def test_compare_self_and_alignment(grid2):
    run = rk4_solve(perturbed_taylor_green(grid2), 0.2, 0.01, save_times=[0.0, 0.1, 0.2])
    assert compare(run, run) == 0.0
    moved = Trajectory(grid2, [0.0, 0.11, 0.2], run.trajectory.fields)
    with pytest.raises(ValueError, match="no node"):
        compare(moved, run)
    other = make_grid(2, 16, TWO_PI)
    with pytest.raises(ValueError, match="grids"):
        compare(rk4_solve(taylor_green(other), 0.2, 0.01).trajectory, run)


def test_compare_is_relative(grid2):
    run = rk4_solve(taylor_green(grid2), 0.2, 0.01, save_times=[0.0, 0.1, 0.2])
    assert compare(run.trajectory.scaled(1.01), run) == pytest.approx(0.01, rel=1e-10)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mildns.calculus import (divergence, evaluate_at, fractional_laplacian, gradient, heat_evolve,
                             heat_trajectory, leray_project, oseen_apply, oseen_kernel_sample,
                             riesz_transform, spectral_divergence)
from mildns.grid import Field, make_grid, random_field, sample_function, tree_sum
from mildns.reference import taylor_green

from oracles import fd_minus_laplacian, periodized_gaussian

TWO_PI = 2 * math.pi


def _rel(a: Field, b: Field) -> float:
    scale = max(np.abs(b.values).max(), 1e-300)
    return float(np.abs(a.values - b.values).max() / scale)


def _pairing(a: Field, b: Field) -> float:
    return a.grid.cell_volume * tree_sum(a.values * b.values)


@pytest.fixture(scope="module")
def g2():
    return make_grid(2, 32, TWO_PI)


def test_fractional_laplacian_plane_wave(g2):
    f = sample_function(g2, lambda x, y: np.cos(2 * x) + 0 * y)
    assert _rel(fractional_laplacian(f, 1.0), f * 2.0) < 1e-12
    f2 = sample_function(g2, lambda x, y: np.sin(2 * y) + 0 * x)
    assert _rel(fractional_laplacian(f2, 1.0), f2 * 2.0) < 1e-12


def test_fractional_laplacian_order_zero_is_identity(g2):
    f = random_field(g2, 3)
    assert _rel(fractional_laplacian(f, 0.0), f) < 1e-15


def test_fractional_laplacian_order_two_matches_finite_differences():
    g = make_grid(2, 256, TWO_PI)
    f = sample_function(g, lambda x, y: np.exp(np.sin(x) + 0.5 * np.cos(y)), zero_mean=True)
    fd = fd_minus_laplacian(f.values[0], g.spacing)
    spectral = fractional_laplacian(f, 2.0).values[0]
    assert np.abs(spectral - fd).max() / np.abs(fd).max() < 1e-6


def test_fractional_laplacian_preconditions(g2):
    with pytest.raises(ValueError, match="zero-mean"):
        fractional_laplacian(sample_function(g2, lambda x, y: 1 + np.sin(x) + 0 * y), 1.0)
    with pytest.raises(ValueError):
        fractional_laplacian(random_field(g2, 1), -2.0)


@given(st.floats(-0.9, 2.0), st.floats(-0.9, 2.0), st.integers(0, 1000))
def test_multiplier_composition(s1, s2, seed):
    g = make_grid(3, 8, TWO_PI)
    f = random_field(g, seed)
    lhs = fractional_laplacian(fractional_laplacian(f, s1), s2)
    rhs = fractional_laplacian(f, s1 + s2)
    assert np.abs(lhs.spectrum - rhs.spectrum).max() <= 1e-12 * np.abs(rhs.spectrum).max()


def test_riesz_single_mode(g2):
    f = sample_function(g2, lambda x, y: np.sin(x) + 0 * y)
    expected = sample_function(g2, lambda x, y: np.cos(x) + 0 * y)
    assert _rel(riesz_transform(f, 0), expected) < 1e-12


def test_riesz_squares_sum_to_minus_identity(grid3):
    f = random_field(grid3, 9)
    total = sum((riesz_transform(riesz_transform(f, j), j) for j in range(3)), Field.zeros(grid3))
    assert _rel(total, -f) < 1e-12


def test_riesz_annihilates_transverse_mode(g2):
    f = sample_function(g2, lambda x, y: np.sin(y) + 0 * x)
    assert np.abs(riesz_transform(riesz_transform(f, 0), 0).values).max() < 1e-15


def test_riesz_axis_range(g2):
    with pytest.raises(ValueError):
        riesz_transform(random_field(g2, 1), 2)


def test_leray_kills_gradients(g2):
    phi = sample_function(g2, lambda x, y: np.sin(x) * np.sin(y))
    assert np.abs(leray_project(gradient(phi)).values).max() < 1e-14


def test_leray_fixes_taylor_green(g2):
    u = taylor_green(g2, 1.3)
    assert _rel(leray_project(u), u) < 1e-12


@pytest.mark.parametrize("seed", range(100))
def test_leray_divergence_and_idempotence(seed):
    g = make_grid(2 if seed % 2 else 3, 16, 3.0)
    u = random_field(g, seed, channels=g.d)
    pu = leray_project(u)
    assert spectral_divergence(pu) <= 1e-12
    assert _rel(leray_project(pu), pu) < 1e-12


@given(st.integers(0, 10 ** 6))
def test_leray_self_adjoint(seed):
    g = make_grid(2, 16, TWO_PI)
    u = random_field(g, seed, channels=2)
    v = random_field(g, seed + 1, channels=2)
    a, b = _pairing(leray_project(u), v), _pairing(u, leray_project(v))
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_leray_channel_count(g2):
    with pytest.raises(ValueError):
        leray_project(random_field(g2, 1, channels=1))


def test_heat_identity_and_single_mode(g2):
    f = sample_function(g2, lambda x, y: np.sin(2 * x) + 0 * y)
    assert heat_evolve(f, 0.0) is f
    assert _rel(heat_evolve(f, 0.5), f * math.exp(-2.0)) < 1e-12
    with pytest.raises(ValueError):
        heat_evolve(f, -1e-3)


@pytest.mark.parametrize("a,t", [(0.01, 0.02), (0.02, 0.05), (0.005, 0.1)])
def test_heat_periodized_gaussian(a, t):
    g = make_grid(2, 128, TWO_PI)
    c = (math.pi, math.pi)
    f = Field(g, values=periodized_gaussian(g.coords(), g.L, c, a)[None])
    expected = (a / (a + t)) * periodized_gaussian(g.coords(), g.L, c, a + t)
    got = heat_evolve(f, t).values[0]
    assert np.abs(got - expected).max() / np.abs(expected).max() < 1e-8


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_heat_semigroup(t1, t2):
    g = make_grid(2, 16, TWO_PI)
    f = random_field(g, 4)
    a = heat_evolve(heat_evolve(f, t1), t2)
    b = heat_evolve(f, t1 + t2)
    assert np.abs(a.values - b.values).max() <= 1e-12 * np.abs(f.values).max()


def test_heat_trajectory_nodes(g2):
    f = random_field(g2, 2)
    tr = heat_trajectory(f, [0.0, 0.1, 0.3])
    assert _rel(tr[2], heat_evolve(f, 0.3)) == 0.0


def _tensor(g, seed):
    return random_field(g, seed, channels=g.d * g.d)


def test_oseen_zero(g2):
    out = oseen_apply(Field.zeros(g2, 4), 0.3, 0.5)
    assert np.abs(out.values).max() == 0.0


@pytest.mark.parametrize("s", [-0.5, 0.0, 0.5, 1.0])
def test_oseen_matches_unfused_composition(grid3, s):
    F = _tensor(grid3, 21)
    t = 0.07
    fused = oseen_apply(F, t, s)
    unfused = fractional_laplacian(heat_evolve(leray_project(divergence(F)), t), s)
    err = np.abs(fused.spectrum - unfused.spectrum).max()
    assert err <= 1e-12 * np.abs(unfused.spectrum).max()


@pytest.mark.parametrize("seed", range(10))
def test_oseen_output_divergence_free(seed):
    g = make_grid(2, 16, TWO_PI)
    assert spectral_divergence(oseen_apply(_tensor(g, seed), 0.01, 0.3)) <= 1e-12


def test_oseen_preconditions(g2):
    F = _tensor(g2, 1)
    with pytest.raises(ValueError):
        oseen_apply(F, 0.0, 0.0)
    with pytest.raises(ValueError):
        oseen_apply(F, 0.1, -1.0)
    with pytest.raises(ValueError):
        oseen_apply(random_field(g2, 1, channels=2), 0.1, 0.0)


def test_evaluate_at_reproduces_nodes(g2):
    f = random_field(g2, 8, channels=2)
    idx = [(0, 0), (3, 7), (31, 16)]
    pts = np.array([[i * g2.spacing, j * g2.spacing] for i, j in idx])
    vals = evaluate_at(f, pts)
    for p, (i, j) in enumerate(idx):
        assert np.allclose(vals[p], f.values[:, i, j], atol=1e-13)


RADII = np.array([1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0])


@pytest.fixture(scope="module")
def kernel_fine():
    return oseen_kernel_sample(2, 0.0, 1.0, RADII, gammas=[(2.0, 1.0 / 2), (1.0, 1.0)])


def test_kernel_values_finite(kernel_fine):
    assert np.all(np.isfinite(kernel_fine.values))
    assert kernel_fine.surrogate_discrepancy < 1e-8


def test_kernel_decay_ratio_refinement_stable(kernel_fine):
    coarse = oseen_kernel_sample(2, 0.0, 1.0, RADII, n=256, L=128.0)
    a, b = kernel_fine.decay_ratio.max(), coarse.decay_ratio.max()
    assert np.isfinite(a) and abs(a / b - 1) < 0.10


def test_kernel_bound_ratio_bounded(kernel_fine):
    ratio = kernel_fine.bound_ratios[(1.0, 1.0)]
    assert np.all(np.isfinite(ratio))
    # |K(x)| |x| decays like |x|^{-2}; the tail stays below the peak
    assert ratio[-1] < ratio.max()


def test_kernel_csv_rows(kernel_fine):
    rows = list(kernel_fine.rows())
    assert len(rows) == len(RADII) * 8
    assert all(len(r) == 5 and r[4] >= 0 for r in rows)


@pytest.mark.parametrize("gammas", [[(3.0, 0.0)], [(0.0, 1.5)], [(1.0, 0.5)], [(-1.0, 2.0)]])
def test_kernel_rejects_inadmissible_gammas(gammas):
    with pytest.raises(ValueError, match="inadmissible"):
        oseen_kernel_sample(2, 0.0, 1.0, [1.0], gammas=gammas, n=16, L=8.0)


def test_kernel_rejects_origin_and_order():
    with pytest.raises(ValueError):
        oseen_kernel_sample(2, 0.0, 1.0, [0.0], n=16, L=8.0)
    with pytest.raises(ValueError):
        oseen_kernel_sample(2, -1.0, 1.0, [1.0], n=16, L=8.0)
    with pytest.raises(ValueError):
        oseen_kernel_sample(2, 0.0, 0.0, [1.0], n=16, L=8.0)


def test_divergence_contracts_first_index():
    g = make_grid(2, 16, TWO_PI)
    # F_jl = u_j v_l with u = (cos y, 0), v = (0, cos x): only F_12 = cos x cos y
    F = sample_function(g, lambda x, y: [0 * x, np.cos(x) * np.cos(y), 0 * x, 0 * x])
    out = divergence(F).values
    assert np.max(np.abs(out[0])) < 1e-14
    assert np.max(np.abs(out[1] + np.sin(g.coords()[0]) * np.cos(g.coords()[1]))) < 1e-13

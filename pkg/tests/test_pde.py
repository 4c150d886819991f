"""Variational solver checks: oracles first, then the solver batteries.

The discrete gradient is validated against central differences of the public
energy and against the exact adjoint identity of the scatter map; the
descent route is validated against the sparse direct route at exponent 2 and
against closed-form minimizers wherever one exists.  Frozen-constant bound
checks run on fresh seeded data.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobotrace.fields import (
    Box,
    SampledField,
    integrate,
    outer_weights,
    random_band_limited,
)
from sobotrace.pde import (
    AdmissibleLagrangian,
    NeumannData,
    SolverOptions,
    admissibility_check,
    compatibility_residual,
    energy,
    energy_bound_check,
    p_dirichlet,
    p_laplacian_with_drift,
    solve_dirichlet,
    solve_neumann,
)
from sobotrace.pde import _cell_flux, _cell_gradients, _cell_points, _scatter
from sobotrace.tracelift import StripDomain, TracePair, horizontal_grid, lift_m1

STRIP = StripDomain(0.0, 1.0, Box((0.0,), (2.0,), (True,)))
STRIP3 = StripDomain(0.0, 1.0, Box((0.0, 0.0), (1.0, 1.0), (True, True)))


def strip_grid(shape=(32, 16), strip=STRIP):
    return strip.grid(shape)


def random_pair(grid, seed):
    hg = horizontal_grid(grid)
    return TracePair(random_band_limited(hg, seed=seed),
                     random_band_limited(hg, seed=seed + 1000))


def constant_pair(grid, c_minus, c_plus):
    hg = horizontal_grid(grid)
    return TracePair(SampledField(hg, np.full(hg.node_counts, c_minus)),
                     SampledField(hg, np.full(hg.node_counts, c_plus)))


def drift(x):
    comps = [0.3 * np.sin(np.pi * x[..., 0])]
    for k in range(1, x.shape[-1] - 1):
        comps.append(0.2 * np.cos(np.pi * x[..., k]))
    comps.append(0.1 * np.cos(2.0 * np.pi * x[..., -1]))
    return np.stack(comps, axis=-1)


def compatible_density(grid, seed):
    f = random_band_limited(grid, seed=seed)
    mean_defect = integrate(f.values, grid) / float(
        np.prod(np.asarray(grid.box.hi) - np.asarray(grid.box.lo)))
    return NeumannData(psi=SampledField(grid, f.values - mean_defect))


# ---------------------------------------------------------------------------
# oracles for the discrete machinery


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 7), st.integers(3, 7), st.integers(0, 2 ** 31 - 1))
def test_scatter_is_adjoint_of_cell_gradient(nh, nv, seed):
    grid = STRIP.grid((nh, nv))
    rng = np.random.default_rng(seed)
    flux = rng.standard_normal(grid.node_counts[:-1] + (grid.node_counts[-1] - 1, 2))
    v = rng.standard_normal(grid.node_counts)
    vol = float(np.prod(grid.spacing))
    lhs = float(np.sum(_scatter(flux, grid) * v))
    rhs = vol * float(np.sum(flux * _cell_gradients(v, grid)))
    assert abs(lhs - rhs) <= 1.0e-10 * (1.0 + abs(rhs))


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_gradient_matches_finite_differences(p):
    # central differences of the public energy across random directions
    grid = strip_grid((16, 8))
    L = p_laplacian_with_drift(p, drift)
    rng = np.random.default_rng(5)
    u = random_band_limited(grid, seed=2).values
    xi = _cell_gradients(u, grid)
    flux = _cell_flux(L, _cell_points(grid), xi)
    for trial in range(3):
        v = rng.standard_normal(grid.node_counts)
        h = 1.0e-6
        fwd = energy(SampledField(grid, u + h * v), L)
        bwd = energy(SampledField(grid, u - h * v), L)
        fd = (fwd - bwd) / (2.0 * h)
        exact = float(np.prod(grid.spacing)) * float(
            np.sum(flux * _cell_gradients(v, grid)))
        assert abs(fd - exact) <= 1.0e-5 * (1.0 + abs(exact))


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_of_linear_profile(p):
    # u = vertical coordinate: integrand is 1/p over a volume-2 strip
    grid = strip_grid((20, 10))
    u = np.broadcast_to(grid.nodes()[-1], grid.node_counts).copy()
    F = energy(SampledField(grid, u), p_dirichlet(p))
    assert abs(F - 2.0 / p) <= 1.0e-12 * (1.0 + 2.0 / p)


# ---------------------------------------------------------------------------
# admissibility


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_model_lagrangian_admissible(p):
    report = admissibility_check(p_dirichlet(p), strip_grid(), trials=128, seed=0)
    assert report.ok
    assert report.fd_error <= 1.0e-5


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_drift_lagrangian_admissible(p):
    report = admissibility_check(p_laplacian_with_drift(p, drift),
                                 strip_grid(), trials=128, seed=1)
    assert report.ok


def test_admissibility_catches_concave_integrand():
    bad = AdmissibleLagrangian(
        G=lambda x, xi: -np.sum(xi * xi, axis=-1),
        grad_xi_G=lambda x, xi: -2.0 * xi,
        p=2.0, A_minus=1.0, A_plus=2.0)
    report = admissibility_check(bad, strip_grid(), trials=64, seed=0)
    assert not report.ok
    conditions = {v.condition for v in report.violations}
    assert "coercivity" in conditions
    assert "convexity" in conditions
    worst = report.worst("coercivity")
    assert worst.lhs > worst.rhs
    assert worst.x.shape == (2,) and worst.xi.shape == (2,)


def test_admissibility_catches_wrong_gradient():
    off = AdmissibleLagrangian(
        G=lambda x, xi: np.sum(xi * xi, axis=-1) / 2.0,
        grad_xi_G=lambda x, xi: 1.01 * xi,
        p=2.0, A_minus=0.5, A_plus=1.5)
    report = admissibility_check(off, strip_grid(), trials=64, seed=0)
    assert any(v.condition == "gradient_consistency" for v in report.violations)


def test_solver_rejects_inadmissible():
    bad = AdmissibleLagrangian(
        G=lambda x, xi: -np.sum(xi * xi, axis=-1),
        grad_xi_G=lambda x, xi: -2.0 * xi,
        p=2.0, A_minus=1.0, A_plus=2.0)
    grid = strip_grid()
    with pytest.raises(ValueError, match="admissibility"):
        solve_dirichlet(bad, random_pair(grid, 0), STRIP, grid)


# ---------------------------------------------------------------------------
# exact minimizers


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_linear_profile_is_exact_minimizer(p):
    # constant wall data: the minimizer is the linear interpolant, with
    # energy vol * |slope|^p / p = 2 * 2^p / p
    grid = strip_grid((24, 12))
    pair = constant_pair(grid, -0.7, 1.3)
    if p == 2.0:
        L = p_dirichlet(2.0)
        tol = 1.0e-13
    else:
        L = AdmissibleLagrangian(
            G=lambda x, xi: np.sum(xi * xi, axis=-1) ** 2 / 4.0,
            grad_xi_G=lambda x, xi: np.sum(xi * xi, axis=-1)[..., None] * xi,
            p=4.0, A_minus=0.25, A_plus=1.0)
        tol = 1.0e-9
    u, diag = solve_dirichlet(L, pair, STRIP, grid)
    tau = np.broadcast_to(grid.nodes()[-1], grid.node_counts)
    exact = -0.7 + 2.0 * tau
    assert diag.converged
    assert float(np.max(np.abs(u.values - exact))) <= tol
    assert abs(diag.energy - 2.0 * 2.0 ** p / p) <= 1.0e-11


@settings(max_examples=12, deadline=None)
@given(st.floats(-2.0, 2.0),
       st.floats(1.4, 3.5).filter(lambda p: abs(p - 2.0) > 1.0e-3))
def test_equal_wall_constants_need_no_iterations(c, p):
    # both walls at the same constant: the lift is that constant for any
    # vertical profile, the gradient vanishes, the solver returns at once
    grid = strip_grid((12, 6))
    u, diag = solve_dirichlet(p_dirichlet(p), constant_pair(grid, c, c),
                              STRIP, grid, SolverOptions(check_trials=8))
    assert diag.iterations == 0
    assert float(np.max(np.abs(u.values - c))) <= 1.0e-12 * (1.0 + abs(c))


def test_neumann_flux_profile_exact():
    # unit upward flux through both walls: minimizer is the vertical
    # coordinate, gauge-centered, with energy 1 - 2 = -1
    grid = strip_grid((32, 16))
    hg = horizontal_grid(grid)
    data = NeumannData(
        h_minus=SampledField(hg, -np.ones(hg.node_counts)),
        h_plus=SampledField(hg, np.ones(hg.node_counts)))
    assert abs(compatibility_residual(data, grid)) <= 1.0e-14
    u, diag = solve_neumann(p_dirichlet(2.0), data, STRIP, grid)
    W = outer_weights(grid)
    tau = np.broadcast_to(grid.nodes()[-1], grid.node_counts)
    exact = tau - float(np.sum(W * tau)) / float(np.sum(W))
    assert diag.converged
    assert float(np.max(np.abs(u.values - exact))) <= 1.0e-10
    assert abs(diag.energy + 1.0) <= 1.0e-10


# ---------------------------------------------------------------------------
# route agreement and descent behavior


def test_direct_vs_descent_dirichlet():
    grid = strip_grid((48, 24))
    pair = random_pair(grid, 3)
    u, diag = solve_dirichlet(p_dirichlet(2.0), pair, STRIP, grid,
                              SolverOptions(cross_check=True))
    assert diag.method == "direct"
    assert diag.cross_check_gap is not None
    assert diag.cross_check_gap <= 1.0e-8


def test_direct_vs_descent_neumann():
    grid = strip_grid((32, 16))
    data = compatible_density(grid, 11)
    u, diag = solve_neumann(p_dirichlet(2.0), data, STRIP, grid,
                            SolverOptions(cross_check=True))
    assert diag.cross_check_gap <= 1.0e-8


def test_direct_vs_descent_three_dimensional():
    grid = STRIP3.grid((10, 10, 6))
    pair = random_pair(grid, 7)
    u, diag = solve_dirichlet(p_dirichlet(2.0), pair, STRIP3, grid,
                              SolverOptions(cross_check=True))
    assert diag.cross_check_gap <= 1.0e-8


def test_direct_requires_quadratic():
    grid = strip_grid()
    with pytest.raises(ValueError, match="quadratic"):
        solve_dirichlet(p_dirichlet(3.0), random_pair(grid, 0), STRIP, grid,
                        SolverOptions(method="direct"))


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_descent_converges_and_certifies(p):
    grid = strip_grid((24, 12))
    pair = random_pair(grid, 5)
    L = p_laplacian_with_drift(p, drift)
    u, diag = solve_dirichlet(L, pair, STRIP, grid)
    assert diag.converged and diag.stop == "residual"
    assert diag.residual < 1.0e-8
    # weak-form residual against every dictionary field sits below the
    # solver tolerance
    assert diag.weak_residual_max <= 1.0e-8
    # first-order optimality of the public energy, independent route
    rng = np.random.default_rng(0)
    mask = np.ones(grid.node_counts)
    mask[..., 0] = 0.0
    mask[..., -1] = 0.0
    for _ in range(2):
        v = rng.standard_normal(grid.node_counts) * mask
        h = 1.0e-5
        dd = (energy(SampledField(grid, u.values + h * v), L)
              - energy(SampledField(grid, u.values - h * v), L)) / (2.0 * h)
        assert abs(dd) <= 5.0e-6


def test_energy_trace_descends():
    grid = strip_grid((24, 12))
    u, diag = solve_dirichlet(p_laplacian_with_drift(3.0, drift),
                              random_pair(grid, 5), STRIP, grid)
    tr = diag.energy_trace
    upticks = np.diff(tr) - 1.0e-12 * (1.0 + np.abs(tr[:-1]))
    assert float(np.max(upticks)) <= 0.0


def test_minimizer_beats_first_order_lift():
    grid = strip_grid((24, 12))
    pair = random_pair(grid, 9)
    L = p_laplacian_with_drift(3.0, drift)
    u, diag = solve_dirichlet(L, pair, STRIP, grid)
    F_lift = energy(lift_m1(pair, STRIP.thickness, STRIP, grid), L)
    assert diag.energy <= F_lift + 1.0e-12 * (1.0 + abs(F_lift))


def test_max_iter_exit_is_graceful():
    grid = strip_grid((24, 12))
    u, diag = solve_dirichlet(p_dirichlet(3.0), random_pair(grid, 2), STRIP,
                              grid, SolverOptions(max_iter=3))
    assert not diag.converged
    assert diag.stop == "max_iter"
    assert diag.iterations == 3
    assert np.all(np.isfinite(u.values))


def test_gauge_invariance():
    grid = strip_grid((32, 16))
    hg = horizontal_grid(grid)
    data = NeumannData(
        h_minus=SampledField(hg, -np.ones(hg.node_counts)),
        h_plus=SampledField(hg, np.ones(hg.node_counts)))
    opts = SolverOptions(method="descent", residual_tol=1.0e-10)
    u_a, _ = solve_neumann(p_dirichlet(2.0), data, STRIP, grid, opts)
    shifted = SampledField(grid, np.full(grid.node_counts, -3.0))
    u_b, _ = solve_neumann(p_dirichlet(2.0), data, STRIP, grid, opts,
                           initial=shifted)
    gap = float(np.sqrt(integrate((u_a.values - u_b.values) ** 2, grid)))
    assert gap <= 1.0e-10


def test_neumann_rejects_incompatible_data():
    grid = strip_grid()
    hg = horizontal_grid(grid)
    data = NeumannData(h_plus=SampledField(hg, np.full(hg.node_counts, 0.05)))
    with pytest.raises(ValueError, match="incompatible"):
        solve_neumann(p_dirichlet(2.0), data, STRIP, grid)


def test_neumann_data_validation():
    grid = strip_grid()
    with pytest.raises(ValueError, match="zero"):
        NeumannData()
    other = STRIP.grid((8, 4))
    f = random_band_limited(other, seed=0)
    with pytest.raises(ValueError, match="different grid"):
        compatibility_residual(NeumannData(psi=f), grid)


def test_wall_data_grid_mismatch_rejected():
    grid = strip_grid()
    wrong = random_pair(STRIP.grid((8, 4)), 0)
    with pytest.raises(ValueError, match="horizontal"):
        solve_dirichlet(p_dirichlet(2.0), wrong, STRIP, grid)


def test_bitwise_determinism(monkeypatch):
    grid = strip_grid((24, 12))
    pair = random_pair(grid, 5)
    L = p_laplacian_with_drift(3.0, drift)
    u1, d1 = solve_dirichlet(L, pair, STRIP, grid)
    u2, d2 = solve_dirichlet(L, pair, STRIP, grid)
    assert np.array_equal(u1.values, u2.values)
    assert d1.iterations == d2.iterations
    monkeypatch.setenv("SOBOTRACE_THREADS", "4")
    u4, d4 = solve_dirichlet(L, pair, STRIP, grid)
    assert np.array_equal(u1.values, u4.values)
    assert d1.iterations == d4.iterations


# ---------------------------------------------------------------------------
# a-priori bounds with frozen constants


@pytest.mark.parametrize("p,seed", [(1.5, 0), (2.0, 1), (3.0, 2)])
def test_energy_bound_dirichlet(p, seed):
    grid = strip_grid((24, 12))
    pair = random_pair(grid, seed)
    u, diag = solve_dirichlet(p_dirichlet(p), pair, STRIP, grid)
    report = energy_bound_check(u, p_dirichlet(p), pair)
    assert report.ok
    assert report.margin <= 1.0
    assert set(report.terms) == {"source", "wall_gap", "trace_minus", "trace_plus"}


@pytest.mark.parametrize("p,seed", [(1.5, 3), (2.0, 4), (3.0, 5)])
def test_energy_bound_neumann(p, seed):
    grid = strip_grid((24, 12))
    data = compatible_density(grid, seed)
    u, diag = solve_neumann(p_dirichlet(p), data, STRIP, grid)
    report = energy_bound_check(u, p_dirichlet(p), data)
    assert report.ok
    assert "lower" in report.note or "below" in report.note
    assert report.terms["dual_norm_power"] > 0.0


def test_energy_bound_drift_dirichlet():
    grid = strip_grid((24, 12))
    pair = random_pair(grid, 6)
    L = p_laplacian_with_drift(2.0, drift)
    u, diag = solve_dirichlet(L, pair, STRIP, grid)
    report = energy_bound_check(u, L, pair)
    assert report.ok
    assert report.terms["source"] > 0.0


def test_energy_bound_zero_data():
    grid = strip_grid((16, 8))
    pair = constant_pair(grid, 0.0, 0.0)
    u, diag = solve_dirichlet(p_dirichlet(2.0), pair, STRIP, grid)
    report = energy_bound_check(u, p_dirichlet(2.0), pair)
    assert report.ok
    assert report.lhs <= 1.0e-15


def test_energy_bound_rejects_unknown_data():
    grid = strip_grid((16, 8))
    u = SampledField(grid, np.zeros(grid.node_counts))
    with pytest.raises(TypeError):
        energy_bound_check(u, p_dirichlet(2.0), data=3.5)

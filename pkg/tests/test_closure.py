import numpy as np
import pytest

from thermolat.collision import default_kernel_config, gibbs_state
from thermolat.fields import (CorrelationField, coarse_transform,
                              field_from_xspace, slow_profile)
from thermolat.lattice import Grid, LatticeSpec
from thermolat.closure import (FiberCache, ProfileParams, SeriesDivergence,
                               build_Q0, currents_from_J, fourier_law,
                               heat_balance, kappa0, kappa_matrix,
                               momentum_part, number_balance, refine,
                               residual_norms, rhs_gradient_fields,
                               solve_conservation_zeroth, stationary_residual,
                               zeroth_state, _d_coarse)


@pytest.fixture(scope="module")
def cache_d1():
    spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=None, t1=1.1, t2=0.9)
    grid = Grid(spec.resolved())
    cfg = default_kernel_config(grid)
    return FiberCache(grid, cfg, t0=1.0)


def test_build_Q0_flat_equilibrium(grid_d1):
    prof = ProfileParams.flat(grid_d1, t0=1.4)
    q0 = build_Q0(prof)
    eq = gibbs_state(1.4, 0.0, grid_d1)
    assert np.abs(q0.real - eq.q).max() < 1e-12
    assert np.abs(q0.imag).max() < 1e-14


def test_build_Q0_constant_imbalance_matches_gibbs(grid_d1):
    prof = ProfileParams.flat(grid_d1, t0=1.0, a0=0.5)
    q0 = build_Q0(prof)
    gen = gibbs_state(1.0, 0.5, grid_d1)
    assert np.abs(q0.real - gen.q).max() <= 1e-10 * np.abs(gen.q).max()


def test_build_Q0_divergence_detected(grid_d1):
    prof = ProfileParams.flat(grid_d1, t0=1.0, a0=25.0)
    with pytest.raises(SeriesDivergence):
        build_Q0(prof)


def test_rhs_gradient_fields(grid_d1):
    g = grid_d1
    rho1, rho2 = rhs_gradient_fields(g, 0)
    om = g.omega_q.reshape(-1)
    sin_k = np.repeat(np.sin(np.pi * np.arange(g.nq) / g.n), g.n_trans)
    assert np.abs(rho1 - 4j * sin_k / om).max() < 1e-12
    assert np.abs(rho2 - 4j * sin_k / om ** 2).max() < 1e-12
    # zeros where sin k vanishes; finite at the neighbouring fibers
    assert rho1[0] == 0.0
    r1a, _ = rhs_gradient_fields(g, 1)
    assert np.isfinite(r1a).all()
    assert np.abs(r1a).max() < 10.0 * np.abs(rho1).max()


def test_fourier_law_linearity(cache_d1):
    jv0, qv0, _ = fourier_law(cache_d1, 1, 0.0, 0.0)
    assert np.abs(jv0).max() == 0.0 and np.abs(qv0).max() == 0.0
    jv1, qv1, _ = fourier_law(cache_d1, 1, 0.3, 0.1)
    jv2, qv2, _ = fourier_law(cache_d1, 1, 0.6, 0.2)
    assert np.abs(jv2 - 2.0 * jv1).max() <= 1e-10 * max(np.abs(jv1).max(), 1e-300)
    assert np.abs(qv2 - 2.0 * qv1).max() <= 1e-10 * max(np.abs(qv1).max(), 1e-300)


def test_currents_from_J_conventions(grid_d1):
    g = grid_d1
    j, jp = currents_from_J(np.zeros((g.nq, g.nq, 1), dtype=complex), g)
    assert np.abs(j).max() == 0.0 and np.abs(jp).max() == 0.0
    # an even (invalid) flux field produces no current: the odd weight kills it
    rng = np.random.default_rng(0)
    from thermolat.fields import symmetrize_even
    even = symmetrize_even(rng.standard_normal((g.nq, g.nq, 1)), g)
    j, jp = currents_from_J(even.astype(complex), g)
    assert np.abs(j).max() < 1e-12
    assert np.abs(jp).max() < 1e-12


def test_current_transform_identity(grid_d1):
    # momentum-space extraction equals the bond current of the coupling
    # stencil in layer space
    g = grid_d1
    ns = g.nq
    rng = np.random.default_rng(3)
    Jx = rng.standard_normal((ns, ns))
    Jx = 0.5 * (Jx - Jx.T)
    idx = (-np.arange(ns)) % ns
    Jx = 0.5 * (Jx + Jx[np.ix_(idx, idx)])
    lap = np.zeros((ns, ns))
    for x in range(ns):
        lap[x, x] = -2.0
        lap[x, (x + 1) % ns] = 1.0
        lap[x, (x - 1) % ns] = 1.0
    om_op = -lap + g.spec.m2 * np.eye(ns)
    Jp = om_op @ Jx + Jx @ om_op
    direct = np.array([Jp[(x - 1) % ns, x] for x in range(ns)])
    jmom, _ = currents_from_J(field_from_xspace(Jx, g), g)
    back = coarse_transform(jmom, g)
    assert np.abs(back.real - direct).max() < 1e-12
    assert np.abs(back.imag).max() < 1e-12


def test_kappa_routes_agree(cache_d1):
    cond = kappa0(cache_d1)
    assert np.abs(cond.kappa[0].real - cond.kappa0).max() \
        <= 1e-9 * np.abs(cond.kappa0).max()
    assert np.abs(cond.kappa[0].imag).max() <= 1e-12 * np.abs(cond.kappa0).max()
    assert cond.det0 != 0.0
    assert cond.beta2 > 0.0
    evals = np.linalg.eigvals(cond.kappa0)
    assert (evals.real > 0).all()


def test_conservation_solve_equilibrium_flat():
    spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.3, t1=1.3, t2=1.3)
    grid = Grid(spec.resolved())
    cache = FiberCache(grid, default_kernel_config(grid), t0=1.3)
    sol = solve_conservation_zeroth(cache)
    prof = sol.profiles.temperature_layers()
    assert np.abs(prof - 1.3).max() < 1e-10
    assert np.abs(sol.currents.j_layers()).max() < 1e-10
    assert sol.tau0 == pytest.approx(0.0, abs=1e-12)


def test_conservation_solve_linear_profile_friction_dominated():
    # with dominant boundary friction the closed-form solve reproduces the
    # linear interpolation between the bath temperatures
    spec = LatticeSpec(n=8, dim=1, m2=10.0, lam=0.1, gamma=1e7, t1=1.1, t2=0.9)
    grid = Grid(spec.resolved())
    cache = FiberCache(grid, default_kernel_config(grid), t0=1.0)
    sol = solve_conservation_zeroth(cache)
    prof = sol.profiles.temperature_layers()
    x = np.arange(grid.nq)
    tent = 1.1 + np.minimum(x, grid.nq - x) / grid.n * (0.9 - 1.1)
    assert np.abs(prof - tent).max() < 0.05 * 0.2
    assert sol.tau0 == pytest.approx(0.1 / (grid.n * 0.25), rel=0.1)


def test_lattice_sum_constants():
    # Riemann masses of |d(q)|^{-2} on the even / odd sublattices
    for n in (64, 128):
        spec = LatticeSpec(n=n, dim=1, m2=10.0)
        grid = Grid(spec.resolved())
        d = _d_coarse(grid)
        even = np.abs(d[2::2]) ** -2.0
        odd = np.abs(d[1::2]) ** -2.0
        i_plus = even.sum() / n ** 2
        i_minus = odd.sum() / n ** 2
        assert i_minus == pytest.approx(0.25, rel=1e-12)
        assert i_plus == pytest.approx(1.0 / 12.0, rel=3.0 / n)


def test_equilibrium_state_is_stationary():
    spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.2, t1=1.5, t2=1.5,
                       epsilon=0.6)
    grid = Grid(spec)
    cfg = default_kernel_config(grid)
    eq = gibbs_state(1.5, 0.0, grid, cfg)
    r1, r2, r3, _ = stationary_residual(eq, cfg)
    norms = residual_norms(r1, r2, r3, grid)
    assert norms["r1"] < 1e-10
    assert norms["r2"] < 1e-10
    assert norms["r3"] < 1e-10


def test_gibbs_residual_decreases_with_epsilon():
    spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.0, t1=1.0, t2=1.0,
                       epsilon=0.6)
    grid = Grid(spec)
    vals = []
    for eps in (0.6, 0.3):
        cfg = default_kernel_config(grid, epsilon=eps)
        st = gibbs_state(1.0, 0.5, grid, cfg)
        _, r2, r3, _ = stationary_residual(st, cfg)
        assert np.abs(r2).max() < 1e-12
        vals.append(np.abs(r3).max())
    assert vals[1] <= vals[0] / 1.8


def test_zeroth_state_residual_scales_with_gradient():
    norms = []
    for dt in (0.2, 0.1):
        spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=None,
                           t1=1.0 + dt / 2, t2=1.0 - dt / 2)
        grid = Grid(spec.resolved())
        cfg = default_kernel_config(grid)
        cache = FiberCache(grid, cfg, t0=1.0)
        sol = solve_conservation_zeroth(cache)
        st = zeroth_state(cache, sol, cfg)
        _, _, r3, _ = stationary_residual(st, cfg)
        norms.append(np.abs(r3).max())
    assert norms[1] <= 0.6 * norms[0]


def test_balance_reports(cache_d1):
    cfg = cache_d1.cfg
    sol = solve_conservation_zeroth(cache_d1)
    st = zeroth_state(cache_d1, sol, cfg)
    div, sources, j_x, bound = heat_balance(st, cfg)
    assert np.abs(div - sources).max() <= bound * cache_d1.grid.nq + 1e-12
    div_n, theta_x, gamma_x, jp_x = number_balance(st, cfg)
    assert np.isfinite(div_n).all() and np.isfinite(theta_x).all()


def test_refine_fixed_point_at_equilibrium():
    spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.3, t1=1.0, t2=1.0,
                       epsilon=0.6)
    grid = Grid(spec)
    cfg = default_kernel_config(grid)
    cache = FiberCache(grid, cfg, t0=1.0)
    eq = gibbs_state(1.0, 0.0, grid, cfg)
    out, trace = refine(eq, cache, cfg, tol=1e-8, max_iter=3)
    assert trace.converged
    assert trace.iterations == 1
    assert np.abs(out.q - eq.q).max() < 1e-12


def test_refine_reduces_projected_residual(cache_d1):
    cfg = cache_d1.cfg
    sol = solve_conservation_zeroth(cache_d1)
    st = zeroth_state(cache_d1, sol, cfg)
    out, trace = refine(st, cache_d1, cfg, damping=1.0, tol=1e-12, max_iter=6)
    assert trace.projected[-1] <= 0.5 * trace.projected[0] \
        or trace.projected[0] < 1e-10

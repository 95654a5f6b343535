import numpy as np
import pytest

from thermolat.collision import default_kernel_config, delta_supported_to_field
from thermolat.fields import CorrelationField
from thermolat.lattice import Grid, LatticeSpec
from thermolat.linop import (build_Dp, build_Lp, build_projector, fiber_embed,
                             fiber_vector, hoelder_in_p, in_E0,
                             kernel_integrability, multiplier_bounds,
                             nmap_rows, offdiag_norms, parity_projectors,
                             quadratic_forms, solve_Dp, zero_mode_residuals)


def equilibrium_field(grid, t0):
    om = grid.omega_q
    return CorrelationField(
        grid, delta_supported_to_field(t0 / om ** 2 * grid.nq, grid),
        np.zeros((grid.nq, grid.nq, grid.n_trans)))


@pytest.fixture(scope="module")
def blocks0(grid_d1):
    cfg = default_kernel_config(grid_d1, prefactor=False)
    return build_Lp(grid_d1, 0, 1.3, cfg, include_prefactor=False)


def test_blocks_are_real_and_split_exactly(blocks0):
    assert blocks0.max_imag < 1e-14
    for ij in ("11", "12", "21", "22"):
        L = getattr(blocks0, "l" + ij)
        M = getattr(blocks0, "m" + ij)
        K = getattr(blocks0, "k" + ij)
        assert np.abs(L - (M + K)).max() == 0.0


def test_finite_difference_consistency(grid_d1):
    cfg = default_kernel_config(grid_d1, prefactor=False)
    t0 = 1.3
    blocks = build_Lp(grid_d1, 0, t0, cfg, include_prefactor=False)
    rng = np.random.default_rng(3)
    G = blocks.fiber_size
    dj = rng.standard_normal(G)
    dq = rng.standard_normal(G)
    w0 = equilibrium_field(grid_d1, t0)

    def rows_at(h):
        f = CorrelationField(grid_d1,
                             w0.q + h * fiber_embed(dq, grid_d1, 0),
                             w0.j + h * fiber_embed(dj, grid_d1, 0))
        r1, r2, _ = nmap_rows(f, cfg)
        return fiber_vector(r1, grid_d1, 0), fiber_vector(r2, grid_d1, 0)

    lin1 = blocks.l11 @ dj + blocks.l12 @ dq
    lin2 = blocks.l21 @ dj + blocks.l22 @ dq
    errs = []
    for h in (1e-4, 5e-5):
        r1p, r2p = rows_at(h)
        r1m, r2m = rows_at(-h)
        fd1 = (r1p - r1m) / (2 * h)
        fd2 = (r2p - r2m) / (2 * h)
        errs.append(max(np.abs(fd1 - lin1).max(), np.abs(fd2 - lin2).max()))
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=1.0)


def test_offdiagonal_blocks_vanish_on_physical_sectors(grid_d1, blocks0):
    o12, o21 = offdiag_norms(blocks0)
    scale = np.linalg.norm(blocks0.l11, 2)
    assert o12 <= 1e-12 * scale
    assert o21 <= 1e-12 * scale
    cfg = default_kernel_config(grid_d1, prefactor=False)
    bpi = build_Lp(grid_d1, 2 * grid_d1.n, 1.3, cfg, include_prefactor=False)
    o12p, o21p = offdiag_norms(bpi)
    assert o12p <= 1e-12 * scale and o21p <= 1e-12 * scale


def test_zero_modes(blocks0, grid_d1):
    r2, r3, r4 = zero_mode_residuals(blocks0)
    assert r2 <= 1e-12 * r4          # conserved-energy direction: exact
    assert r3 < r4                   # number direction: soft, below control
    # the number direction sharpens as the on-shell width shrinks
    cfg_half = default_kernel_config(grid_d1, epsilon=grid_d1.spec.epsilon / 2,
                                     prefactor=False)
    bh = build_Lp(grid_d1, 0, 1.3, cfg_half, include_prefactor=False)
    _, r3h, r4h = zero_mode_residuals(bh)
    assert r3h / r4h < r3 / r4


def test_sign_structure(blocks0, grid_d1):
    proj = build_projector(grid_d1, 0)
    p_even, p_odd = parity_projectors(grid_d1, 0)
    rng = np.random.default_rng(1)
    G = blocks0.fiber_size
    probes_j = [p_odd @ rng.standard_normal(G) for _ in range(10)]
    probes_q = [p_even @ rng.standard_normal(G) for _ in range(10)]
    qj, qq = quadratic_forms(blocks0, probes_j, probes_q, proj)
    assert max(qj) < 0.0
    assert min(qq) > 0.0


def test_projector_properties(grid_d1):
    proj = build_projector(grid_d1, 0)
    P = proj.p_mat
    assert np.abs(P @ P - P).max() < 1e-12
    assert np.abs(P + proj.p_perp - np.eye(len(proj.weight))).max() < 1e-14
    # the weighted pairing against the energy direction is plain integration,
    # so every projected function integrates to zero
    rng = np.random.default_rng(0)
    f = rng.standard_normal(len(proj.weight))
    g = grid_d1
    assert abs((proj.p_perp @ f).sum() * g.wk) < 1e-12


def test_multiplier_bounds(grid_d1):
    cfg = default_kernel_config(grid_d1, prefactor=False)
    blist = [build_Lp(grid_d1, n, 1.3, cfg, include_prefactor=False)
             for n in range(2 * grid_d1.n)]
    mb = multiplier_bounds(blist)
    assert mb["floor"] > 0.0
    assert mb["fitted_c"] > 0.0
    assert mb["diag_signs_ok"]
    dp, diffs = hoelder_in_p(blist[0], blist[1])
    assert dp > 0 and all(v >= 0 for v in diffs.values())
    km = kernel_integrability(blist[0])
    assert all(np.isfinite(v) for v in km.values())


def test_Dp_solve_round_trip(grid_d1):
    cfg = default_kernel_config(grid_d1)
    proj = build_projector(grid_d1, 2)
    blocks = build_Lp(grid_d1, 2, 1.0, cfg)
    op = build_Dp(blocks, proj)
    rng = np.random.default_rng(4)
    G = blocks.fiber_size
    x = op.pi_mat @ rng.standard_normal(2 * G)
    b = op.matrix @ x
    sj, sq, rep = solve_Dp(op, b[:G], b[G:])
    sol = np.concatenate([sj, sq])
    assert np.abs(sol - x).max() <= 1e-10 * max(np.abs(x).max(), 1.0)
    assert rep.ok and rep.residual_rel <= 1e-10


def test_Dp_projection_structure(grid_d1):
    cfg = default_kernel_config(grid_d1)
    proj = build_projector(grid_d1, 0)
    blocks = build_Lp(grid_d1, 0, 1.0, cfg)
    op = build_Dp(blocks, proj)
    assert op.in_e0
    # soft-band sandwich: applying the projector twice changes nothing
    assert np.abs(op.pi_mat @ op.matrix @ op.pi_mat - op.matrix).max() < 1e-12
    # rhs components along the soft directions are projected away: adding
    # them does not change the solution
    G = blocks.fiber_size
    p_even, p_odd = parity_projectors(grid_d1, 0)
    rng = np.random.default_rng(6)
    rhs_j = p_odd @ rng.standard_normal(G)
    rhs_q = proj.p_perp @ (p_even @ rng.standard_normal(G))
    sj1, sq1, rep1 = solve_Dp(op, rhs_j, rhs_q)
    sj2, sq2, rep2 = solve_Dp(op, rhs_j, rhs_q + 3.0 * proj.span[:, 0])
    assert rep1.ok and rep2.ok
    assert np.abs(sj1 - sj2).max() < 1e-10 * max(np.abs(sj1).max(), 1.0)
    assert np.abs(sq1 - sq2).max() < 1e-10 * max(np.abs(sq1).max(), 1.0)


def test_fibers_repeat_with_half_period(grid_d1):
    cfg = default_kernel_config(grid_d1, prefactor=False)
    b_lo = build_Lp(grid_d1, 1, 1.0, cfg, include_prefactor=False)
    b_hi = build_Lp(grid_d1, 1 + 2 * grid_d1.n, 1.0, cfg, include_prefactor=False)
    assert np.abs(b_lo.l11 - b_hi.l11).max() == 0.0
    assert np.abs(b_lo.l22 - b_hi.l22).max() == 0.0


def test_inverse_scales_with_coupling(grid_d1):
    # with the coupling prefactor the reduced operator at the slow point is
    # proportional to lambda^2, so its smallest retained singular value is too
    svals = {}
    for lam in (0.02, 0.04):
        spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=lam, gamma=0.2,
                           epsilon=0.6)
        g = Grid(spec)
        cfg = default_kernel_config(g)
        blocks = build_Lp(g, 0, 1.0, cfg)
        op = build_Dp(blocks, build_projector(g, 0))
        _, _, rep = solve_Dp(op, np.sin(np.pi * np.arange(g.nq) / g.n),
                             np.zeros(g.nq))
        svals[lam] = rep.smallest_retained
    assert svals[0.04] / svals[0.02] == pytest.approx(4.0, rel=1e-6)


def test_in_E0_band(grid_d1):
    inb, p0 = in_E0(grid_d1, 0, 5.0, warn=False)
    assert inb
    assert p0 >= np.pi / (2 * grid_d1.n)
    mid, _ = in_E0(grid_d1, grid_d1.n, 5.0, warn=False)
    assert not mid
    at_pi, _ = in_E0(grid_d1, 2 * grid_d1.n, 5.0, warn=False)
    assert at_pi

"""Linearization of the collision map around the flat equilibrium.

At the equilibrium state (slow zero mode times ``T0 / omega^2``) the
derivative of the collision map acts fiber by fiber in the half-sum momentum
``p``.  On each fiber it splits into a multiplication part (the operand
evaluated at the reflected point ``-k``) and an integral part whose kernel
carries one remaining internal momentum sum.  This module assembles the four
dense blocks acting on (flux, position) fiber vectors, the projector onto the
complement of the two soft directions ``omega^{-2}`` and ``omega^{-3}``, and
the reduced operator used by the transport solves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .collision import KernelConfig, _k3_tables, collision_fields, coupling_prefactor
from .fields import CorrelationField
from .lattice import Grid

_SIGNS = [(s1, s2, s3, s4)
          for s1 in (1, -1) for s2 in (1, -1) for s3 in (1, -1) for s4 in (1, -1)]


@dataclass
class LinearizedBlocks:
    """Dense fiber blocks of the linearized collision operator at one p."""

    grid: Grid
    nidx: int
    t0: float
    includes_lambda_prefactor: bool
    l11: np.ndarray
    l12: np.ndarray
    l21: np.ndarray
    l22: np.ndarray
    m11: np.ndarray
    m12: np.ndarray
    m21: np.ndarray
    m22: np.ndarray
    k11: np.ndarray
    k12: np.ndarray
    k21: np.ndarray
    k22: np.ndarray
    mult_point: np.ndarray      # pointwise 2x2 multiplier on parity sectors
    lam_eff2: float             # effective coupling scale (prefactor * t0^2)
    weight: np.ndarray          # H_p quadrature weight omega(p,k)^2 * wk
    omega_fiber: np.ndarray     # omega(p,k) along the fiber
    delta_omega2: np.ndarray
    sin_p: float
    sin_k: np.ndarray
    max_imag: float

    @property
    def fiber_size(self) -> int:
        return self.l11.shape[0]


def _fiber_maps(grid: Grid, nidx: int):
    nq, T = grid.nq, grid.n_trans
    b = (nidx - np.arange(nq)) % nq
    flip = np.repeat(b, T) * T + np.tile(grid.t_neg, nq)
    return b, flip


def fiber_vector(F: np.ndarray, grid: Grid, nidx: int) -> np.ndarray:
    """Restrict a stored field to the fiber of ``nidx`` (flattened (a, t))."""
    b, _ = _fiber_maps(grid, nidx)
    return np.ascontiguousarray(F[np.arange(grid.nq), b, :]).reshape(-1)


def fiber_embed(vec: np.ndarray, grid: Grid, nidx: int) -> np.ndarray:
    """Embed a fiber vector back into a stored field (zeros elsewhere)."""
    b, _ = _fiber_maps(grid, nidx)
    out = np.zeros((grid.nq, grid.nq, grid.n_trans), dtype=np.asarray(vec).dtype)
    out[np.arange(grid.nq), b, :] = np.asarray(vec).reshape(grid.nq, grid.n_trans)
    return out


def fiber_geometry(grid: Grid, nidx: int):
    """(omega(p,k), delta omega^2, sin k, H_p weight) along the fiber."""
    nq = grid.nq
    a = np.arange(nq)
    b = (nidx - a) % nq
    om_pk = grid.omega_pk[a, b, :].reshape(-1)
    dom2 = grid.delta_omega2[a, b, :].reshape(-1)
    k_first = np.pi * ((2 * a - nidx) % grid.np_dbl) / (2 * grid.n)
    sin_k = np.repeat(np.sin(k_first), grid.n_trans)
    weight = om_pk ** 2 * grid.wk
    return om_pk, dom2, sin_k, weight


def build_Lp(grid: Grid, nidx: int, t0: float, cfg: KernelConfig,
             include_prefactor: bool | None = None) -> LinearizedBlocks:
    """Assemble the four dense blocks of the linearized collision map on the
    fiber of p = pi*nidx/2N at expansion temperature ``t0``.

    The blocks are the exact derivative of the discrete collision rows, so a
    central finite difference of the nonlinear map reproduces them to O(h^2).
    """
    cfg.validate()
    if include_prefactor is None:
        include_prefactor = cfg.prefactor
    nq, T = grid.nq, grid.n_trans
    G = nq * T
    eps = cfg.epsilon
    om = grid.omega_q
    om_flat = om.reshape(G)
    b_of_a, flip = _fiber_maps(grid, nidx)
    a12, t3tab = _k3_tables(grid)
    k1_a = np.repeat(np.arange(nq), T)
    k1_t = np.tile(np.arange(T), nq)
    om4 = om[b_of_a, :]                                # omega(q') per (a, t)

    mu = np.zeros((2, 2, G), dtype=complex)            # [row, comp(J=0,Q=1), ext]
    kern = np.zeros((2, 2, G, G), dtype=complex)       # [row, comp, ext, operand]

    # transverse part of k2 = q - k1 - k3(operand): independent of aE
    if T > 1:
        t_op = np.tile(np.arange(T), nq)
        t2_cache = []
        for tE in range(T):
            tmp = grid.t_sub(np.full(G, tE), k1_t)                 # tE - t1
            t2 = grid.t_sub(np.repeat(tmp, G), np.tile(t_op, G)).reshape(G, G)
            t2_cache.append(t2)
    else:
        t2_cache = [np.zeros((G, G), dtype=int)]

    for aE in range(nq):
        # ---- multiplier term: two free internal momenta ------------------
        a3 = (aE - a12) % nq
        a3f = a3[np.ix_(k1_a, k1_a)]
        t3f = t3tab[:, k1_t][:, :, k1_t]
        om3 = om_flat[a3f[None] * T + t3f]             # [T, k1, k2]
        o4 = om4[aE]                                   # [T]
        sl = slice(aE * T, (aE + 1) * T)
        for s in _SIGNS:
            s1, s2, s3, s4 = s
            x = ((s1 * om_flat[:, None] + s2 * om_flat[None, :])[None]
                 + s3 * om3 + (s4 * o4)[:, None, None])
            R = 1.0 / (x + 1j * eps)
            base = R / (om_flat[:, None] ** 2 * om_flat[None, :] ** 2)[None]
            msum = (base * (s3 / om3)).sum(axis=(1, 2))           # [T]
            mu[0, 1, sl] += msum
            mu[1, 1, sl] += (1j * s4 * o4) * msum
            mu[0, 0, sl] += (1j * s4 / o4) * msum
            mu[1, 0, sl] += -(s4 * s4) * msum                     # (i s4 o4)(i s4 / o4)
        # ---- kernel term: operand momentum fixed, one free sum -----------
        a_op = np.repeat(np.arange(nq), T)
        a2k = (aE - np.add.outer(k1_a, a_op)) % nq                # [k1, op]
        om3v = om_flat                                            # omega at operand
        for tE in range(T):
            om2 = om_flat[a2k * T + t2_cache[tE]]                 # [k1, op]
            ext = aE * T + tE
            o4s = float(om4[aE, tE])
            for s in _SIGNS:
                s1, s2, s3, s4 = s
                x = (s1 * om_flat[:, None] + s2 * om2
                     + s3 * om3v[None, :] + s4 * o4s)
                R = 1.0 / (x + 1j * eps)
                base = (R / (om_flat[:, None] ** 2 * om2 ** 2)).sum(axis=0)
                coef = -(s3 * om3v) / o4s ** 2 * base             # [op]
                kern[0, 1, ext, :] += coef
                kern[1, 1, ext, :] += (1j * s4 * o4s) * coef
                kern[0, 0, ext, :] += (1j * s3 / om3v) * coef
                kern[1, 0, ext, :] += -(s3 * s4 * o4s / om3v) * coef
    mu *= t0 ** 2 * grid.wk ** 2
    kern *= t0 ** 2 * grid.wk ** 2        # one weight per free sum and operand

    pref = coupling_prefactor(grid, cfg.coupling) if include_prefactor else 1.0

    # row combinations: row1 = A(p,-k) - A(p,k); row2 = -(A(p,k) + A(p,-k)).
    # The first row is the antisymmetric part of the exact position-momentum
    # evolution (d/dt E[q p] carries the coupling as -(Q omega^2)).
    eye = np.eye(G)
    F = np.zeros((G, G))
    F[np.arange(G), flip] = 1.0
    mmat, kmat = {}, {}
    for j in (0, 1):
        comb = (F - eye) if j == 0 else -(eye + F)
        for c in (0, 1):
            Dm = np.zeros((G, G), dtype=complex)
            Dm[np.arange(G), flip] = mu[j, c]
            mmat[j, c] = pref * (comb @ Dm)
            kmat[j, c] = pref * (comb @ kern[j, c])

    max_imag = max(float(np.abs(mmat[j, c].imag).max() + np.abs(kmat[j, c].imag).max())
                   for j in (0, 1) for c in (0, 1))

    # pointwise 2x2 multiplier as seen by parity-resolved functions
    mu_flip = mu[:, :, flip]
    mult_point = np.zeros((G, 2, 2))
    mult_point[:, 0, 0] = pref * (mu[0, 0] + mu_flip[0, 0]).real
    mult_point[:, 0, 1] = -pref * (mu[0, 1] - mu_flip[0, 1]).real
    mult_point[:, 1, 0] = pref * (mu[1, 0] - mu_flip[1, 0]).real
    mult_point[:, 1, 1] = -pref * (mu[1, 1] + mu_flip[1, 1]).real

    om_pk, dom2, sin_k, weight = fiber_geometry(grid, nidx)
    p_val = np.pi * nidx / (2 * grid.n)

    def real(x):
        return np.ascontiguousarray(x.real)

    return LinearizedBlocks(
        grid=grid, nidx=nidx, t0=t0,
        includes_lambda_prefactor=include_prefactor,
        l11=real(mmat[0, 0] + kmat[0, 0]), l12=real(mmat[0, 1] + kmat[0, 1]),
        l21=real(mmat[1, 0] + kmat[1, 0]), l22=real(mmat[1, 1] + kmat[1, 1]),
        m11=real(mmat[0, 0]), m12=real(mmat[0, 1]),
        m21=real(mmat[1, 0]), m22=real(mmat[1, 1]),
        k11=real(kmat[0, 0]), k12=real(kmat[0, 1]),
        k21=real(kmat[1, 0]), k22=real(kmat[1, 1]),
        mult_point=mult_point, lam_eff2=float(pref * t0 ** 2),
        weight=weight, omega_fiber=om_pk,
        delta_omega2=dom2, sin_p=float(np.sin(p_val)), sin_k=sin_k,
        max_imag=max_imag,
    )


def nmap_rows(fld: CorrelationField, cfg: KernelConfig):
    """The two collision rows of the stationary system for a general state:
    row1 = N12(p,k) - N12(p,-k) (antisymmetric part of the position-momentum
    evolution), row2 = -N22(p,k)."""
    grid = fld.grid
    n1, n2, diag = collision_fields(fld, cfg)
    n1, n2 = n1.real, n2.real
    c = coupling_prefactor(grid, cfg.coupling) if cfg.prefactor else 1.0
    sw1 = np.ascontiguousarray(n1.transpose(1, 0, 2)[:, :, grid.t_neg])
    sw2 = np.ascontiguousarray(n2.transpose(1, 0, 2)[:, :, grid.t_neg])
    return c * (sw1 - n1), -c * (n2 + sw2), diag


# ---------------------------------------------------------------------------
# projector and the reduced operator
# ---------------------------------------------------------------------------

@dataclass
class ProjectorSpec:
    """Projector data in the omega(p,k)^2-weighted fiber inner product."""

    weight: np.ndarray
    span: np.ndarray            # columns: omega^{-2}, omega^{-3} on the fiber
    p_mat: np.ndarray
    p_perp: np.ndarray


def build_projector(grid: Grid, nidx: int) -> ProjectorSpec:
    om_pk, _, _, weight = fiber_geometry(grid, nidx)
    span = np.stack([om_pk ** -2.0, om_pk ** -3.0], axis=1)
    basis = []
    for i in range(span.shape[1]):
        v = span[:, i].copy()
        for u in basis:
            v -= u * np.dot(u * weight, v)
        v /= np.sqrt(np.dot(v * weight, v))
        basis.append(v)
    B = np.stack(basis, axis=1)
    P = B @ (B.T * weight[None, :])
    return ProjectorSpec(weight=weight, span=span, p_mat=P,
                         p_perp=np.eye(len(weight)) - P)


@dataclass
class ProjectedOperator:
    grid: Grid
    nidx: int
    matrix: np.ndarray
    pi_mat: np.ndarray
    in_e0: bool
    b_const: float
    projector: ProjectorSpec


def in_E0(grid: Grid, nidx: int, b_const: float, warn: bool = True):
    """Whether p = pi*nidx/2N lies in the soft band around 0 or pi; the band
    half-width b_const*lambda^2 is widened when narrower than the p grid."""
    lam = grid.spec.lam
    p0 = b_const * lam ** 2
    min_p0 = np.pi / (2 * grid.n) * (1.0 + 1e-12)
    if p0 < min_p0:
        p0 = min_p0
        if warn:
            warnings.warn("soft band narrower than the p grid; widened so two "
                          "grid points fall inside", stacklevel=2)
    p = np.pi * nidx / (2 * grid.n)
    d0 = min(p % (2 * np.pi), (-p) % (2 * np.pi))
    dpi = abs(p % (2 * np.pi) - np.pi)
    return bool(min(d0, dpi) <= p0), p0


def build_Dp(blocks: LinearizedBlocks, proj: ProjectorSpec,
             b_const: float = 5.0) -> ProjectedOperator:
    """delta omega^2 * sigma1 + L_p on the physical parity sector (odd flux,
    even position parts), with the soft directions additionally projected out
    of the position component inside the soft band."""
    G = blocks.fiber_size
    dom = np.diag(blocks.delta_omega2)
    full = np.block([[blocks.l11, dom + blocks.l12],
                     [dom + blocks.l21, blocks.l22]])
    inE0, _ = in_E0(blocks.grid, blocks.nidx, b_const, warn=False)
    p_even, p_odd = parity_projectors(blocks.grid, blocks.nidx)
    pi_mat = np.zeros((2 * G, 2 * G))
    pi_mat[:G, :G] = p_odd
    pi_mat[G:, G:] = (proj.p_perp @ p_even) if inE0 else p_even
    full = pi_mat @ full @ pi_mat
    return ProjectedOperator(grid=blocks.grid, nidx=blocks.nidx, matrix=full,
                             pi_mat=pi_mat, in_e0=inE0, b_const=b_const,
                             projector=proj)


@dataclass
class SolveReport:
    smallest_retained: float
    deflated: int
    residual_rel: float
    ok: bool


class NearSingularError(RuntimeError):
    pass


def solve_Dp(op: ProjectedOperator, rhs_j: np.ndarray, rhs_q: np.ndarray,
             floor: float = 1e-9, resid_tol: float = 1e-10,
             near_singular_floor: float = 0.0):
    """SVD least-squares solve on the reduced fiber operator.

    Singular directions below ``floor`` relative to the top singular value are
    deflated (the projected-out soft directions plus rounding remnants in the
    unphysical parity sectors).  The relative residual of the returned
    solution against the projected right-hand side is verified."""
    G = op.matrix.shape[0] // 2
    rhs = np.concatenate([np.asarray(rhs_j, dtype=float),
                          np.asarray(rhs_q, dtype=float)])
    rhs = op.pi_mat @ rhs
    U, s, Vt = np.linalg.svd(op.matrix)
    keep = s > floor * s[0]
    sol = Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep])
    scale = np.linalg.norm(rhs)
    rel = float(np.linalg.norm(op.matrix @ sol - rhs) / scale) if scale > 0 else 0.0
    smallest = float(s[keep].min()) if keep.any() else 0.0
    if near_singular_floor > 0 and smallest < near_singular_floor:
        raise NearSingularError(
            f"smallest retained singular value {smallest:.3e} below "
            f"{near_singular_floor:.3e} at fiber {op.nidx}")
    report = SolveReport(smallest_retained=smallest,
                         deflated=int((~keep).sum()),
                         residual_rel=rel, ok=rel <= resid_tol)
    return sol[:G], sol[G:], report


# ---------------------------------------------------------------------------
# structural diagnostics
# ---------------------------------------------------------------------------

def zero_mode_residuals(blocks: LinearizedBlocks):
    """Weighted norms of L22 applied to unit-normalized omega powers:
    the two soft directions (-2, -3) and the control direction (-4)."""
    w = blocks.weight
    om = blocks.omega_fiber

    def wnorm(v):
        return float(np.sqrt(np.dot(v * w, v)))

    out = {}
    for name, power in (("r2", -2), ("r3", -3), ("r4", -4)):
        v = om ** power
        v = v / wnorm(v)
        out[name] = wnorm(blocks.l22 @ v)
    return out["r2"], out["r3"], out["r4"]


def parity_projectors(grid: Grid, nidx: int):
    """(P_even, P_odd) for the k -> -k reflection on the fiber."""
    _, flip = _fiber_maps(grid, nidx)
    G = len(flip)
    F = np.zeros((G, G))
    F[np.arange(G), flip] = 1.0
    eye = np.eye(G)
    return 0.5 * (eye + F), 0.5 * (eye - F)


def offdiag_norms(blocks: LinearizedBlocks):
    """Norms of the cross blocks on the physical parity sectors
    (L12 acting on even position parts, L21 on odd flux parts)."""
    p_even, p_odd = parity_projectors(blocks.grid, blocks.nidx)
    return (float(np.linalg.norm(blocks.l12 @ p_even, 2)),
            float(np.linalg.norm(blocks.l21 @ p_odd, 2)))


def quadratic_forms(blocks: LinearizedBlocks, probes_j, probes_q,
                    proj: ProjectorSpec | None = None):
    """(J, L11 J) and (Q, Pperp L22 Pperp Q) in the weighted fiber product."""
    if proj is None:
        proj = build_projector(blocks.grid, blocks.nidx)
    w = proj.weight
    out_j = [float(np.dot(J * w, blocks.l11 @ J)) for J in probes_j]
    out_q = []
    for Q in probes_q:
        Qp = proj.p_perp @ Q
        out_q.append(float(np.dot(Qp * w, blocks.l22 @ Qp)))
    return out_j, out_q


def multiplier_bounds(blocks_list):
    """Pointwise singular-value floor of delta omega^2 sigma1 + M(p,k) over a
    sweep, the fitted constant in c*(lam_eff^2 + |sin p sin k|) and the signs
    of the diagonal multipliers."""
    floors, ratios = [], []
    sign_ok = True
    lam_eff2 = 0.0
    for blocks in blocks_list:
        lam_eff2 = blocks.lam_eff2
        m = blocks.mult_point.copy()
        m[:, 0, 1] += blocks.delta_omega2
        m[:, 1, 0] += blocks.delta_omega2
        svals = np.linalg.svd(m, compute_uv=False)[:, -1]
        floors.append(float(svals.min()))
        denom = lam_eff2 + np.abs(blocks.sin_p) * np.abs(blocks.sin_k)
        ratios.append(float((svals / denom).min()))
        d11, d22 = blocks.mult_point[:, 0, 0], blocks.mult_point[:, 1, 1]
        if not (d11.max() < 0.0 < d22.min()):
            sign_ok = False
    return {"floor": min(floors), "fitted_c": min(ratios),
            "diag_signs_ok": sign_ok, "lam_eff2": lam_eff2}


def hoelder_in_p(blocks_a: LinearizedBlocks, blocks_b: LinearizedBlocks):
    """Operator-norm block differences at two p values and the p step."""
    dp = abs(np.pi * (blocks_a.nidx - blocks_b.nidx) / (2 * blocks_a.grid.n))
    diffs = {name: float(np.linalg.norm(getattr(blocks_a, name)
                                        - getattr(blocks_b, name), 2))
             for name in ("l11", "l12", "l21", "l22")}
    return dp, diffs


def kernel_integrability(blocks: LinearizedBlocks, eta: float = 0.5):
    """max over rows of the weighted L^{1+eta} mass of the integral kernels."""
    out = {}
    wk = blocks.grid.wk
    for name in ("k11", "k12", "k21", "k22"):
        K = getattr(blocks, name)
        mass = ((np.abs(K / wk) ** (1 + eta) * wk).sum(axis=1)) ** (1 / (1 + eta))
        out[name] = float(mass.max())
    return out

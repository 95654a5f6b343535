"""Two-phonon collision kernels of the correlation closure.

The quadratic-in-field kernels ``n1`` and ``n2`` are four-momentum sums with
three exact lattice constraints, a resolvent factor ``1/(x + i eps)`` on the
total frequency mismatch ``x = sum_i s_i omega(k_i)`` and a four-fold sign
sum.  The resolvent splits into a principal-value part ``x/(x^2+eps^2)`` and
an on-shell part ``-eps/(x^2+eps^2)``; which of the two survives a given sign
pattern is decided automatically by the sign sum.

Discretization notes:

* All first-direction deltas are resolved exactly by index arithmetic.
* The sums over the slow (half-sum) arguments of the three field factors form
  an exact triple circular convolution; it is diagonalized by a layer
  transform, so a field enters through ``Psi_s(kappa; y)``, the layer
  representation of its second momentum argument.
* The quadrature is symmetric under the simultaneous interchange of the two
  field slots inside the bracket, which makes the k-integral of ``n2`` vanish
  to rounding for every bounded field (energy conservation of the closure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .fields import CorrelationField, w_field
from .lattice import Grid

_SIGNS = [(s1, s2, s3, s4)
          for s1 in (1, -1) for s2 in (1, -1) for s3 in (1, -1) for s4 in (1, -1)]
_HALF_SIGNS = [s for s in _SIGNS if s[0] == 1]


@dataclass(frozen=True)
class KernelConfig:
    """Evaluation controls for the collision kernels."""

    epsilon: float
    quadrature: str = "grid"          # "grid" | "mc"
    samples: int = 20000
    seed: int = 0
    prefactor: bool = True            # apply the coupling weight at all
    coupling: str = "literal"         # "literal" | "physical"
    mass_floor: float = 1e-8          # resolvability floor for the on-shell mass

    def validate(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.quadrature not in ("grid", "mc"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")
        if self.coupling not in ("literal", "physical"):
            raise ValueError(f"unknown coupling mode {self.coupling!r}")
        if self.quadrature == "mc" and self.samples <= 0:
            raise ValueError("samples must be > 0 for Monte Carlo quadrature")
        return self


def default_kernel_config(grid: Grid, **overrides) -> KernelConfig:
    eps = overrides.pop("epsilon", grid.spec.epsilon)
    return KernelConfig(epsilon=eps, **overrides).validate()


def coupling_prefactor(grid: Grid, mode: str = "literal") -> float:
    """Overall weight of the kernels: (9/8) (2 pi)^{3d} lambda^2 carried
    literally, or the physically calibrated (9/8) lambda^2 that makes the
    kernels match the memory-integral form under our normalized transforms
    (the absolute scale matters when comparing against direct simulation)."""
    base = 9.0 / 8.0 * grid.spec.lam ** 2
    if mode == "literal":
        return base * (2.0 * math.pi) ** (3 * grid.dim)
    return base


@dataclass
class KernelDiagnostics:
    onshell_mass_min: float
    resolvable: bool
    max_imag: float = 0.0


def _psi_tables(field: CorrelationField):
    """Layer representation Psi_s[kappa, y] of the two rotating fields."""
    grid = field.grid
    psi = {}
    for s in (1, -1):
        w = w_field(field, s)                       # [a, b, t]
        psi[s] = np.fft.fft(w, axis=1) / grid.nq    # [a, y, t]
    return psi


def _phase_table(grid: Grid):
    # PH[y, c] = exp(i * q_c * y) for coarse index c and layer y.
    y = np.arange(grid.nq)
    return np.exp(1j * np.pi * np.outer(y, np.arange(grid.nq)) / grid.n)


def _k3_tables(grid: Grid):
    """Index tables of k3 = q - k1 - k2 over (t_ext, k1, k2) and (a_ext)."""
    nq, T = grid.nq, grid.n_trans
    a12 = (np.arange(nq)[:, None] + np.arange(nq)[None, :]) % nq   # a1 + a2
    if grid.dim == 1:
        t3 = np.zeros((1, 1, 1), dtype=int)
    else:
        t12 = grid.t_add(np.repeat(np.arange(T), T), np.tile(np.arange(T), T))
        t3 = grid.t_sub(np.repeat(np.arange(T), T * T),
                        np.tile(t12, T)).reshape(T, T, T)
        # t3[tE, t1, t2] = tE - t1 - t2 (mod the transverse torus)
    return a12, t3


def _onshell_mass(grid: Grid, eps: float) -> float:
    """Quadrature mass of the mollified on-shell surface for balanced sign
    patterns; a vanishing mass means the grid cannot resolve the shell."""
    om = grid.omega_q.ravel()
    w = grid.wk
    x = om[:, None] - om[None, :]
    delta = (eps / np.pi) / (x ** 2 + eps ** 2)
    # two balanced pairs: a crude but monotone proxy for the full 4-sum
    return float((delta * w * w).sum())


def collision_fields(field: CorrelationField, cfg: KernelConfig,
                     external_a=None, full_s_sum: bool = False):
    """Assemble the raw kernels ``n1`` and ``n2`` for a general field.

    Returns complex arrays on the field storage layout (imaginary parts are
    rounding noise; callers take the real part).  ``external_a`` restricts
    the first external index for point evaluations.
    """
    cfg.validate()
    grid = field.grid
    nq, T = grid.nq, grid.n_trans
    G = nq * T
    eps = cfg.epsilon
    om = grid.omega_q                      # [a, t]
    om_flat = om.reshape(G)
    psi = _psi_tables(field)               # psi[s][a, y, t]
    psi_flat = {s: np.ascontiguousarray(psi[s].transpose(0, 2, 1).reshape(G, nq))
                for s in (1, -1)}
    ph = _phase_table(grid)                # [y, c]
    a12, t3tab = _k3_tables(grid)

    ext = range(nq) if external_a is None else list(np.atleast_1d(external_a))
    n1 = np.zeros((nq, nq, T), dtype=complex)
    n2 = np.zeros((nq, nq, T), dtype=complex)

    patterns = _SIGNS if full_s_sum else _HALF_SIGNS
    k1_a = np.repeat(np.arange(nq), T)     # flattened (a, t) -> a
    k1_t = np.tile(np.arange(T), nq)

    for aE in ext:
        a3 = (aE - a12) % nq                                   # [nq, nq] over (a1, a2)
        a3f = a3[np.ix_(k1_a, k1_a)]                           # [G, G]
        t3f = t3tab[:, k1_t][:, :, k1_t]                       # [T, G, G]
        kap3 = a3f[None, :, :] * T + t3f                       # flat k3 index
        om3 = om_flat[kap3]                                    # [T, G, G]
        om4 = om                                               # omega(q') = om[b, t]
        for s in patterns:
            s1, s2, s3, s4 = s
            z = (s1 * om_flat[:, None] + s2 * om_flat[None, :])[None, :, :] + s3 * om3
            x = z[:, :, :, None] + s4 * om4.T[:, None, None, :]   # [T, G, G, b]
            R = 1.0 / (x + 1j * eps)
            del x
            for y in range(nq):
                p1p2 = np.multiply.outer(psi_flat[s1][:, y], psi_flat[s2][:, y])
                # bracket term with the field in the fourth slot
                c1 = (s3 / om3) * (ph[y, a3f][None, :, :] * p1p2[None, :, :])
                e1 = np.einsum("tij,tijb->tb", c1, R)
                # bracket term with the field in the third slot
                psi3 = psi_flat[s3][:, y][kap3]
                c2 = (s3 * om3) * (p1p2[None, :, :] * psi3)
                e2 = np.einsum("tij,tijb->tb", c2, R)
                psi4 = psi[s4][:, y, :][:, grid.t_neg].T          # [t, b]
                term1 = e1 * psi4
                term2 = e2 / (om.T ** 2) * ph[y][None, :]
                block1 = term1 - term2                            # [t, b]
                n1[aE] += block1.T
                n2[aE] += ((1j * s4) * om.T * block1).T
    n1 *= grid.wk ** 2
    n2 *= grid.wk ** 2
    if not full_s_sum:
        n1 = 2.0 * n1.real + 0j
        n2 = 2.0 * n2.real + 0j
    mass = _onshell_mass(grid, eps)
    diag = KernelDiagnostics(onshell_mass_min=mass,
                             resolvable=mass >= cfg.mass_floor,
                             max_imag=float(max(np.abs(n1.imag).max(),
                                                np.abs(n2.imag).max())))
    return n1, n2, diag


def collision_fields_delta(profiles, grid: Grid, cfg: KernelConfig):
    """Kernels for fields supported on the slow zero mode (p in {0, pi}).

    ``profiles`` maps s -> f_s[a, t], the stored field values on the support
    (rows with q' = -q).  The slow sums collapse and the result is again
    supported there; returns ``n1[a, t]``, ``n2[a, t]`` and diagnostics.
    """
    cfg.validate()
    nq, T = grid.nq, grid.n_trans
    G = nq * T
    eps = cfg.epsilon
    om = grid.omega_q
    om_flat = om.reshape(G)
    f = {s: np.asarray(profiles[s], dtype=complex).reshape(G) for s in (1, -1)}
    a12, t3tab = _k3_tables(grid)
    k1_a = np.repeat(np.arange(nq), T)
    k1_t = np.tile(np.arange(T), nq)

    n1 = np.zeros((nq, T), dtype=complex)
    n2 = np.zeros((nq, T), dtype=complex)
    neg_a = (-np.arange(nq)) % nq
    for aE in range(nq):
        a3 = (aE - a12) % nq
        a3f = a3[np.ix_(k1_a, k1_a)]
        t3f = t3tab[:, k1_t][:, :, k1_t]
        kap3 = a3f[None] * T + t3f                       # [T, G, G]
        om3 = om_flat[kap3]
        kap4 = neg_a[aE] * T + grid.t_neg                # q' = -q, per t
        om4 = om[aE]                                     # omega is even
        for s in _SIGNS:
            s1, s2, s3, s4 = s
            x = ((s1 * om_flat[:, None] + s2 * om_flat[None, :])[None]
                 + s3 * om3 + (s4 * om4)[:, None, None])
            R = 1.0 / (x + 1j * eps)
            p1p2 = np.multiply.outer(f[s1], f[s2])[None]
            f4 = f[s4][kap4]
            f3 = f[s3][kap3]
            bracket = (1.0 / om3 ** 2) * f4[:, None, None] - \
                      (1.0 / om4 ** 2)[:, None, None] * f3
            core = (R * (s3 * om3) * p1p2 * bracket).sum(axis=(1, 2))
            scale = grid.wk ** 2 / nq ** 2
            n1[aE] += core * scale
            n2[aE] += (1j * s4 * om4) * core * scale
    mass = _onshell_mass(grid, eps)
    diag = KernelDiagnostics(onshell_mass_min=mass,
                             resolvable=mass >= cfg.mass_floor,
                             max_imag=float(max(np.abs(n1.imag).max(),
                                                np.abs(n2.imag).max())))
    return n1, n2, diag


def delta_supported_to_field(values, grid: Grid) -> np.ndarray:
    """Embed support values v[a, t] as a stored field (zero off support)."""
    out = np.zeros((grid.nq, grid.nq, grid.n_trans), dtype=np.asarray(values).dtype)
    neg = (-np.arange(grid.nq)) % grid.nq
    out[np.arange(grid.nq), neg, :] = values
    return out


def collision_n(field: CorrelationField, nidx: int, a: int, t: int,
                cfg: KernelConfig):
    """Point evaluation of (n1, n2) at p = pi*nidx/2N and the fiber point
    indexed by ``a`` (k = pi*(2a - nidx)/2N, transverse index ``t``)."""
    grid = field.grid
    if cfg.quadrature == "mc":
        return _collision_point_mc(field, nidx, a, t, cfg)
    n1, n2, diag = collision_fields(field, cfg, external_a=a)
    b = (nidx - a) % grid.nq
    return float(n1[a, b, t].real), float(n2[a, b, t].real), diag


def _collision_point_mc(field: CorrelationField, nidx: int, a: int, t: int,
                        cfg: KernelConfig):
    """Monte Carlo estimate of a point value: uniform subsampling of the two
    free internal momenta (unbiased for the deterministic grid sum)."""
    grid = field.grid
    nq, T = grid.nq, grid.n_trans
    G = nq * T
    eps = cfg.epsilon
    rng = np.random.default_rng(cfg.seed)
    om = grid.omega_q
    om_flat = om.reshape(G)
    psi = _psi_tables(field)
    psi_flat = {s: np.ascontiguousarray(psi[s].transpose(0, 2, 1).reshape(G, nq))
                for s in (1, -1)}
    ph = _phase_table(grid)
    b = (nidx - a) % nq
    k1 = rng.integers(0, G, size=cfg.samples)
    k2 = rng.integers(0, G, size=cfg.samples)
    a3 = (a - (k1 // T) - (k2 // T)) % nq
    if grid.dim == 1:
        t3 = np.zeros(cfg.samples, dtype=int)
    else:
        t3 = grid.t_sub(grid.t_sub(np.full(cfg.samples, t), k1 % T), k2 % T)
    kap3 = a3 * T + t3
    om3 = om_flat[kap3]
    om4 = om[b, t]
    vals1 = np.zeros(cfg.samples, dtype=complex)
    vals2 = np.zeros(cfg.samples, dtype=complex)
    for s in _SIGNS:
        s1, s2, s3, s4 = s
        x = s1 * om_flat[k1] + s2 * om_flat[k2] + s3 * om3 + s4 * om4
        R = 1.0 / (x + 1j * eps)
        acc = np.zeros(cfg.samples, dtype=complex)
        for y in range(nq):
            p1p2 = psi_flat[s1][k1, y] * psi_flat[s2][k2, y]
            term1 = (s3 / om3) * ph[y, a3] * p1p2 * psi[s4][b, y, grid.t_neg[t]]
            term2 = (s3 * om3) / om4 ** 2 * p1p2 * psi_flat[s3][kap3, y] * ph[y, b]
            acc += term1 - term2
        vals1 += R * acc
        vals2 += (1j * s4 * om4) * R * acc
    est1 = vals1.real.mean()
    est2 = vals2.real.mean()
    se1 = vals1.real.std(ddof=1) / math.sqrt(cfg.samples)
    se2 = vals2.real.std(ddof=1) / math.sqrt(cfg.samples)
    diag = KernelDiagnostics(onshell_mass_min=_onshell_mass(grid, eps),
                             resolvable=True)
    return (est1, se1), (est2, se2), diag


def assemble_N(field: CorrelationField, cfg: KernelConfig):
    """The kernels combined into the two blocks entering the stationary
    equations: ``N12`` (cross block, stored at its natural orientation) and
    ``N22`` (flux-flux block), on the field layout.  The coupling prefactor
    is applied when ``cfg.prefactor`` is set."""
    grid = field.grid
    n1, n2, diag = collision_fields(field, cfg)
    n1 = n1.real
    n2 = n2.real
    c = coupling_prefactor(grid, cfg.coupling) if cfg.prefactor else 1.0
    # N12 evaluated at (p, k) equals c * n1(p, -k); swapping arguments gives
    # the stored orientation.
    n12 = c * _swap_layout(n1, grid)
    n22 = c * (n2 + _swap_layout(n2, grid))
    return n12, n22, diag


def _swap_layout(F: np.ndarray, grid: Grid) -> np.ndarray:
    return np.ascontiguousarray(F.transpose(1, 0, 2)[:, :, grid.t_neg])


def energy_projection(n22_field: np.ndarray, grid: Grid) -> np.ndarray:
    """k-integral of a stored field along every fiber of the doubled lattice;
    vanishes to rounding for assembled ``N22`` by the interchange symmetry."""
    out = np.empty(grid.np_dbl, dtype=n22_field.dtype)
    a = np.arange(grid.nq)
    for nidx in range(grid.np_dbl):
        b = (nidx - a) % grid.nq
        out[nidx] = (n22_field[a, b, :].sum()) * grid.wk
    return out


def rho_weight(grid: Grid) -> np.ndarray:
    """rho(p, k) = omega(p, k)^{-1} on the stored layout."""
    return 1.0 / grid.omega_pk


def theta_projection(n22_field: np.ndarray, grid: Grid) -> np.ndarray:
    """Number-conservation projection: theta(P) = int rho(P/2, k) N22(P/2, k) dk
    for P on the coarse lattice."""
    rho = rho_weight(grid)
    out = np.empty(grid.nq, dtype=complex)
    a = np.arange(grid.nq)
    for m in range(grid.nq):
        b = (m - a) % grid.nq
        out[m] = (rho[a, b, :] * n22_field[a, b, :]).sum() * grid.wk
    return out


def theta(field: CorrelationField, cfg: KernelConfig) -> np.ndarray:
    """theta on the coarse lattice for a general state."""
    _, n22, _ = assemble_N(field, cfg)
    vals = theta_projection(n22, field.grid)
    return vals.real


def gibbs_state(T: float, A: float, grid: Grid,
                cfg: KernelConfig | None = None) -> CorrelationField:
    """Two-parameter translation-invariant stationary family.

    Q(p,k) = T (omega(q)^2 - A omega(q))^{-1} on the slow zero mode, J = 0,
    and P from the stationary relation (including the collision term when a
    kernel config with coupling is supplied)."""
    if not A < grid.spec.m2:
        raise ValueError(f"need A < m2 for positivity, got A={A}, m2={grid.spec.m2}")
    om = grid.omega_q
    qprof = T / (om ** 2 - A * om) * grid.nq
    qhat = delta_supported_to_field(qprof, grid)
    jhat = np.zeros_like(qhat)
    field = CorrelationField(grid, qhat, jhat)
    if cfg is None:
        cfg = default_kernel_config(grid)
    profiles = {s: qhat[np.arange(grid.nq), (-np.arange(grid.nq)) % grid.nq, :]
                for s in (1, -1)}
    n1, _, _ = collision_fields_delta(profiles, grid, cfg)
    c = coupling_prefactor(grid, cfg.coupling) if cfg.prefactor else 1.0
    neg = (-np.arange(grid.nq)) % grid.nq
    n1_swapped = n1.real[neg][:, grid.t_neg]
    p_support = om ** 2 * qprof - 0.5 * c * (n1.real + n1_swapped)
    field.p = delta_supported_to_field(p_support, grid)
    return field

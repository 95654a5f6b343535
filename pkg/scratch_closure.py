"""Scratch: closure-module validation."""
import sys
sys.path.insert(0, "src")
import numpy as np

from thermolat.lattice import LatticeSpec, Grid
from thermolat.fields import (CorrelationField, field_from_xspace,
                              field_to_xspace, coarse_transform, symmetrize_odd)
from thermolat.collision import (default_kernel_config, gibbs_state,
                                 delta_supported_to_field)
from thermolat.closure import (FiberCache, stationary_residual, residual_norms,
                               currents_from_J, kappa0, solve_conservation_zeroth,
                               zeroth_state, momentum_part, heat_balance)

# ---- 1. equilibrium residual (lambda > 0, gamma > 0) ----------------------
spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.2, t1=1.5, t2=1.5,
                   epsilon=0.6)
grid = Grid(spec)
cfg = default_kernel_config(grid)
eq = gibbs_state(1.5, 0.0, grid, cfg)
r1, r2, r3, _ = stationary_residual(eq, cfg)
print("equilibrium residuals:", residual_norms(r1, r2, r3, grid))

# ---- 2. generalized Gibbs at gamma = 0 ------------------------------------
spec_g = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.0, t1=1.0, t2=1.0,
                     epsilon=0.6)
grid_g = Grid(spec_g)
cfg_g = default_kernel_config(grid_g)
gb = gibbs_state(1.0, 0.5, grid_g, cfg_g)
r1, r2, r3, _ = stationary_residual(gb, cfg_g)
print("gibbs(T=1, A=0.5) residuals eps=0.6:", residual_norms(r1, r2, r3, grid_g))
for eps in (0.6, 0.3, 0.15):
    cfge = default_kernel_config(grid_g, epsilon=eps)
    gbe = gibbs_state(1.0, 0.5, grid_g, cfge)
    _, r2e, r3e, _ = stationary_residual(gbe, cfge)
    print(f"  eps={eps}: |r2| {np.abs(r2e).max():.3e}  |r3| {np.abs(r3e).max():.3e}")

# ---- 3. current transform identity vs x-space bond current ----------------
specj = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.0, gamma=0.1, epsilon=0.5)
gj = Grid(specj)
ns = gj.nq
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
om_op = -lap + specj.m2 * np.eye(ns)
Jp = om_op @ Jx + Jx @ om_op
j_direct = np.array([Jp[(x - 1) % ns, x] for x in range(ns)])
jf = field_from_xspace(Jx, gj)
jmom, _ = currents_from_J(jf, gj)
j_back = coarse_transform(jmom, gj)
print("\ncurrent identity: j(p)->x vs J'(x-1,x):")
print("  j_back:", np.round(j_back.real, 8))
print("  direct:", np.round(j_direct, 8))
print("  max diff:", np.abs(j_back.real - j_direct).max(),
      " imag:", np.abs(j_back.imag).max())

# ---- 4. kappa0 inner-product route vs fiber-solve route -------------------
spec_k = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=None, t1=1.1, t2=0.9)
grid_k = Grid(spec_k.resolved())
cfg_k = default_kernel_config(grid_k)
cache = FiberCache(grid_k, cfg_k, t0=1.0)
cond = kappa0(cache)
print("\nkappa0 (inner products):\n", cond.kappa0)
print("kappa(0) (fiber solves):\n", cond.kappa[0].real)
print("imag:", np.abs(cond.kappa[0].imag).max())
print("det:", cond.det0, " sym-PD:", cond.positive_definite_sym())

# ---- 5. zeroth-order conservation solve -----------------------------------
sol = solve_conservation_zeroth(cache)
prof = sol.profiles.temperature_layers()
print("\nT profile layers:", np.round(prof, 4), " baths:", spec_k.t1, spec_k.t2)
print("A profile:", np.round(sol.profiles.imbalance_layers(), 6))
print("j layers:", np.round(sol.currents.j_layers(), 8))
print("jprime layers:", np.round(sol.currents.jprime_layers(), 8))

st = zeroth_state(cache, sol, cfg_k)
r1, r2, r3, _ = stationary_residual(st, cfg_k)
print("zeroth-state residuals:", residual_norms(r1, r2, r3, grid_k))
div, sources, j_x, proj = heat_balance(st, cfg_k)
print("heat balance: max|div - sources| =", np.abs(div - sources).max(),
      "  r3 projection bound:", proj)

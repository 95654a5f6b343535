"""Airtight time-integral check: simplified propagators, sector-resolved."""
import sys
sys.path.insert(0, "src")
import numpy as np

from thermolat.lattice import LatticeSpec, Grid
from thermolat.fields import CorrelationField, field_from_xspace, field_to_xspace
from thermolat.collision import collision_fields, coupling_prefactor, default_kernel_config

N = 2
m2 = 10.0
eps_R = 0.2            # per-propagator decay e^{-eps_R t / 2}; resolvent eps = 2 eps_R
nsites = 2 * N

lap = np.zeros((nsites, nsites))
for x in range(nsites):
    lap[x, x] = -2.0
    lap[x, (x + 1) % nsites] = 1.0
    lap[x, (x - 1) % nsites] = 1.0
om2_op = (-lap + m2 * np.eye(nsites)) @ (-lap + m2 * np.eye(nsites))
evals, evecs = np.linalg.eigh(om2_op)
oms = np.sqrt(evals)
om_inv2 = np.linalg.inv(om2_op)


def R_blocks(t):
    decay = np.exp(-eps_R * t / 2.0)
    c = np.cos(oms * t) * decay
    s = np.sin(oms * t) / oms * decay
    r11 = evecs @ np.diag(c) @ evecs.T
    r12 = evecs @ np.diag(s) @ evecs.T
    r21 = evecs @ np.diag(-(oms ** 2) * s) @ evecs.T
    return r11, r12, r21, r11 * 0 + evecs @ np.diag(c) @ evecs.T


def timeint_N(Qx, Jx):
    Tmax = 80.0 / eps_R
    nt = 160001
    ts = np.linspace(0.0, Tmax, nt)
    wts = np.ones(nt); wts[1:-1:2] = 4.0; wts[2:-1:2] = 2.0
    h = ts[1] - ts[0]
    acc1 = np.zeros((nsites, nsites))
    acc2 = np.zeros((nsites, nsites))
    for t, w in zip(ts, wts):
        r11, r12, r21, r22 = R_blocks(t)
        A = r11 @ Qx + r12 @ (-Jx)
        C = r21 @ Qx + r22 @ (-Jx)
        D1 = r11 @ om_inv2
        D2 = r21 @ om_inv2
        acc1 += w * ((A ** 2 * r12) @ A.T + (A ** 2 * C) @ D1)
        acc2 += w * ((A ** 2 * r12) @ C.T + (A ** 2 * C) @ D2)
    raw21 = acc1 * h / 3.0 * 18.0
    raw22 = acc2 * h / 3.0 * 18.0
    return raw21.T, raw22 + raw22.T   # N12(x,y) = raw21(y,x); N22 symmetrized


def mine_N(Qx, Jx, grid, cfg):
    field = CorrelationField(grid, field_from_xspace(Qx, grid).real,
                             field_from_xspace(Jx, grid).real)
    n1, n2, _ = collision_fields(field, cfg)
    c = coupling_prefactor(grid)
    sw1 = np.ascontiguousarray(n1.real.transpose(1, 0, 2))
    sw2 = np.ascontiguousarray(n2.real.transpose(1, 0, 2))
    N12x = field_to_xspace(c * sw1, grid).real
    N22x = field_to_xspace(c * (n2.real + sw2), grid).real
    return N12x, N22x


def report(tag, ref, mine):
    mask = np.abs(ref) > 1e-7 * np.abs(ref).max()
    ratio = mine[mask] / ref[mask]
    print(f"{tag}: ratio mean {ratio.mean():+.6f} spread {ratio.std():.3e} "
          f"(expected (2pi)^3 = {(2*np.pi)**3:.4f})")


def symxy(M, anti=False):
    M = 0.5 * (M - M.T) if anti else 0.5 * (M + M.T)
    idx = (-np.arange(nsites)) % nsites
    s = -1.0 if anti else 1.0
    return 0.5 * (M + s * M[np.ix_(idx, idx)] * (1 if not anti else -1) * -1 + M[np.ix_(idx, idx)] * (2 if False else 0)) if False else 0.5 * (M + M[np.ix_(idx, idx)])


rng = np.random.default_rng(5)
spec = LatticeSpec(n=N, dim=1, m2=m2, lam=1.0, gamma=0.1, epsilon=2 * eps_R)
grid = Grid(spec)
cfg = default_kernel_config(grid)

Qx = symxy(0.5 * (lambda M: M + M.T)(rng.standard_normal((nsites, nsites))))
Jraw = rng.standard_normal((nsites, nsites))
Jx = symxy(0.5 * (Jraw - Jraw.T))

# pure Q sector
r12, r22 = timeint_N(Qx, 0 * Jx)
m12, m22 = mine_N(Qx, 0 * Jx, grid, cfg)
report("Q-sector N12", r12, m12)
report("Q-sector N22", r22, m22)

# J-linear sector: odd part in J
h = 0.3
r12p, r22p = timeint_N(Qx, h * Jx)
r12m, r22m = timeint_N(Qx, -h * Jx)
m12p, m22p = mine_N(Qx, h * Jx, grid, cfg)
m12m, m22m = mine_N(Qx, -h * Jx, grid, cfg)
report("J-odd N12", (r12p - r12m) / 2, (m12p - m12m) / 2)
report("J-odd N22", (r22p - r22m) / 2, (m22p - m22m) / 2)

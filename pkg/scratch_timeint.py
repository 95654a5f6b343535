"""Authoritative cross-check: collision term from its time-integral form.

Evaluates, on a tiny d=1 ring, the memory-integral representation of the
closure's nonlinear term (four propagator factors, friction eps everywhere,
t-integral to infinity) and compares with the momentum-space kernel assembly.
This pins the absolute sign and shape of n1/n2.
"""
import sys
sys.path.insert(0, "src")
import numpy as np

from thermolat.lattice import LatticeSpec, Grid
from thermolat.fields import CorrelationField, field_from_xspace, field_to_xspace
from thermolat.collision import collision_fields, default_kernel_config, coupling_prefactor

N = 2          # ring of 2N = 4 sites
m2 = 10.0
eps_R = 0.25   # per-propagator friction; resolvent eps is 2*eps_R
spec = LatticeSpec(n=N, dim=1, m2=m2, lam=1.0, gamma=0.1, epsilon=2 * eps_R)
grid = Grid(spec)
nsites = 2 * N

# dense omega^2 operator: ((-Delta + m2)^2)
lap = np.zeros((nsites, nsites))
for x in range(nsites):
    lap[x, x] = -2.0
    lap[x, (x + 1) % nsites] = 1.0
    lap[x, (x - 1) % nsites] = 1.0
om2_op = (-lap + m2 * np.eye(nsites)) @ (-lap + m2 * np.eye(nsites))
evals, evecs = np.linalg.eigh(om2_op)
oms = np.sqrt(evals)

def R_blocks(t):
    """Blocks of exp(t*[[0,1],[-om2,-eps]]) as site-space matrices."""
    omt = np.sqrt(oms ** 2 - eps_R ** 2 / 4.0)
    decay = np.exp(-eps_R * t / 2.0)
    c = np.cos(omt * t) * decay
    s = np.sin(omt * t) / omt * decay
    # per-mode 2x2: [[c + (eps/2) s, s], [-om^2 s, c - (eps/2) s]]
    r11 = evecs @ np.diag(c + 0.5 * eps_R * s) @ evecs.T
    r12 = evecs @ np.diag(s) @ evecs.T
    r21 = evecs @ np.diag(-(oms ** 2) * s) @ evecs.T
    r22 = evecs @ np.diag(c - 0.5 * eps_R * s) @ evecs.T
    return r11, r12, r21, r22

rng = np.random.default_rng(12)
# x-space Q symmetric with Q(x,y)=Q(-x,-y); J antisymmetric likewise
def symxy(M, anti=False):
    M = 0.5 * (M - M.T) if anti else 0.5 * (M + M.T)
    idx = (-np.arange(nsites)) % nsites
    return 0.5 * (M + M[np.ix_(idx, idx)])

Qx = symxy(rng.standard_normal((nsites, nsites)))
Jx = symxy(rng.standard_normal((nsites, nsites)), anti=True)
om_inv2 = np.linalg.inv(om2_op)

def integrand(t):
    r11, r12, r21, r22 = R_blocks(t)
    A = r11 @ Qx + r12 @ (-Jx)          # (R G)_11
    C = r21 @ Qx + r22 @ (-Jx)          # (R G)_21
    B1, B2 = A, C                        # (R G)_{beta 1}
    D1 = r11 @ om_inv2                   # (R G0)_{11}
    D2 = r21 @ om_inv2                   # (R G0)_{21}
    out = {}
    for beta, (B, D) in enumerate(((B1, D1), (B2, D2)), start=1):
        # sum_z A(x,z)^2 [ R12(x,z) B(y,z) + C(x,z) D(z,y) ]
        term1 = (A ** 2 * r12) @ B.T
        term2 = (A ** 2 * C) @ D
        out[beta] = term1 + term2
    return out

# adaptive-ish Simpson on [0, Tmax]
Tmax = 60.0 / eps_R
nt = 120001
ts = np.linspace(0.0, Tmax, nt)
acc = {1: np.zeros((nsites, nsites)), 2: np.zeros((nsites, nsites))}
wts = np.ones(nt); wts[1:-1:2] = 4.0; wts[2:-1:2] = 2.0
h = ts[1] - ts[0]
for t, w in zip(ts, wts):
    vals = integrand(t)
    acc[1] += w * vals[1]
    acc[2] += w * vals[2]
raw21 = acc[1] * h / 3.0 * 18.0   # 18 lambda^2, lambda = 1
raw22 = acc[2] * h / 3.0 * 18.0

N12x = raw21.T                    # N_{12}(x,y) = raw_{21}(y,x)
N22x = raw22 + raw22.T

# my machinery
field = CorrelationField(grid, field_from_xspace(Qx, grid).real,
                         field_from_xspace(Jx, grid).real)
cfg = default_kernel_config(grid)
n1, n2, _ = collision_fields(field, cfg)
c = coupling_prefactor(grid)
neg = grid.t_neg
sw1 = np.ascontiguousarray(n1.real.transpose(1, 0, 2))
sw2 = np.ascontiguousarray(n2.real.transpose(1, 0, 2))
N12_hat = c * sw1                  # N12 at (p,k) = c n1(p,-k)
N22_hat = c * (n2.real + sw2)
N12_mine = field_to_xspace(N12_hat[:, :, None] if N12_hat.ndim == 2 else N12_hat, grid).real
N22_mine = field_to_xspace(N22_hat[:, :, None] if N22_hat.ndim == 2 else N22_hat, grid).real

for name, ref, mine in (("N12", N12x, N12_mine), ("N22", N22x, N22_mine)):
    mask = np.abs(ref) > 1e-8 * np.abs(ref).max()
    ratio = mine[mask] / ref[mask]
    print(f"{name}: ratio mean {ratio.mean():+.6f}  spread {ratio.std():.2e} "
          f"  |ref|max {np.abs(ref).max():.3e}")

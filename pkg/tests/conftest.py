import itertools

import numpy as np
import pytest

from thermolat.lattice import Grid, LatticeSpec

SIGNS = list(itertools.product((1, -1), repeat=4))


@pytest.fixture(scope="session")
def grid_d1():
    spec = LatticeSpec(n=4, dim=1, m2=10.0, lam=0.1, gamma=0.2, t1=1.0, t2=1.0,
                       epsilon=0.6)
    return Grid(spec)


@pytest.fixture(scope="session")
def grid_tiny():
    spec = LatticeSpec(n=2, dim=1, m2=10.0, lam=0.1, gamma=0.1, t1=1.0, t2=1.0,
                       epsilon=0.5)
    return Grid(spec)


@pytest.fixture(scope="session")
def grid_d3_small():
    spec = LatticeSpec(n=2, m_transverse=2, dim=3, m2=10.0, lam=0.1, gamma=0.1,
                       t1=1.0, t2=1.0, epsilon=1.2)
    return Grid(spec)


def oracle_kernels(field, eps):
    """Direct six-fold coarse-variable sum for the collision kernels (dim 1).

    Independent bookkeeping: resolves the pair constraints by explicit
    Kronecker factors on the original momentum pairs."""
    grid = field.grid
    nq = grid.nq
    om = grid.omega_q[:, 0]
    Q = field.q[:, :, 0]
    J = field.j[:, :, 0]

    def W(s, A, B):
        return Q[A, B] + 1j * s * J[A, B] / om[A]

    w6 = (1.0 / nq) ** 6
    n1 = np.zeros((nq, nq), dtype=complex)
    n2 = np.zeros((nq, nq), dtype=complex)
    triples = list(itertools.product(range(nq), repeat=3))
    for A in range(nq):
        for B in range(nq):
            acc1 = 0.0 + 0j
            acc2 = 0.0 + 0j
            for (s1, s2, s3, s4) in SIGNS:
                for (a1, a2, a3) in triples:
                    if (a1 + a2 + a3) % nq != A:
                        continue
                    R = 1.0 / (s1 * om[a1] + s2 * om[a2] + s3 * om[a3]
                               + s4 * om[B] + 1j * eps)
                    for (b1, b2, b3) in triples:
                        b4 = (-(b1 + b2 + b3)) % nq
                        br = 0.0 + 0j
                        if b3 == (-a3) % nq:
                            br += -1j * s3 / om[a3] * 2 * grid.n * W(s4, B, b4)
                        if b4 == (-B) % nq:
                            br += (1j * s3 * om[a3] / om[B] ** 2
                                   * 2 * grid.n * W(s3, a3, b3))
                        if br == 0:
                            continue
                        core = (1j * R * W(s1, a1, b1) * W(s2, a2, b2)
                                * br * 2 * grid.n)
                        acc1 += core
                        acc2 += core * 1j * s4 * om[B]
            n1[A, B] = acc1 * w6
            n2[A, B] = acc2 * w6
    return n1, n2

"""Correlation fields on the momentum checkerboard and their symmetries.

A stationary two-point function in the translation-invariant sector is stored
as a real array ``F[a, b, t]`` (see :class:`thermolat.lattice.Grid`): ``a``
and ``b`` index the coarse first components of the two momentum arguments and
``t`` the transverse momentum of the first (the second carries its negative).
In the half-sum / half-difference coordinates the required symmetries read

* position part ``Q``: even under ``k -> -k`` and ``p -> -p``,
* flux part ``J``:  odd under both,
* momentum part ``P``: like ``Q``,

which on the storage layout become the swap of ``a`` and ``b`` (with
transverse negation) and the negation of all indices.  Real storage suffices:
reality of G(x, y) makes the stored arrays real-valued.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import Grid


def _swap(F: np.ndarray, grid: Grid) -> np.ndarray:
    # (p, k) -> (p, -k): exchange the two momentum arguments.
    return np.ascontiguousarray(F.transpose(1, 0, 2)[:, :, grid.t_neg])


def _negate(F: np.ndarray, grid: Grid) -> np.ndarray:
    # (p, k) -> (-p, -k): negate both momentum arguments.
    nq = grid.nq
    idx = (-np.arange(nq)) % nq
    return np.ascontiguousarray(F[np.ix_(idx, idx, grid.t_neg)])


def symmetrize_even(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Project onto fields with the ``Q``/``P`` symmetries."""
    F = 0.5 * (F + _swap(F, grid))
    return 0.5 * (F + _negate(F, grid))


def symmetrize_odd(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Project onto fields with the ``J`` symmetries."""
    F = 0.5 * (F - _swap(F, grid))
    return 0.5 * (F + _negate(F, grid))


@dataclass
class CorrelationField:
    """The triple (Q, J, P) sampled on the momentum checkerboard."""

    grid: Grid
    q: np.ndarray
    j: np.ndarray
    p: np.ndarray | None = None

    @classmethod
    def zeros(cls, grid: Grid):
        shape = (grid.nq, grid.nq, grid.n_trans)
        return cls(grid, np.zeros(shape), np.zeros(shape), np.zeros(shape))

    @classmethod
    def random(cls, grid: Grid, rng: np.random.Generator, scale: float = 1.0,
               with_p: bool = False):
        """A bounded random field carrying the exact parity symmetries."""
        shape = (grid.nq, grid.nq, grid.n_trans)
        q = symmetrize_even(scale * rng.standard_normal(shape), grid)
        j = symmetrize_odd(scale * rng.standard_normal(shape), grid)
        p = symmetrize_even(scale * rng.standard_normal(shape), grid) if with_p else None
        return cls(grid, q, j, p)

    def symmetrized(self) -> "CorrelationField":
        return CorrelationField(
            self.grid,
            symmetrize_even(self.q, self.grid),
            symmetrize_odd(self.j, self.grid),
            None if self.p is None else symmetrize_even(self.p, self.grid),
        )

    def symmetry_defect(self) -> float:
        """Max deviation from the required parities (0 for valid fields)."""
        g = self.grid
        d = max(
            np.abs(self.q - symmetrize_even(self.q, g)).max(),
            np.abs(self.j - symmetrize_odd(self.j, g)).max(),
        )
        if self.p is not None:
            d = max(d, np.abs(self.p - symmetrize_even(self.p, g)).max())
        return float(d)

    # -- value accessors in (p, k) coordinates -----------------------------
    def value_pk(self, which: str, nidx: int, a: int, t: int = 0) -> float:
        """Value of Q/J/P at p = pi*nidx/2N with k indexed by the fiber
        coordinate ``a`` (k = pi*(2a - nidx)/2N) and transverse index ``t``."""
        arr = {"q": self.q, "j": self.j, "p": self.p}[which]
        b = (nidx - a) % self.grid.nq
        return float(arr[a % self.grid.nq, b, t])


def w_field(field_or_qj, s: int, grid: Grid | None = None) -> np.ndarray:
    """Rotating combination W_s = Q + i s omega(q)^{-1} J (s = +-1)."""
    if isinstance(field_or_qj, CorrelationField):
        q, j, grid = field_or_qj.q, field_or_qj.j, field_or_qj.grid
    else:
        q, j = field_or_qj
    om = grid.omega_q[:, None, :]
    return q + (1j * s) * j / om


def slow_profile(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Layer profile of the diagonal G(x, x) of a stored field (transverse
    averaged); returns one complex value per layer (real for valid fields)."""
    nq = grid.nq
    tsum = F.sum(axis=2) * grid.w_trans
    x = np.arange(nq)
    phase = np.exp(1j * np.pi * np.add.outer(np.arange(nq), np.arange(nq))[:, :, None]
                   * x[None, None, :] / grid.n)
    return np.einsum("ab,abx->x", tsum, phase) * grid.w_coarse ** 2


def field_from_xspace(gxy: np.ndarray, grid: Grid) -> np.ndarray:
    """Momentum layout of a dim-1 kernel G(x1, y1); inverse of
    :func:`field_to_xspace`."""
    if grid.dim != 1:
        raise ValueError("x-space helper implemented for dim 1 only")
    nq = grid.nq
    x = np.arange(nq)
    ph = np.exp(-1j * np.pi * np.outer(np.arange(nq), x) / grid.n)
    out = ph @ gxy @ ph.T
    return out[:, :, None]


def field_to_xspace(F: np.ndarray, grid: Grid) -> np.ndarray:
    """Position-space kernel G(x1, y1) of a stored dim-1 field."""
    if grid.dim != 1:
        raise ValueError("x-space helper implemented for dim 1 only")
    nq = grid.nq
    x = np.arange(nq)
    ph = np.exp(1j * np.pi * np.outer(x, np.arange(nq)) / grid.n)
    return ph @ F[:, :, 0] @ ph.T * grid.w_coarse ** 2


def coarse_transform(values_p: np.ndarray, grid: Grid) -> np.ndarray:
    """Layer function f(x) of a coarse-lattice momentum function f(p):
    f(x) = (1/2N) sum_p e^{ipx} f(p)."""
    nq = grid.nq
    x = np.arange(nq)
    ph = np.exp(1j * np.pi * np.outer(x, np.arange(nq)) / grid.n)
    return ph @ np.asarray(values_p) * grid.w_coarse


def coarse_transform_inv(values_x: np.ndarray, grid: Grid) -> np.ndarray:
    """Momentum function f(p) = sum_x e^{-ipx} f(x) on the coarse lattice."""
    nq = grid.nq
    x = np.arange(nq)
    ph = np.exp(-1j * np.pi * np.outer(np.arange(nq), x) / grid.n)
    return ph @ np.asarray(values_x)

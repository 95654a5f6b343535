"""Lattice geometry, momentum grids and the dispersion relation.

The chain lives on a ring of ``2N`` layers (first direction) times a periodic
torus ``Z_M^(d-1)`` in the transverse directions.  Stationary two-point
functions are handled in momentum space on two coupled grids:

* the coarse grid ``q = pi*a/N``, ``a in Z_{2N}`` (one factor per argument of
  a two-point function), and
* the doubled grid ``p = pi*n/(2N)``, ``n in Z_{4N}`` for the half-sum
  coordinate ``p = (q + q')/2``.

Sums over momenta are normalized Riemann sums: weight ``1/(2N)`` per coarse
first-direction point, ``1/(4N)`` per doubled point and ``1/M`` per transverse
direction, so that the integral of 1 over any full grid equals 1.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_ALPHA = 0.5

# JSON field order is part of the on-disk format.
_JSON_FIELDS = (
    "n", "m_transverse", "dim", "m2", "lambda", "gamma", "t1", "t2", "epsilon",
)


class ConfigError(ValueError):
    """Raised when a parameter set violates a model invariant."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class LatticeSpec:
    """All model parameters.

    ``n`` is the half-length of the ring (layers are indexed mod ``2n``),
    ``m_transverse`` the transverse extent per direction, ``dim`` the spatial
    dimension, ``m2`` the pinning mass, ``lam`` the quartic coupling,
    ``gamma`` the boundary friction, ``t1``/``t2`` the bath temperatures at
    layers 0 and ``n`` and ``epsilon`` the resolvent regularization of the
    collision kernels.
    """

    n: int
    m_transverse: int = 1
    dim: int = 1
    m2: float = 10.0
    lam: float = 0.0
    gamma: float | None = None
    t1: float = 1.0
    t2: float = 1.0
    epsilon: float | None = None

    def validate(self):
        v = []
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 2):
            v.append(f"n must be an integer >= 2, got {self.n!r}")
        if not (isinstance(self.m_transverse, (int, np.integer)) and self.m_transverse >= 1):
            v.append(f"m_transverse must be an integer >= 1, got {self.m_transverse!r}")
        if self.dim not in (1, 2, 3):
            v.append(f"dim must be 1, 2 or 3, got {self.dim!r}")
        if self.dim > 1 and self.m_transverse < 2:
            v.append("m_transverse must be >= 2 when dim > 1")
        if not self.m2 > 0:
            v.append(f"m2 must be > 0, got {self.m2!r}")
        if self.lam < 0:
            v.append(f"lambda must be >= 0, got {self.lam!r}")
        if self.gamma is not None and self.gamma < 0:
            v.append(f"gamma must be >= 0, got {self.gamma!r}")
        if not self.t1 > 0:
            v.append(f"t1 must be > 0, got {self.t1!r}")
        if not self.t2 > 0:
            v.append(f"t2 must be > 0, got {self.t2!r}")
        if self.epsilon is not None and not self.epsilon > 0:
            v.append(f"epsilon must be > 0, got {self.epsilon!r}")
        if v:
            raise ConfigError(v)
        return self

    def resolved(self, alpha: float = DEFAULT_ALPHA, epsilon_factor: float = 1.0):
        """Fill in derived defaults: gamma = N**(-1+alpha/4), epsilon tied to
        the grid spacing (so the mollified on-shell delta is resolvable)."""
        self.validate()
        gamma = self.gamma
        if gamma is None:
            gamma = float(self.n) ** (-1.0 + alpha / 4.0)
        eps = self.epsilon
        if eps is None:
            spacings = [math.pi / self.n]
            if self.dim > 1:
                spacings.append(2.0 * math.pi / self.m_transverse)
            eps = epsilon_factor * max(spacings)
        out = replace(self, gamma=gamma, epsilon=eps)
        out.validate()
        return out

    # -- JSON round trip (field names are fixed) --------------------------
    def to_json(self) -> str:
        d = {
            "n": int(self.n),
            "m_transverse": int(self.m_transverse),
            "dim": int(self.dim),
            "m2": float(self.m2),
            "lambda": float(self.lam),
            "gamma": None if self.gamma is None else float(self.gamma),
            "t1": float(self.t1),
            "t2": float(self.t2),
            "epsilon": None if self.epsilon is None else float(self.epsilon),
        }
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "LatticeSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"lattice spec is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("lattice spec JSON must be an object")
        unknown = set(d) - set(_JSON_FIELDS)
        if unknown:
            raise ConfigError(f"unknown lattice spec fields: {sorted(unknown)}")
        missing = {"n"} - set(d)
        if missing:
            raise ConfigError(f"missing lattice spec fields: {sorted(missing)}")
        spec = cls(
            n=d["n"],
            m_transverse=d.get("m_transverse", 1),
            dim=d.get("dim", 1),
            m2=d.get("m2", 10.0),
            lam=d.get("lambda", 0.0),
            gamma=d.get("gamma"),
            t1=d.get("t1", 1.0),
            t2=d.get("t2", 1.0),
            epsilon=d.get("epsilon"),
        )
        spec.validate()
        return spec


def dispersion(k, m2: float, dim: int | None = None):
    """omega(k) = 2*sum_alpha (1 - cos k_alpha) + m2.

    ``k`` may be a scalar (dim 1), a length-d vector or an array whose last
    axis runs over the d components.  Even and 2*pi periodic per component.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return 2.0 * (1.0 - np.cos(k)) + m2
    if dim is not None and k.shape[-1] != dim:
        raise ValueError(f"expected {dim} momentum components, got {k.shape[-1]}")
    return 2.0 * np.sum(1.0 - np.cos(k), axis=-1) + m2


class Grid:
    """Precomputed momentum grids, quadrature weights and dispersion tables.

    Fields on the translation-invariant sector are stored as arrays
    ``F[a, b, t]`` where ``a`` indexes the coarse first component of the first
    momentum argument, ``b`` the coarse first component of the second and
    ``t`` the flattened transverse momentum of the first argument (the second
    argument carries the opposite transverse momentum).  In the half-sum /
    half-difference coordinates ``p = (q+q')/2``, ``k = (q-q')/2`` the same
    storage covers the checkerboard set; the pair identification
    ``(p, k) ~ (p+pi, k+pi)`` holds by construction.
    """

    def __init__(self, spec: LatticeSpec):
        spec = spec.resolved() if (spec.gamma is None or spec.epsilon is None) else spec
        spec.validate()
        self.spec = spec
        self.n = int(spec.n)
        self.m = int(spec.m_transverse)
        self.dim = int(spec.dim)
        self.nq = 2 * self.n            # coarse first-direction points
        self.np_dbl = 4 * self.n        # doubled-lattice points
        self.q_first = np.pi * np.arange(self.nq) / self.n
        self.p_dbl = np.pi * np.arange(self.np_dbl) / (2 * self.n)

        # Transverse grid: M points per direction, d-1 directions, flattened.
        m, dtr = self.m, self.dim - 1
        self.n_trans = m ** dtr
        if dtr == 0:
            self.k_trans = np.zeros((1, 0))
        else:
            per = 2.0 * np.pi * np.arange(m) / m
            combos = np.array(list(itertools.product(range(m), repeat=dtr)), dtype=int)
            self.k_trans = per[combos]
            self._trans_digits = combos
        self.t_neg = self._trans_map(lambda j: (-j) % self.m)

        # Quadrature weights: integral of 1 over a full coarse grid is 1.
        self.w_coarse = 1.0 / self.nq
        self.w_dbl = 1.0 / self.np_dbl
        self.w_trans = 1.0 / self.n_trans
        self.wk = self.w_coarse * self.w_trans

        # omega on the coarse grid (first component x transverse).
        kk = np.zeros((self.nq, self.n_trans, self.dim))
        kk[:, :, 0] = self.q_first[:, None]
        if dtr:
            kk[:, :, 1:] = self.k_trans[None, :, :]
        self.omega_q = dispersion(kk, spec.m2)          # shape (nq, n_trans)
        om2 = self.omega_q ** 2
        # omega(p,k)^2 = (omega(q)^2 + omega(q')^2) / 2 on the stored layout.
        self.omega_pk = np.sqrt(0.5 * (om2[:, None, :] + om2[None, :, :]))
        self.delta_omega2 = om2[:, None, :] - om2[None, :, :]

    # -- transverse index helpers -----------------------------------------
    def _trans_map(self, fn):
        if self.dim == 1:
            return np.zeros(1, dtype=int)
        digits = np.vectorize(fn)(self._trans_digits)
        radix = self.m ** np.arange(self.dim - 2, -1, -1)
        return (digits * radix).sum(axis=1)

    def t_add(self, t1, t2):
        """Index of the (mod 2*pi) sum of two transverse momenta."""
        if self.dim == 1:
            return np.broadcast_arrays(t1, t2)[0] * 0
        d1 = self._trans_digits[t1]
        d2 = self._trans_digits[t2]
        digits = (d1 + d2) % self.m
        radix = self.m ** np.arange(self.dim - 2, -1, -1)
        return (digits * radix).sum(axis=-1)

    def t_sub(self, t1, t2):
        return self.t_add(t1, self.t_neg[np.asarray(t2)])

    # -- dispersion identities ---------------------------------------------
    def delta_omega2_product(self):
        """4 sin(p) sin(k) (omega(q) + omega(q')) on the stored layout."""
        a = np.arange(self.nq)[:, None]
        b = np.arange(self.nq)[None, :]
        p = np.pi * (a + b) / (2 * self.n)
        k = np.pi * (a - b) / (2 * self.n)
        s = self.omega_q[:, None, :] + self.omega_q[None, :, :]
        return 4.0 * np.sin(p)[:, :, None] * np.sin(k)[:, :, None] * s

    # -- fiber bookkeeping ---------------------------------------------------
    def fiber_b(self, nidx: int):
        """Coarse indices ``b`` pairing with ``a = 0..2N-1`` on the fiber of
        the doubled-lattice momentum index ``nidx`` (p = pi*nidx/2N)."""
        return (nidx - np.arange(self.nq)) % self.nq

    def fiber_k_first(self, nidx: int):
        """First components of k along the fiber of ``nidx``, one per ``a``."""
        return np.pi * ((2 * np.arange(self.nq) - nidx) % self.np_dbl) / (2 * self.n)

    def describe(self):
        return {
            "n": self.n,
            "m_transverse": self.m,
            "dim": self.dim,
            "coarse_points": self.nq,
            "transverse_points": self.n_trans,
            "epsilon": self.spec.epsilon,
            "gamma": self.spec.gamma,
        }


def mass_gap_check(spec: LatticeSpec, grid: Grid | None = None):
    """Check that four-phonon sums with unbalanced signs stay off shell.

    Scans the grid range of ``omega``: for every sign pattern with nonzero
    sum the range of ``sum_i s_i omega(k_i)`` must exclude 0.  Returns
    ``(ok, margin)`` where ``margin`` is the smallest attainable ``|sum|``
    over those patterns (2*m2 - 4d when the grid reaches the band edges).
    """
    if grid is None:
        grid = Grid(spec.resolved())
    lo = float(grid.omega_q.min())
    hi = float(grid.omega_q.max())
    margin = math.inf
    for signs in itertools.product((1, -1), repeat=4):
        if sum(signs) == 0:
            continue
        top = sum(hi if s > 0 else -lo for s in signs)
        bot = sum(lo if s > 0 else -hi for s in signs)
        if bot <= 0.0 <= top:
            margin = 0.0
        else:
            margin = min(margin, min(abs(bot), abs(top)))
    return margin > 0.0, margin


def strong_pinning_margin(spec: LatticeSpec) -> float:
    """Diagnostic margin of the stricter pinning condition m2 > 2*max|rho|
    with rho(k) = omega(k) - m2 (max 4d).  Reported, not enforced."""
    return spec.m2 - 8.0 * spec.dim


def _on_lattice(x, spacing, tol=1e-9):
    r = x / spacing
    return abs(r - round(r)) <= tol


def to_pk(q, q_prime, n: int):
    """Half-sum / half-difference coordinates of a coarse momentum pair.

    First components must lie on the coarse lattice (spacing pi/N); the
    transverse components of the pair must be opposite.  Returns ``(p, k)``
    with ``p = (q+q')/2`` carrying only a first component and ``k`` a full
    vector.  The images ``(p, k)`` and ``(p+pi, k+pi)`` describe the same
    pair.
    """
    q = np.atleast_1d(np.asarray(q, dtype=float))
    qp = np.atleast_1d(np.asarray(q_prime, dtype=float))
    if q.shape != qp.shape:
        raise ValueError("q and q_prime must have the same shape")
    spacing = math.pi / n
    if not (_on_lattice(q[0], spacing) and _on_lattice(qp[0], spacing)):
        raise ValueError("first components must lie on the pi/N lattice")
    if q.size > 1 and not np.allclose((q[1:] + qp[1:]) % (2 * np.pi), 0.0, atol=1e-9):
        wrapped = (q[1:] + qp[1:] + np.pi) % (2 * np.pi) - np.pi
        if not np.allclose(wrapped, 0.0, atol=1e-9):
            raise ValueError("transverse components must be opposite")
    p = float((q[0] + qp[0]) / 2.0 % (2 * np.pi))
    k = np.concatenate([[(q[0] - qp[0]) / 2.0], q[1:]])
    k[0] %= 2 * np.pi
    return p, k


def from_pk(p, k, n: int):
    """Inverse of :func:`to_pk`; returns the coarse pair ``(q, q_prime)``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    p = float(p)
    spacing = math.pi / (2 * n)
    if not (_on_lattice(p, spacing) and _on_lattice(k[0], spacing)):
        raise ValueError("p and k must lie on the pi/2N lattice")
    if not _on_lattice(p + k[0], math.pi / n):
        raise ValueError("(p, k) is off the checkerboard: p + k must be coarse")
    q = np.concatenate([[(p + k[0]) % (2 * np.pi)], k[1:] % (2 * np.pi)])
    qp = np.concatenate([[(p - k[0]) % (2 * np.pi)], (-k[1:]) % (2 * np.pi)])
    return q, qp

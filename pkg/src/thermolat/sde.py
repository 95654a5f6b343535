"""Direct stochastic simulation of the boundary-driven oscillator lattice.

Langevin thermostats act on the layers x1 = 0 and x1 = N of a ring of 2N
layers; the bulk follows the Hamiltonian flow of the squared-stencil coupling
plus the quartic pinning.  The integrator is a Strang split (half-kick,
drift, half-kick) followed by an exact Ornstein-Uhlenbeck update of the
thermostatted momenta, so the harmonic equilibrium chain samples its Gibbs
state exactly up to O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .lattice import LatticeSpec


class SimulationBlowup(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float | None = None         # default 0.01 / max frequency
    steps: int = 100000
    burn_in: int = 20000
    seed: int = 12345
    thinning: int = 10
    blocks: int = 16
    noise_convention: str = "fdt"   # "fdt" | "paper-4gamma"
    blowup_bound: float = 1e6

    def validate(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 <= self.burn_in < self.steps:
            raise ValueError("need 0 <= burn_in < steps")
        if self.noise_convention not in ("fdt", "paper-4gamma"):
            raise ValueError(f"unknown noise convention {self.noise_convention!r}")
        return self


@dataclass
class PhaseState:
    q: np.ndarray
    p: np.ndarray

    @classmethod
    def zeros(cls, spec: LatticeSpec):
        shape = (2 * spec.n,) + (spec.m_transverse,) * (spec.dim - 1)
        return cls(np.zeros(shape), np.zeros(shape))


def default_dt(spec: LatticeSpec) -> float:
    omega_max = spec.m2 + 4.0 * spec.dim
    return 0.01 / omega_max


def stencil(q: np.ndarray, m2: float) -> np.ndarray:
    """(-Laplacian + m2) q with periodic wrap in every direction."""
    out = (2.0 * q.ndim + m2) * q
    for axis in range(q.ndim):
        out -= np.roll(q, 1, axis=axis) + np.roll(q, -1, axis=axis)
    return out


def force(q: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """-(stencil applied twice) q - lambda q^3."""
    out = -stencil(stencil(q, spec.m2), spec.m2)
    if spec.lam:
        out -= spec.lam * q * q * q
    return out


def total_energy(state: PhaseState, spec: LatticeSpec) -> float:
    sq = stencil(state.q, spec.m2)
    e = 0.5 * (state.p ** 2).sum() + 0.5 * (sq ** 2).sum()
    if spec.lam:
        e += 0.25 * spec.lam * (state.q ** 4).sum()
    return float(e)


@dataclass
class ObservableAccumulators:
    """Per-layer running sums in fixed-count blocks.

    Every accumulator is updated on the same sampling schedule; block means
    give standard errors that are robust to the sampling autocorrelation."""

    n_layers: int
    blocks: int
    offsets: tuple = (-2, -1, 0, 1, 2)
    count: np.ndarray = None
    kin: np.ndarray = None
    qp: dict = None
    qq: dict = None

    def __post_init__(self):
        self.count = np.zeros(self.blocks, dtype=np.int64)
        self.kin = np.zeros((self.blocks, self.n_layers))
        self.qp = {d: np.zeros((self.blocks, self.n_layers)) for d in self.offsets}
        self.qq = {d: np.zeros((self.blocks, self.n_layers)) for d in (0, 1, 2)}

    def update(self, state: PhaseState, block: int):
        q1 = state.q.reshape(self.n_layers, -1)
        p1 = state.p.reshape(self.n_layers, -1)
        nt = q1.shape[1]
        self.count[block] += 1
        self.kin[block] += (p1 ** 2).mean(axis=1)
        for d in self.offsets:
            self.qp[d][block] += (q1 * np.roll(p1, -d, axis=0)).mean(axis=1)
        for d in (0, 1, 2):
            self.qq[d][block] += (q1 * np.roll(q1, -d, axis=0)).mean(axis=1)

    # -- reductions ---------------------------------------------------------
    def _mean_se(self, sums: np.ndarray):
        ok = self.count > 0
        means = sums[ok] / self.count[ok, None]
        mean = means.mean(axis=0)
        if ok.sum() > 1:
            se = means.std(axis=0, ddof=1) / np.sqrt(ok.sum())
        else:
            se = np.full_like(mean, np.inf)
        return mean, se

    def kinetic_profile(self):
        """Layer profile of E p^2 with standard errors."""
        return self._mean_se(self.kin)

    def qp_mean(self, d: int):
        return self._mean_se(self.qp[d])

    def qq_mean(self, d: int):
        return self._mean_se(self.qq[d])

    def merge(self, other: "ObservableAccumulators"):
        """Associative merge of independently accumulated blocks."""
        if other.n_layers != self.n_layers or other.blocks != self.blocks:
            raise ValueError("incompatible accumulators")
        self.count += other.count
        self.kin += other.kin
        for d in self.offsets:
            self.qp[d] += other.qp[d]
        for d in (0, 1, 2):
            self.qq[d] += other.qq[d]
        return self


def current_profile(acc: ObservableAccumulators, spec: LatticeSpec):
    """Bond heat current per layer from the accumulated cross correlations.

    Builds J = (H - H^T)/2 from H(x, y) = E q_x p_y on the stencil offsets
    and contracts with the coupling stencil on the bond (x-1, x).  The
    per-block evaluation propagates the statistical error."""
    if spec.dim != 1:
        raise NotImplementedError("current profile implemented for dim 1")
    om0 = 2.0 + spec.m2
    nl = acc.n_layers
    ok = acc.count > 0
    per_block = []
    for b in np.nonzero(ok)[0]:
        h = {d: acc.qp[d][b] / acc.count[b] for d in acc.offsets}

        def J(dx, base):
            # J(base, base + dx) = (h_dx(base) - h_{-dx}(base+dx)) / 2
            return 0.5 * (h[dx][base] - h[-dx][(base + dx) % nl])

        x = np.arange(nl)
        jb = (2.0 * om0 * J(1, (x - 1) % nl)
              - J(2, (x - 2) % nl)
              - J(2, (x - 1) % nl)      # J(x-1, x+1)
              )
        per_block.append(jb)
    per_block = np.array(per_block)
    mean = per_block.mean(axis=0)
    if len(per_block) > 1:
        se = per_block.std(axis=0, ddof=1) / np.sqrt(len(per_block))
    else:
        se = np.full_like(mean, np.inf)
    return mean, se


def boundary_flux(acc: ObservableAccumulators, spec: LatticeSpec):
    """(gamma (T1 - P(0,0)), gamma (T2 - P(N,N))) with standard errors."""
    kin, se = acc.kinetic_profile()
    g = spec.gamma
    return ((g * (spec.t1 - kin[0]), g * se[0]),
            (g * (spec.t2 - kin[spec.n]), g * se[spec.n]))


def gibbs_start(spec: LatticeSpec, rng: np.random.Generator,
                temperature: float | None = None) -> PhaseState:
    """Sample the harmonic Gibbs state: momenta white at T, positions with
    covariance T / omega(k)^2 (sampled mode by mode through the FFT).

    On the symmetric ring the sector odd about the bath layers is untouched
    by the thermostats for lambda = 0, so starting it at the correct
    temperature matters."""
    if temperature is None:
        temperature = 0.5 * (spec.t1 + spec.t2)
    shape = (2 * spec.n,) + (spec.m_transverse,) * (spec.dim - 1)
    p = rng.standard_normal(shape) * np.sqrt(temperature)
    w = rng.standard_normal(shape)
    freqs = np.meshgrid(*[2.0 * np.pi * np.fft.fftfreq(s) for s in shape],
                        indexing="ij")
    om = 2.0 * sum(1.0 - np.cos(f) for f in freqs) + spec.m2
    q = np.fft.ifftn(np.fft.fftn(w) * (np.sqrt(temperature) / om)).real
    return PhaseState(q, p)


def run_simulation(spec: LatticeSpec, cfg: SimConfig,
                   state: PhaseState | None = None,
                   track_energy: bool = False):
    """Integrate the thermostatted dynamics and accumulate observables.

    Identical seed and config give bit-identical accumulators.  Blow-up of
    any coordinate beyond the configured bound raises SimulationBlowup."""
    spec = spec.resolved()
    cfg.validate()
    dt = cfg.dt if cfg.dt is not None else default_dt(spec)
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = gibbs_start(spec, rng)
    q, p = state.q, state.p

    nl = 2 * spec.n
    acc = ObservableAccumulators(n_layers=nl, blocks=cfg.blocks)
    n_samples = (cfg.steps - cfg.burn_in) // cfg.thinning
    block_len = max(n_samples // cfg.blocks, 1)

    gamma = spec.gamma
    therm_layers = (0, spec.n)
    c_ou = np.exp(-gamma * dt)
    factor = 2.0 if cfg.noise_convention == "paper-4gamma" else 1.0
    sigma = {x: np.sqrt(factor * (spec.t1 if x == 0 else spec.t2)
                        * (1.0 - c_ou ** 2)) for x in therm_layers}
    trans_shape = q.shape[1:]

    energies = [] if track_energy else None
    f = force(q, spec)
    sample_idx = 0
    for step in range(cfg.steps):
        p += 0.5 * dt * f
        q += dt * p
        f = force(q, spec)
        p += 0.5 * dt * f
        if gamma > 0:
            for x in therm_layers:
                noise = rng.standard_normal(trans_shape) if trans_shape else rng.standard_normal()
                p[x] = c_ou * p[x] + sigma[x] * noise
        if step >= cfg.burn_in and (step - cfg.burn_in) % cfg.thinning == 0:
            if np.abs(p).max() > cfg.blowup_bound or np.abs(q).max() > cfg.blowup_bound:
                raise SimulationBlowup(
                    f"coordinate exceeded {cfg.blowup_bound:g} at step {step}")
            block = min(sample_idx // block_len, cfg.blocks - 1)
            acc.update(PhaseState(q, p), block)
            sample_idx += 1
            if track_energy:
                energies.append(total_energy(PhaseState(q, p), spec))
    return acc, PhaseState(q, p), (np.array(energies) if track_energy else None)


def run_replicas(spec: LatticeSpec, cfg: SimConfig, replicas: int):
    """Independent replicas merged into one accumulator.

    Replicas are essential for the harmonic ring: the thermostat-blind
    sector freezes its per-realization fluctuations, which only average out
    across seeds."""
    merged = None
    for r in range(replicas):
        rcfg = SimConfig(dt=cfg.dt, steps=cfg.steps, burn_in=cfg.burn_in,
                         seed=cfg.seed + 1000003 * r, thinning=cfg.thinning,
                         blocks=cfg.blocks, noise_convention=cfg.noise_convention,
                         blowup_bound=cfg.blowup_bound)
        acc, _, _ = run_simulation(spec, rcfg)
        merged = acc if merged is None else _stack_blocks(merged, acc)
    return merged


def _stack_blocks(a: ObservableAccumulators, b: ObservableAccumulators):
    """Concatenate block sets of two accumulators (order-insensitive merge)."""
    out = ObservableAccumulators(n_layers=a.n_layers, blocks=a.blocks + b.blocks,
                                 offsets=a.offsets)
    out.count = np.concatenate([a.count, b.count])
    out.kin = np.concatenate([a.kin, b.kin], axis=0)
    for d in out.offsets:
        out.qp[d] = np.concatenate([a.qp[d], b.qp[d]], axis=0)
    for d in (0, 1, 2):
        out.qq[d] = np.concatenate([a.qq[d], b.qq[d]], axis=0)
    return out

"""Command-line entry point: experiment suites with CSV/manifest artifacts.

Exit codes: 0 all enabled checks pass, 1 check failure, 2 configuration
error, 3 numerical failure (divergence or blow-up).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .lattice import ConfigError, Grid, LatticeSpec, mass_gap_check, strong_pinning_margin
from .fields import CorrelationField, slow_profile
from .collision import (KernelConfig, assemble_N, default_kernel_config,
                        energy_projection, gibbs_state, theta_projection)
from .linop import (build_Lp, build_projector, multiplier_bounds, offdiag_norms,
                    quadratic_forms, zero_mode_residuals, hoelder_in_p,
                    kernel_integrability)
from .closure import (FiberCache, RefineDivergence, heat_balance,
                      solve_conservation_zeroth, stationary_residual,
                      residual_norms, refine, zeroth_state, currents_from_J)
from .sde import (SimConfig, SimulationBlowup, boundary_flux, current_profile,
                  run_replicas, run_simulation)
from .manifest import RunManifest, content_hash
from . import report as rpt

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def spec_from_config(cfg: dict) -> LatticeSpec:
    lat = dict(cfg.get("lattice", {}))
    known = {"n", "m_transverse", "dim", "m2", "lambda", "gamma", "t1", "t2",
             "epsilon"}
    unknown = set(lat) - known
    if unknown:
        raise ConfigError(f"unknown lattice fields: {sorted(unknown)}")
    if "lambda" in lat:
        lat["lam"] = lat.pop("lambda")
    spec = LatticeSpec(n=lat.get("n", 4), m_transverse=lat.get("m_transverse", 1),
                       dim=lat.get("dim", 1), m2=lat.get("m2", 10.0),
                       lam=lat.get("lam", 0.0), gamma=lat.get("gamma"),
                       t1=lat.get("t1", 1.0), t2=lat.get("t2", 1.0),
                       epsilon=lat.get("epsilon"))
    spec.validate()
    return spec.resolved(alpha=cfg.get("alpha", 0.5),
                         epsilon_factor=cfg.get("epsilon_factor", 1.0))


def kernel_config(grid: Grid, cfg: dict) -> KernelConfig:
    kc = dict(cfg.get("kernel", {}))
    return default_kernel_config(
        grid,
        epsilon=kc.get("epsilon", grid.spec.epsilon),
        quadrature=kc.get("quadrature", "grid"),
        samples=kc.get("samples", 20000),
        seed=kc.get("seed", 0),
        prefactor=kc.get("prefactor", True),
        coupling=kc.get("coupling", "literal"),
    )


def sim_config(cfg: dict, seed_override=None) -> SimConfig:
    sc = dict(cfg.get("sim", {}))
    if seed_override is not None:
        sc["seed"] = seed_override
    return SimConfig(
        dt=sc.get("dt"), steps=sc.get("steps", 200000),
        burn_in=sc.get("burn_in", 20000), seed=sc.get("seed", 12345),
        thinning=sc.get("thinning", 10), blocks=sc.get("blocks", 4),
        noise_convention=sc.get("noise_convention", "fdt"),
        blowup_bound=sc.get("blowup_bound", 1e6),
    ).validate()


def _grid_summary(grid: Grid):
    return grid.describe()


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def suite_simulate(cfg, outdir, args):
    spec = spec_from_config(cfg)
    scfg = sim_config(cfg, args.seed)
    replicas = cfg.get("sim", {}).get("replicas", 1)
    man = RunManifest("simulate", cfg, seed=scfg.seed,
                      grid_summary={"n": spec.n, "dim": spec.dim,
                                    "m_transverse": spec.m_transverse}).start()
    if replicas > 1:
        acc = run_replicas(spec, scfg, replicas)
    else:
        acc, _, _ = run_simulation(spec, scfg)
    kin, kin_se = acc.kinetic_profile()
    if spec.dim == 1:
        j, j_se = current_profile(acc, spec)
    else:
        j = np.zeros_like(kin)
        j_se = np.full_like(kin, np.nan)
    rows = [(x, kin[x], kin_se[x], j[x], j_se[x]) for x in range(len(kin))]
    path = write_csv(os.path.join(outdir, "profile.csv"),
                     ["x1", "kinetic_T", "stderr", "current_j", "stderr_j"], rows)
    man.artifacts.append(os.path.basename(path))
    (f1, f1se), (f2, f2se) = boundary_flux(acc, spec)
    balance = abs(f1 + f2) <= 3.0 * np.hypot(f1se, f2se) + 1e-12
    man.record("boundary_flux_balance", bool(balance),
               {"flux1": f1, "flux2": f2, "se": float(np.hypot(f1se, f2se))})
    write_csv(os.path.join(outdir, "fluxes.csv"),
              ["which", "flux", "stderr"],
              [("layer0", f1, f1se), ("layerN", f2, f2se)])
    man.artifacts.append("fluxes.csv")
    if args.plots:
        man.artifacts.append(os.path.basename(rpt.plot_profile(
            np.arange(len(kin)), {"simulated": (kin, kin_se)}, outdir,
            "profile.png", title="kinetic temperature")))
        man.artifacts.append(os.path.basename(
            rpt.plot_current(np.arange(len(kin)), j, j_se, outdir)))
    return man


def suite_kernel(cfg, outdir, args):
    spec = spec_from_config(cfg)
    grid = Grid(spec)
    kcfg = kernel_config(grid, cfg)
    man = RunManifest("kernel", cfg, seed=kcfg.seed,
                      grid_summary=_grid_summary(grid)).start()
    ok, margin = mass_gap_check(spec, grid)
    man.record("mass_gap", ok, {"margin": margin,
                                "strong_pinning_margin": strong_pinning_margin(spec)})
    if args.check_lemma71:
        rng = np.random.default_rng(kcfg.seed)
        n_fields = cfg.get("kernel", {}).get("lemma71_fields", 3)
        worst = 0.0
        rows = []
        for i in range(n_fields):
            field = CorrelationField.random(grid, rng)
            _, n22, diag = assemble_N(field, kcfg)
            proj = energy_projection(n22, grid)
            scale = max(np.abs(n22).max(), 1e-300)
            rel = float(np.abs(proj).max() / scale)
            worst = max(worst, rel)
            for nidx in range(grid.np_dbl):
                rows.append((i, grid.p_dbl[nidx], proj[nidx].real, scale))
        write_csv(os.path.join(outdir, "energy_projection.csv"),
                  ["field_index", "p", "projection", "field_scale"], rows)
        man.artifacts.append("energy_projection.csv")
        man.record("energy_conservation_projection", worst <= 1e-10,
                   {"worst_relative": worst, "fields": n_fields})
    if args.check_gibbs is not None:
        t_val, a_val = args.check_gibbs
        rows = []
        prev = None
        ratios = []
        for level, factor in enumerate((1.0, 0.5)):
            kc = default_kernel_config(grid, epsilon=kcfg.epsilon * factor,
                                       prefactor=kcfg.prefactor,
                                       coupling=kcfg.coupling)
            st = gibbs_state(t_val, a_val, grid, kc)
            _, r2, r3, _ = stationary_residual(st, kc)
            r2m, r3m = float(np.abs(r2).max()), float(np.abs(r3).max())
            rows.append((kc.epsilon, r2m, r3m))
            if prev is not None:
                ratios.append(prev / max(r3m, 1e-300))
            prev = r3m
        write_csv(os.path.join(outdir, "gibbs_residuals.csv"),
                  ["epsilon", "residual_r2", "residual_r3"], rows)
        man.artifacts.append("gibbs_residuals.csv")
        man.record("gibbs_residual_decreases", all(r >= 1.5 for r in ratios),
                   {"ratios": ratios})
    if args.theta:
        rng = np.random.default_rng(kcfg.seed + 1)
        field = CorrelationField.random(grid, rng)
        _, n22, _ = assemble_N(field, kcfg)
        th = theta_projection(n22, grid)
        rows = [(grid.q_first[m], th[m].real) for m in range(grid.nq)]
        write_csv(os.path.join(outdir, "theta.csv"), ["p", "theta"], rows)
        man.artifacts.append("theta.csv")
        if args.plots:
            man.artifacts.append(os.path.basename(rpt.plot_projection_spectrum(
                grid.q_first, th.real, outdir, "theta.png", ylabel="theta")))
    return man


def suite_linop(cfg, outdir, args):
    spec = spec_from_config(cfg)
    grid = Grid(spec)
    kcfg = kernel_config(grid, cfg)
    t0 = cfg.get("linop", {}).get("t0", 0.5 * (spec.t1 + spec.t2))
    man = RunManifest("linop", cfg, seed=kcfg.seed,
                      grid_summary=_grid_summary(grid)).start()
    blocks0 = build_Lp(grid, 0, t0, kcfg)
    if args.zero_modes:
        r2, r3, r4 = zero_mode_residuals(blocks0)
        o12, o21 = offdiag_norms(blocks0)
        write_csv(os.path.join(outdir, "zero_modes.csv"),
                  ["quantity", "value"],
                  [("soft_energy_direction", r2), ("soft_number_direction", r3),
                   ("control_direction", r4), ("offdiag_12", o12),
                   ("offdiag_21", o21)])
        man.artifacts.append("zero_modes.csv")
        man.record("zero_modes", bool(r2 <= 1e-3 * r4 and o12 <= 1e-10
                                      and o21 <= 1e-10),
                   {"r2": r2, "r3": r3, "r4": r4, "off": [o12, o21]})
    if args.signs:
        proj = build_projector(grid, 0)
        rng = np.random.default_rng(kcfg.seed + 2)
        G = blocks0.fiber_size
        from .linop import parity_projectors
        p_even, p_odd = parity_projectors(grid, 0)
        probes_j = [p_odd @ rng.standard_normal(G) for _ in range(5)]
        probes_q = [p_even @ rng.standard_normal(G) for _ in range(5)]
        qj, qq = quadratic_forms(blocks0, probes_j, probes_q, proj)
        write_csv(os.path.join(outdir, "quadratic_forms.csv"),
                  ["probe", "flux_form", "position_form"],
                  [(i, qj[i], qq[i]) for i in range(len(qj))])
        man.artifacts.append("quadratic_forms.csv")
        man.record("sign_structure",
                   bool(max(qj) < 0 < min(qq)), {"flux": qj, "position": qq})
    if args.sweep is not None:
        lo, hi, num = args.sweep
        idxs = sorted({int(round(v)) % grid.nq
                       for v in np.linspace(lo, hi, int(num))})
        blist = [build_Lp(grid, n, t0, kcfg) for n in idxs]
        mb = multiplier_bounds(blist)
        rows = []
        for bl in blist:
            r2, r3, r4 = zero_mode_residuals(bl)
            rows.append((bl.nidx, np.pi * bl.nidx / (2 * grid.n), r2, r3, r4))
        write_csv(os.path.join(outdir, "sweep.csv"),
                  ["nidx", "p", "soft_energy", "soft_number", "control"], rows)
        man.artifacts.append("sweep.csv")
        if len(blist) >= 2:
            dp, diffs = hoelder_in_p(blist[0], blist[1])
            man.record("multiplier_floor", mb["floor"] > 0,
                       mb | {"hoelder_step": dp, "hoelder_diffs": diffs,
                             "kernel_mass": kernel_integrability(blist[0])})
        else:
            man.record("multiplier_floor", mb["floor"] > 0, mb)
    return man


def suite_closure(cfg, outdir, args):
    spec = spec_from_config(cfg)
    grid = Grid(spec)
    kcfg = kernel_config(grid, cfg)
    ccfg = cfg.get("closure", {})
    t0 = ccfg.get("t0", 0.5 * (spec.t1 + spec.t2))
    man = RunManifest("closure", cfg, seed=kcfg.seed,
                      grid_summary=_grid_summary(grid)).start()
    cache = FiberCache(grid, kcfg, t0=t0, b_const=ccfg.get("b_const", 5.0))
    sol = solve_conservation_zeroth(cache)
    state = zeroth_state(cache, sol, kcfg)
    trace = None
    if args.refine:
        state, trace = refine(state, cache, kcfg,
                              damping=ccfg.get("damping", 1.0),
                              tol=ccfg.get("tol", 1e-10),
                              max_iter=ccfg.get("max_iter", 30))
        rows = [(i, trace.residuals[i], trace.projected[i])
                for i in range(trace.iterations)]
        write_csv(os.path.join(outdir, "refine_trace.csv"),
                  ["iteration", "residual", "projected_residual"], rows)
        man.artifacts.append("refine_trace.csv")
        man.record("refine_converged", trace.converged,
                   {"iterations": trace.iterations,
                    "final": trace.projected[-1] if trace.projected else None})
        if args.plots:
            man.artifacts.append(os.path.basename(
                rpt.plot_convergence_trace(trace, outdir)))
    t_pred = slow_profile(state.p, grid).real
    a_pred = sol.profiles.imbalance_layers()
    j_pred = sol.currents.j_layers()
    jp_pred = sol.currents.jprime_layers()
    rows = [(x, t_pred[x], a_pred[x], j_pred[x], jp_pred[x])
            for x in range(grid.nq)]
    write_csv(os.path.join(outdir, "profile.csv"),
              ["x1", "T_pred", "A_pred", "j_pred", "jprime_pred"], rows)
    man.artifacts.append("profile.csv")
    cond = sol.conductivity
    kappa_entries = [
        [[[float(np.real(cond.kappa[m, i, j])), float(np.imag(cond.kappa[m, i, j]))]
          for j in (0, 1)] for i in (0, 1)]
        for m in range(grid.nq)
    ]
    with open(os.path.join(outdir, "kappa.json"), "w", encoding="utf-8") as fh:
        json.dump({"kappa0": cond.kappa0.tolist(), "kappa": kappa_entries,
                   "beta0": cond.beta0, "beta1": cond.beta1,
                   "beta2": cond.beta2, "det0": cond.det0}, fh, indent=2)
        fh.write("\n")
    man.artifacts.append("kappa.json")
    r1, r2, r3, _ = stationary_residual(state, kcfg)
    norms = residual_norms(r1, r2, r3, grid)
    man.record("residual_reported", True, norms)
    if args.compare_sde:
        rows = _compare_profiles(args.compare_sde, t_pred, grid)
        write_csv(os.path.join(outdir, "compare.csv"),
                  ["x1", "T_sde", "T_closure", "rel_diff"], rows)
        man.artifacts.append("compare.csv")
    if args.plots:
        man.artifacts.append(os.path.basename(rpt.plot_profile(
            np.arange(grid.nq), {"closure": (t_pred, None)}, outdir,
            "profile.png", title="predicted kinetic temperature")))
    return man


def _read_profile_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    cols = {h: np.array([float(r[i]) for r in rows])
            for i, h in enumerate(header)}
    return cols


def _compare_profiles(sde_dir, t_closure, grid):
    cols = _read_profile_csv(os.path.join(sde_dir, "profile.csv"))
    t_sde = cols["kinetic_T"]
    rows = []
    for x in range(min(len(t_sde), len(t_closure))):
        rel = abs(t_sde[x] - t_closure[x]) / max(abs(t_sde[x]), 1e-300)
        rows.append((x, t_sde[x], t_closure[x], rel))
    return rows


def suite_compare(cfg, outdir, args):
    man = RunManifest("compare", cfg).start()
    sde_cols = _read_profile_csv(os.path.join(args.sde_dir, "profile.csv"))
    clo_cols = _read_profile_csv(os.path.join(args.closure_dir, "profile.csv"))
    t_sde, t_clo = sde_cols["kinetic_T"], clo_cols["T_pred"]
    nl = min(len(t_sde), len(t_clo))
    rows = []
    worst_bulk = 0.0
    n_half = nl // 2
    for x in range(nl):
        rel = abs(t_sde[x] - t_clo[x]) / max(abs(t_sde[x]), 1e-300)
        bulk = x not in (0, n_half)
        if bulk:
            worst_bulk = max(worst_bulk, rel)
        rows.append((x, t_sde[x], t_clo[x], rel))
    write_csv(os.path.join(outdir, "profile_diff.csv"),
              ["x1", "T_sde", "T_closure", "rel_diff"], rows)
    man.artifacts.append("profile_diff.csv")
    tol = cfg.get("compare", {}).get("bulk_rel_tol", 0.10)
    man.record("bulk_profile_agreement", worst_bulk <= tol,
               {"worst_bulk_rel": worst_bulk, "tol": tol})
    if args.plots:
        man.artifacts.append(os.path.basename(rpt.plot_profile(
            np.arange(nl), {"simulation": (t_sde[:nl], None),
                            "closure": (t_clo[:nl], None)},
            outdir, "profile_diff.png")))
    return man


def suite_report(cfg, outdir, args):
    """Re-render figures from the CSV artifacts present in the directory."""
    man = RunManifest("report", cfg).start()
    prof = os.path.join(outdir, "profile.csv")
    if os.path.exists(prof):
        cols = _read_profile_csv(prof)
        x = cols.get("x1")
        if "kinetic_T" in cols:
            man.artifacts.append(os.path.basename(rpt.plot_profile(
                x, {"simulated": (cols["kinetic_T"], cols.get("stderr"))},
                outdir, "profile.png")))
            if "current_j" in cols:
                man.artifacts.append(os.path.basename(rpt.plot_current(
                    x, cols["current_j"], cols.get("stderr_j"), outdir)))
        elif "T_pred" in cols:
            man.artifacts.append(os.path.basename(rpt.plot_profile(
                x, {"closure": (cols["T_pred"], None)}, outdir, "profile.png")))
    return man


SUITES = {
    "simulate": suite_simulate,
    "kernel": suite_kernel,
    "linop": suite_linop,
    "closure": suite_closure,
    "compare": suite_compare,
    "report": suite_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="thermolat",
                                 description="Boundary-driven anharmonic "
                                             "lattice laboratory")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (also via THERMOLAT_THREADS)")
    sub = ap.add_subparsers(dest="suite", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--plots", action="store_true")
        p.add_argument("--no-timestamps", action="store_true")

    common(sub.add_parser("simulate"))
    pk = sub.add_parser("kernel")
    common(pk)
    pk.add_argument("--check-lemma71", action="store_true")
    pk.add_argument("--check-gibbs", nargs=2, type=float, default=None,
                    metavar=("T", "A"))
    pk.add_argument("--theta", action="store_true")
    pl = sub.add_parser("linop")
    common(pl)
    pl.add_argument("--zero-modes", action="store_true")
    pl.add_argument("--signs", action="store_true")
    pl.add_argument("--sweep", nargs=3, type=float, default=None,
                    metavar=("NIDX_MIN", "NIDX_MAX", "COUNT"))
    pc = sub.add_parser("closure")
    common(pc)
    pc.add_argument("--zeroth-order", action="store_true")
    pc.add_argument("--refine", action="store_true")
    pc.add_argument("--compare-sde", default=None)
    pcmp = sub.add_parser("compare")
    common(pcmp)
    pcmp.add_argument("--sde-dir", required=True)
    pcmp.add_argument("--closure-dir", required=True)
    common(sub.add_parser("report"))
    pa = sub.add_parser("all")
    common(pa)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads or os.environ.get("THERMOLAT_THREADS")
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(threads))
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(threads))
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.setdefault("sim", {})["seed"] = args.seed
            cfg.setdefault("kernel", {})["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        if args.suite == "all":
            mans = []
            for name in ("kernel", "linop", "closure"):
                sub_args = build_parser().parse_args(
                    [name, "--out", os.path.join(args.out, name)]
                    + (["--config", args.config] if args.config else [])
                    + (["--plots"] if args.plots else [])
                    + {"kernel": ["--check-lemma71", "--theta"],
                       "linop": ["--zero-modes", "--signs"],
                       "closure": ["--zeroth-order"]}[name])
                os.makedirs(sub_args.out, exist_ok=True)
                man = SUITES[name](cfg, sub_args.out, sub_args)
                man.finish(not args.no_timestamps)
                man.write(os.path.join(sub_args.out, "manifest.json"))
                mans.append(man)
            ok = all(m.all_passed for m in mans)
            return EXIT_OK if ok else EXIT_CHECK
        man = SUITES[args.suite](cfg, args.out, args)
        man.finish(not args.no_timestamps)
        man.write(os.path.join(args.out, "manifest.json"))
        return EXIT_OK if man.all_passed else EXIT_CHECK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationBlowup, RefineDivergence) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

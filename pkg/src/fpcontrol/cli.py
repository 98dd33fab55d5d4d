"""Command-line front end.

Every verb reads an INI config (plus a few overrides), runs the matching
library stage, writes its artifacts under the configured output directory,
and exits 0 only when every certificate attached to the stage passed.
"""

import argparse
import sys

import numpy as np

from . import experiments as ex
from . import shapes
from .config import (CONTROLLERS, ExperimentConfig, ensure_outdir,
                     load_config, save_config)
from .operators import export_matrix_market


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", help="INI experiment file")
    p.add_argument("--nx1", type=int, help="grid points along x1")
    p.add_argument("--nx2", type=int, help="grid points along x2")
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--scenario")
    p.add_argument("--d", type=int, help="controlled-cluster size")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--outdir", "-o")
    p.add_argument("--no-cache", action="store_true",
                   help="ignore and do not write the assembly cache")


def _config_from(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for name in ("nx1", "nx2", "controller", "scenario", "d",
                 "t_end", "tol", "seed", "outdir"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    cfg.validate()
    return cfg


def _report(certs: dict, log=print) -> int:
    width = max((len(n) for n in certs), default=10)
    ok = True
    for name, c in certs.items():
        status = "pass" if c.passed else "FAIL"
        log(f"  {name:<{width}s}  {status}  value {c.value:.3e}  "
            f"threshold {c.threshold:.3e}" + (f"  ({c.note})" if c.note else ""))
        ok &= c.passed
    return 0 if ok else 1


def cmd_assemble(args) -> int:
    cfg = _config_from(args)
    asm = ex.assemble_system(cfg, use_cache=not args.no_cache)
    out = ensure_outdir(cfg)
    export_matrix_market(asm.a, out / "generator.mtx")
    export_matrix_market(asm.nop, out / "control_operator.mtx")
    np.savetxt(out / "stationary_state.csv", asm.rho_inf, delimiter=",")
    asm.sys.save(out / "reduced_system.npz")
    print(f"assembled {cfg.nx1}x{cfg.nx2} ({asm.grid.k} nodes), "
          f"delta = {asm.delta:.4f}"
          + (", from cache" if asm.from_cache else ""))
    return _report(asm.certificates)


def cmd_spectrum(args) -> int:
    cfg = _config_from(args)
    asm = ex.assemble_system(cfg, use_cache=not args.no_cache)
    out = ensure_outdir(cfg)
    asm.spectrum.to_csv(out / "spectrum.csv")
    for i, lam in enumerate(asm.spectrum.eigenvalues):
        print(f"  lambda_{i + 1} = {lam.real:+.6f} {lam.imag:+.6f}i")
    print(f"  delta (d = {cfg.d}) = {asm.delta:.6f}")
    return _report({"spectral_residual": asm.certificates["spectral_residual"]})


def cmd_shape(args) -> int:
    cfg = _config_from(args)
    asm = ex.assemble_system(cfg, use_cache=not args.no_cache)
    out = ensure_outdir(cfg)
    shapes.shape_to_csv(asm.alpha, asm.grid, out / "alpha.csv")
    print(asm.hautus)
    print(f"wrote {out / 'alpha.csv'}")
    return _report({"hautus": asm.certificates["hautus"]})


def cmd_solve_riccati(args) -> int:
    cfg = _config_from(args)
    if cfg.controller not in ("riccati", "riccati_rotated_alpha"):
        cfg.controller = "riccati"
    asm = ex.assemble_system(cfg, use_cache=not args.no_cache)
    out = ensure_outdir(cfg)
    np.savez_compressed(out / "riccati_solution.npz", pihat=asm.pihat,
                        gain=asm.gain, delta=np.array([asm.delta]))
    certs = {k: v for k, v in asm.certificates.items()
             if k in ("care_residual", "closed_loop_abscissa")}
    if args.lifted_check:
        certs.update(ex.lifted_riccati_certificates(asm))
    print(f"reduced dimension {asm.sys.dim}, delta = {asm.delta:.4f}")
    return _report(certs)


def cmd_solve_lyapunov(args) -> int:
    cfg = _config_from(args)
    cfg.controller = "lyapunov"
    asm = ex.assemble_system(cfg, use_cache=not args.no_cache)
    out = ensure_outdir(cfg)
    np.savez_compressed(out / "lyapunov_solution.npz", s=asm.upsilon_s,
                        mu=np.array([asm.mu]))
    certs = {k: v for k, v in asm.certificates.items()
             if k in ("lyapunov_residual", "mu_margin", "v_positive")}
    print(f"mu = {asm.mu:.4f} on the {asm.sys.dim}-dimensional subsystem")
    return _report(certs)


def cmd_simulate(args) -> int:
    cfg = _config_from(args)
    bundle = ex.run_experiment(cfg, use_cache=not args.no_cache)
    path = ex.write_bundle(bundle)
    ttp = bundle.time_to_fraction()
    print(f"{cfg.scenario} / {cfg.controller}: "
          f"time to 1% = {ttp:.4f}" if np.isfinite(ttp)
          else f"{cfg.scenario} / {cfg.controller}: did not reach 1%")
    if bundle.diag is not None:
        print(f"  {bundle.diag}")
    print(f"  wrote {path}")
    return _report(bundle.certificates)


def cmd_compare(args) -> int:
    cfg = _config_from(args)
    controllers = [c.strip() for c in args.controllers.split(",")]
    for c in controllers:
        if c not in CONTROLLERS:
            raise SystemExit(f"unknown controller {c!r}")
    bundles = []
    code = 0
    for controller in controllers:
        run_cfg = ExperimentConfig(**{**cfg.__dict__, "controller": controller})
        bundle = ex.run_experiment(run_cfg, use_cache=not args.no_cache)
        ex.write_bundle(bundle, tag=f"{run_cfg.scenario}_{controller}")
        bundles.append(bundle)
        if not bundle.all_passed:
            code = 1
    comp = ex.compare_runs(bundles)
    out = ensure_outdir(cfg)
    comp.to_csv(out / f"comparison_{cfg.scenario}.csv")
    print(f"scenario {cfg.scenario}, grid {cfg.nx1}x{cfg.nx2}:")
    for name in comp.curves:
        rate = comp.fitted_rates[name]
        ttp = comp.time_to_1pct[name]
        print(f"  {name:<24s} time to 1% "
              + (f"{ttp:8.4f}" if np.isfinite(ttp) else "   never")
              + (f"   fitted rate {rate:.4f}" if np.isfinite(rate) else ""))
    print(f"  wrote {out / f'comparison_{cfg.scenario}.csv'}")
    return code


def cmd_reproduce(args) -> int:
    summary = ex.reproduce_paper(
        outdir=args.outdir or "runs/reproduction",
        nx1=args.nx1 or 48, nx2=args.nx2 or 32,
        t_end=args.t_end or 8.0, tol=args.tol or 1e-8,
        seed=args.seed or 0, use_cache=not args.no_cache,
        check_reference_delta=not args.skip_reference)
    ok = all(r["all_certificates_passed"] for r in summary["runs"].values())
    if "reference_delta" in summary:
        ok &= summary["reference_delta"]["within_10pct"]
    return 0 if ok else 1


def cmd_init_config(args) -> int:
    cfg = ExperimentConfig()
    save_config(cfg, args.path)
    print(f"wrote template config to {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fpcontrol",
        description="Feedback stabilization of Fokker-Planck equations: "
                    "assembly, spectra, shapes, matrix equations, simulation.")
    sub = p.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("assemble", help="build operators and the reduced system")
    _add_common(sp)
    sp.set_defaults(func=cmd_assemble)

    sp = sub.add_parser("spectrum", help="leading eigenvalues and the shift")
    _add_common(sp)
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("shape", help="synthesize the control shape")
    _add_common(sp)
    sp.set_defaults(func=cmd_shape)

    sp = sub.add_parser("solve-riccati", help="reduced Bernoulli equation")
    _add_common(sp)
    sp.add_argument("--lifted-check", action="store_true",
                    help="also certify the lifted full-space solution (dense)")
    sp.set_defaults(func=cmd_solve_riccati)

    sp = sub.add_parser("solve-lyapunov", help="rate-certified Lyapunov equation")
    _add_common(sp)
    sp.set_defaults(func=cmd_solve_lyapunov)

    sp = sub.add_parser("simulate", help="integrate the nonlinear closed loop")
    _add_common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="run several controllers on one scenario")
    _add_common(sp)
    sp.add_argument("--controllers", default="none,riccati,lyapunov",
                    help="comma-separated controller list")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("reproduce-paper",
                        help="re-run the headline study end to end")
    _add_common(sp)
    sp.add_argument("--skip-reference", action="store_true",
                    help="skip the fine-grid shift check")
    sp.set_defaults(func=cmd_reproduce)

    sp = sub.add_parser("init-config", help="write a template INI file")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

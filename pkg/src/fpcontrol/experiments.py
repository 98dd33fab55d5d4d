"""Experiment orchestration: pipeline, caching, certificates, comparisons.

A run walks grid -> operators -> reduction -> spectrum -> shape -> matrix
equation -> simulation -> diagnostics, collecting a certificate for every
stage-level guarantee along the way.  Assembled systems and matrix-equation
solutions are cached content-addressed by the config hash.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import closed_loop as cl
from . import matrix_equations as me
from . import shapes
from .config import ExperimentConfig, ensure_outdir
from .grid import (build_grid, cell_volumes, h1_gram, make_potential,
                   phi_field, stationary_state, weighted_norm)
from .linop import LinOp, as_matrix
from .operators import (assemble_adjoint_generator, assemble_control_operator,
                        control_vector, discrete_stationary,
                        generator_from_adjoint)
from .reduction import build_R, reduce_system, verify_identities
from .spectral import choose_delta, choose_mu, leading_eigenpairs, mu_probe_margin


@dataclass
class Certificate:
    value: float
    threshold: float
    passed: bool
    note: str = ""

    @staticmethod
    def leq(value: float, threshold: float, note: str = "") -> "Certificate":
        return Certificate(float(value), float(threshold),
                           bool(value <= threshold), note)

    @staticmethod
    def geq(value: float, threshold: float, note: str = "") -> "Certificate":
        return Certificate(float(value), float(threshold),
                           bool(value >= threshold), note)


@dataclass
class AssembledSystem:
    cfg: ExperimentConfig
    grid: object
    potential: object
    a: LinOp
    nop: LinOp
    rho_inf: np.ndarray
    rmap: object
    spectrum: object
    delta: float
    alpha: np.ndarray
    b: np.ndarray
    sys: object
    hautus: object
    mu: float = None
    pihat: np.ndarray = None
    gain: np.ndarray = None
    upsilon_s: np.ndarray = None
    certificates: dict = field(default_factory=dict)
    from_cache: bool = False


def _spectral_count(cfg: ExperimentConfig) -> int:
    return max(6, cfg.d + 2)


def assemble_system(cfg: ExperimentConfig, use_cache: bool = True) -> AssembledSystem:
    """Run (or reload) everything up to and including the matrix equations."""
    cfg.validate()
    cache_path = Path(cfg.outdir) / "cache" / f"{cfg.system_digest()}.npz"
    if use_cache and cache_path.exists():
        asm = _load_cached(cfg, cache_path)
        if asm is not None:
            return asm

    g = build_grid(cfg.nx1, cfg.nx2, cfg.bounds)
    pot = make_potential(cfg.potential, cfg.nu, **cfg.potential_params)
    astar = assemble_adjoint_generator(pot, g)
    a = generator_from_adjoint(astar)
    rho_inf = discrete_stationary(a)
    rmap = build_R(rho_inf, g)
    sd = leading_eigenpairs(a, _spectral_count(cfg))
    delta = choose_delta(sd, cfg.d, override=cfg.delta_override)

    elliptic = shapes.elliptic_operator(rho_inf, g)
    if cfg.controller == "lyapunov":
        rhs = shapes.lyapunov_rhs(sd)
    else:
        rhs = shapes.riccati_rhs(sd, cfg.d, phi_field(pot, g), rmap)
    alpha = shapes.solve_shape(elliptic, rhs)
    if cfg.controller == "riccati_rotated_alpha":
        alpha = shapes.rotate_shape(alpha, g)
    nop = assemble_control_operator(alpha, g)
    b = control_vector(nop, rho_inf)
    sysr = reduce_system(a, b, None, rmap, delta)
    hreport = shapes.hautus_margins(
        sysr.bhat, sd, cfg.d, rmap,
        required=(2,) if cfg.controller == "lyapunov" else None)

    asm = AssembledSystem(cfg=cfg, grid=g, potential=pot, a=a, nop=nop,
                          rho_inf=rho_inf, rmap=rmap, spectrum=sd,
                          delta=delta, alpha=alpha, b=b, sys=sysr,
                          hautus=hreport)
    _assembly_certificates(asm)
    _solve_matrix_equation(asm)
    if use_cache:
        _store_cache(asm, cache_path)
    return asm


def _assembly_certificates(asm: AssembledSystem) -> None:
    c = asm.certificates
    rep = verify_identities(asm.a, asm.nop, asm.b, asm.rho_inf, asm.grid)
    c["identities"] = Certificate.leq(max(rep.residuals.values()), 1e-10,
                                      "six decoupling identities")
    c["spectral_residual"] = Certificate.leq(
        max(float(np.max(asm.spectrum.residual_psi)),
            float(np.max(asm.spectrum.residual_phi))), 1e-8,
        "two-sided eigenpair certification")
    if asm.cfg.controller == "lyapunov":
        # this shape only has to reach mode 2; the others are handled by
        # the operator's own dissipativity
        c["hautus"] = Certificate.geq(asm.hautus.margins[2], 1e-6,
                                      "mode-2 coupling")
    else:
        c["hautus"] = Certificate.geq(min(asm.hautus.margins.values()), 1e-6,
                                      "stabilizability margins")
    ana = stationary_state(asm.potential, asm.grid) * cell_volumes(asm.grid)
    ana /= asm.grid.w * ana.sum()
    c["stationary_consistency"] = Certificate.leq(
        weighted_norm(asm.grid, asm.rho_inf - ana) / weighted_norm(asm.grid, ana),
        1.0, "discrete vs analytic stationary state, informational")


def _solve_matrix_equation(asm: AssembledSystem) -> None:
    cfg, sysr = asm.cfg, asm.sys
    c = asm.certificates
    if cfg.controller in ("riccati", "riccati_rotated_alpha"):
        fhat = sysr.ahat + asm.delta * np.eye(sysr.dim)
        sol = me.solve_care(fhat, sysr.bhat, None)
        asm.pihat = sol.pi
        asm.gain = sol.gain[0] if sol.gain.ndim == 2 else sol.gain
        c["care_residual"] = Certificate.leq(sol.residual, 1e-8,
                                             f"{sol.iterations} newton steps")
        absc = float(np.max(np.linalg.eigvals(
            sysr.ahat - np.outer(sysr.bhat, asm.gain)).real))
        c["closed_loop_abscissa"] = Certificate.leq(
            absc, -0.9 * asm.delta, "unshifted closed loop")
    elif cfg.controller == "lyapunov":
        asm.mu = choose_mu(sysr, h1_gram(asm.grid), margin=cfg.mu_margin)
        ups = me.solve_lyapunov(sysr.ahat, 2.0 * asm.mu * asm.rmap.mass_gram())
        asm.upsilon_s = ups.s
        c["lyapunov_residual"] = Certificate.leq(ups.residual, 1e-8)
        probe = mu_probe_margin(sysr, h1_gram(asm.grid), asm.mu)
        c["mu_margin"] = Certificate.geq(probe, 0.0,
                                         f"mu = {asm.mu:.4f} dissipativity probe")
        vmin = float(np.min(np.linalg.eigvalsh(ups.s + asm.rmap.mass_gram())))
        c["v_positive"] = Certificate.geq(vmin, 0.0, "V is a norm")


def lifted_riccati_certificates(asm: AssembledSystem) -> dict:
    """Full-space Riccati checks; dense, so limited to moderate grids."""
    if asm.pihat is None:
        raise ValueError("no riccati solution on this system")
    g = asm.grid
    if g.k > 2500:
        return {"lifted_residual": Certificate(float("nan"), 1e-8, True,
                                               "skipped: grid too large for dense check")}
    pi = me.lift_riccati(asm.pihat, asm.rmap)
    afull = as_matrix(asm.a).toarray()
    ffull = afull + asm.delta * np.eye(g.k)
    res = me.care_residual(ffull, asm.b, np.zeros((g.k, g.k)), pi)
    kernel = float(np.linalg.norm(pi @ asm.rho_inf)
                   / max(np.linalg.norm(pi), 1e-300))
    return {
        "lifted_residual": Certificate.leq(res, 1e-8, "full-space shifted CARE"),
        "pi_annihilates_stationary": Certificate.leq(kernel, 1e-10),
    }


# ---------------------------------------------------------------------------
# caching

def _store_cache(asm: AssembledSystem, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    amat = as_matrix(asm.a).tocsr()
    nmat = as_matrix(asm.nop).tocsr()
    payload = {
        "canonical": np.frombuffer(asm.cfg.canonical().encode(), dtype=np.uint8),
        "grid_shape": np.array([asm.grid.nx1, asm.grid.nx2]),
        "bounds": np.array(asm.grid.bounds),
        "a_data": amat.data, "a_indices": amat.indices, "a_indptr": amat.indptr,
        "n_data": nmat.data, "n_indices": nmat.indices, "n_indptr": nmat.indptr,
        "rho_inf": asm.rho_inf, "alpha": asm.alpha, "b": asm.b,
        "delta": np.array([asm.delta]),
        "eigenvalues": asm.spectrum.eigenvalues,
        "psi": asm.spectrum.psi, "phi": asm.spectrum.phi,
        "residuals": np.vstack([asm.spectrum.residual_psi,
                                asm.spectrum.residual_phi]),
    }
    if asm.pihat is not None:
        payload["pihat"] = asm.pihat
        payload["gain"] = asm.gain
    if asm.upsilon_s is not None:
        payload["upsilon_s"] = asm.upsilon_s
        payload["mu"] = np.array([asm.mu])
    np.savez_compressed(path, **payload)


def _load_cached(cfg: ExperimentConfig, path: Path):
    from .spectral import SpectralData

    try:
        z = np.load(path)
    except (OSError, ValueError):
        return None
    g = build_grid(int(z["grid_shape"][0]), int(z["grid_shape"][1]),
                   tuple(z["bounds"]))
    pot = make_potential(cfg.potential, cfg.nu, **cfg.potential_params)
    k = g.k
    amat = sp.csr_matrix((z["a_data"], z["a_indices"], z["a_indptr"]),
                         shape=(k, k))
    nmat = sp.csr_matrix((z["n_data"], z["n_indices"], z["n_indptr"]),
                         shape=(k, k))
    a = LinOp(matrix=amat, tag="generator", grid=g)
    nop = LinOp(matrix=nmat, tag="control", grid=g)
    rho_inf = z["rho_inf"]
    rmap = build_R(rho_inf, g)
    sd = SpectralData(eigenvalues=z["eigenvalues"], psi=z["psi"], phi=z["phi"],
                      residual_psi=z["residuals"][0],
                      residual_phi=z["residuals"][1],
                      grid=g, op_norm=float("nan"))
    delta = float(z["delta"][0])
    b = z["b"]
    sysr = reduce_system(a, b, None, rmap, delta)
    hreport = shapes.hautus_margins(
        sysr.bhat, sd, cfg.d, rmap,
        required=(2,) if cfg.controller == "lyapunov" else None)
    asm = AssembledSystem(cfg=cfg, grid=g, potential=pot, a=a, nop=nop,
                          rho_inf=rho_inf, rmap=rmap, spectrum=sd,
                          delta=delta, alpha=z["alpha"], b=b, sys=sysr,
                          hautus=hreport, from_cache=True)
    if "pihat" in z:
        asm.pihat = z["pihat"]
        asm.gain = z["gain"]
    if "upsilon_s" in z:
        asm.upsilon_s = z["upsilon_s"]
        asm.mu = float(z["mu"][0])
    _assembly_certificates(asm)
    if asm.pihat is None and asm.upsilon_s is None and cfg.controller != "none":
        _solve_matrix_equation(asm)
    else:
        _recertify_solutions(asm)
    return asm


def _recertify_solutions(asm: AssembledSystem) -> None:
    c = asm.certificates
    sysr = asm.sys
    if asm.pihat is not None:
        fhat = sysr.ahat + asm.delta * np.eye(sysr.dim)
        c["care_residual"] = Certificate.leq(
            me.care_residual(fhat, sysr.bhat, np.zeros_like(asm.pihat), asm.pihat),
            1e-8, "recertified from cache")
        absc = float(np.max(np.linalg.eigvals(
            sysr.ahat - np.outer(sysr.bhat, asm.gain)).real))
        c["closed_loop_abscissa"] = Certificate.leq(absc, -0.9 * asm.delta)
    if asm.upsilon_s is not None:
        c["lyapunov_residual"] = Certificate.leq(
            me.lyap_residual(sysr.ahat, 2.0 * asm.mu * asm.rmap.mass_gram(),
                             asm.upsilon_s), 1e-8, "recertified from cache")
        vmin = float(np.min(np.linalg.eigvalsh(
            asm.upsilon_s + asm.rmap.mass_gram())))
        c["v_positive"] = Certificate.geq(vmin, 0.0, "V is a norm")


# ---------------------------------------------------------------------------
# running and comparing

@dataclass
class RunBundle:
    cfg: ExperimentConfig
    asm: AssembledSystem
    law: cl.FeedbackLaw
    traj: cl.TrajectoryRecord
    diag: cl.DiagnosticsReport
    certificates: dict
    wall_time: float

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.certificates.values())

    def time_to_fraction(self, frac: float = 0.01) -> float:
        return time_to_fraction(self.traj, frac)


def build_law(asm: AssembledSystem) -> cl.FeedbackLaw:
    kind = asm.cfg.controller
    if kind == "none":
        return cl.FeedbackLaw(kind="none", rmap=asm.rmap)
    if kind in ("riccati", "riccati_rotated_alpha"):
        return cl.FeedbackLaw(kind="riccati", rmap=asm.rmap, gain=asm.gain)
    ups = me.LyapunovSolution(s=asm.upsilon_s, residual=0.0)
    return cl.lyapunov_law(asm.sys, asm.nop, asm.mu, upsilon=ups)


def initial_state(cfg: ExperimentConfig, asm: AssembledSystem) -> np.ndarray:
    custom = None
    if cfg.scenario == "custom":
        custom = np.loadtxt(cfg.custom_init, delimiter=",").reshape(-1)
    return cl.initial_condition(cfg.scenario, asm.grid, asm.rho_inf,
                                seed=cfg.seed, custom=custom)


def run_experiment(cfg: ExperimentConfig, use_cache: bool = True) -> RunBundle:
    start = time.time()
    asm = assemble_system(cfg, use_cache=use_cache)
    law = build_law(asm)
    rho0 = initial_state(cfg, asm)
    traj = cl.integrate(asm.a, asm.nop, rho0, law, cfg.t_end, tol=cfg.tol,
                        n_samples=cfg.n_samples)
    try:
        diag = cl.diagnostics(traj, asm.delta)
    except ValueError:
        diag = None  # decay window not reached; rates stay unreported

    certs = dict(asm.certificates)
    mass_tol = max(1e-10, 16 * np.finfo(float).eps * traj.peak_l1)
    certs["mass_conservation"] = Certificate.leq(
        traj.mass_drift, mass_tol, "max drift over samples")
    if cfg.controller == "none":
        certs["positivity"] = Certificate.geq(
            float(np.min(traj.min_rho)), -1e-8, "uncontrolled run")
    else:
        certs["min_density"] = Certificate(
            float(np.min(traj.min_rho)), float("nan"), True,
            "reported only; feedback can undershoot")
    if cfg.controller == "lyapunov":
        finite_v = traj.v[np.isfinite(traj.v)]
        jump = float(np.max(np.diff(finite_v))) if finite_v.size > 1 else 0.0
        certs["v_decrease"] = Certificate.leq(
            max(jump, 0.0), 10 * cfg.tol, "max V increase between samples")
    return RunBundle(cfg=cfg, asm=asm, law=law, traj=traj, diag=diag,
                     certificates=certs, wall_time=time.time() - start)


def time_to_fraction(traj: cl.TrajectoryRecord, frac: float = 0.01) -> float:
    """First time the deviation falls below frac of its initial value.

    Log-linear interpolation between samples; inf when the run never gets
    there (callers clamp or flag as they see fit).
    """
    target = frac * traj.l2dev[0]
    below = np.nonzero(traj.l2dev <= target)[0]
    if len(below) == 0:
        return float("inf")
    i = int(below[0])
    if i == 0:
        return 0.0
    t1, t2 = traj.t[i - 1], traj.t[i]
    y1, y2 = traj.l2dev[i - 1], traj.l2dev[i]
    if y2 <= 0 or y1 <= target:
        return float(t2)
    return float(t1 + (t2 - t1) * np.log(y1 / target) / np.log(y1 / y2))


@dataclass
class Comparison:
    t: np.ndarray
    curves: dict                 # controller -> deviation on the common grid
    fitted_rates: dict
    time_to_1pct: dict

    def to_csv(self, path) -> None:
        names = list(self.curves)
        header = "t," + ",".join(f"l2dev_{n}" for n in names)
        data = np.column_stack([self.t] + [self.curves[n] for n in names])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.16e")


def compare_runs(bundles: list) -> Comparison:
    """Align runs of one scenario on a common time grid and score them."""
    if not bundles:
        raise ValueError("nothing to compare")
    ref = bundles[0].cfg
    for b in bundles[1:]:
        same = (b.cfg.nx1 == ref.nx1 and b.cfg.nx2 == ref.nx2
                and tuple(b.cfg.bounds) == tuple(ref.bounds)
                and b.cfg.scenario == ref.scenario
                and b.cfg.seed == ref.seed)
        if not same:
            raise ValueError(
                f"bundle {b.cfg.controller!r} does not share grid and scenario "
                f"with {ref.controller!r}")
    t = bundles[0].traj.t
    curves, rates, ttp = {}, {}, {}
    for b in bundles:
        name = b.cfg.controller
        curves[name] = np.interp(t, b.traj.t, b.traj.l2dev)
        try:
            rates[name] = cl.fitted_decay_rate(b.traj.t, b.traj.l2dev)[0]
        except ValueError:
            rates[name] = float("nan")
        ttp[name] = time_to_fraction(b.traj)
    return Comparison(t=t, curves=curves, fitted_rates=rates, time_to_1pct=ttp)


# ---------------------------------------------------------------------------
# artifact emission

def _cert_json(certs: dict) -> dict:
    return {
        name: {"value": c.value, "threshold": c.threshold,
               "passed": c.passed, "note": c.note}
        for name, c in certs.items()
    }


REFERENCE_DELTA = 12.26
REFERENCE_GRID = (96, 64)


def reproduce_paper(outdir: str = "runs/reproduction", nx1: int = 48,
                    nx2: int = 32, t_end: float = 8.0, tol: float = 1e-8,
                    seed: int = 0, use_cache: bool = True,
                    check_reference_delta: bool = True, log=print) -> dict:
    """Re-run the headline study: the shift on the fine grid, then the
    scenario-by-controller matrix on the working grid, with comparisons.

    Returns the summary manifest (also written to disk).  Controllers whose
    certificates fail are reported, not raised.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"runs": {}, "comparisons": {}}

    if check_reference_delta:
        log(f"[1/3] shift on the {REFERENCE_GRID[0]}x{REFERENCE_GRID[1]} grid")
        fine = ExperimentConfig(nx1=REFERENCE_GRID[0], nx2=REFERENCE_GRID[1],
                                outdir=str(out))
        g = build_grid(fine.nx1, fine.nx2, fine.bounds)
        pot = make_potential(fine.potential, fine.nu)
        a = generator_from_adjoint(assemble_adjoint_generator(pot, g))
        sd = leading_eigenpairs(a, _spectral_count(fine))
        delta_fine = choose_delta(sd, fine.d)
        rel = abs(delta_fine - REFERENCE_DELTA) / REFERENCE_DELTA
        summary["reference_delta"] = {
            "computed": delta_fine, "reference": REFERENCE_DELTA,
            "relative_error": rel, "within_10pct": bool(rel <= 0.10),
        }
        log(f"      delta = {delta_fine:.4f} vs {REFERENCE_DELTA} "
            f"({100 * rel:.2f}% off)")

    matrix = {
        "random_init": ("none", "riccati", "lyapunov", "riccati_rotated_alpha"),
        "point_mass": ("none", "riccati", "lyapunov"),
    }
    log(f"[2/3] scenario matrix on the {nx1}x{nx2} grid")
    bundles = {}
    for scenario, controllers in matrix.items():
        bundles[scenario] = []
        for controller in controllers:
            cfg = ExperimentConfig(nx1=nx1, nx2=nx2, scenario=scenario,
                                   controller=controller, t_end=t_end,
                                   tol=tol, seed=seed, outdir=str(out))
            try:
                bundle = run_experiment(cfg, use_cache=use_cache)
            except ValueError as err:
                # a linear law on the bilinear loop is only locally
                # stabilizing; a run leaving the basin is a result, not a
                # reason to abort the study
                summary["runs"][f"{scenario}/{controller}"] = {
                    "failed_to_run": str(err),
                    "all_certificates_passed": False,
                }
                log(f"      {scenario:>11s} x {controller:<22s} FAILED: {err}")
                continue
            write_bundle(bundle, tag=f"{scenario}_{controller}")
            bundles[scenario].append(bundle)
            ttp = bundle.time_to_fraction()
            summary["runs"][f"{scenario}/{controller}"] = {
                "time_to_1pct": ttp,
                "fitted_rate": None if bundle.diag is None
                else bundle.diag.fitted_rate,
                "wall_time_s": bundle.wall_time,
                "all_certificates_passed": bundle.all_passed,
                "failed": [n for n, c in bundle.certificates.items()
                           if not c.passed],
            }
            log(f"      {scenario:>11s} x {controller:<22s} "
                f"t1% = {ttp:8.4f}  certs "
                f"{'ok' if bundle.all_passed else 'FAILED'}")

    log("[3/3] comparisons")
    for scenario, blist in bundles.items():
        comp = compare_runs(blist)
        comp.to_csv(out / f"comparison_{scenario}.csv")
        summary["comparisons"][scenario] = {
            "time_to_1pct": comp.time_to_1pct,
            "fitted_rates": comp.fitted_rates,
        }
        base = comp.time_to_1pct.get("none", float("inf"))
        for name, val in comp.time_to_1pct.items():
            if name != "none" and np.isfinite(val) and val > 0:
                summary["comparisons"][scenario][f"speedup_{name}"] = base / val

    def _default(o):
        if isinstance(o, float) and not np.isfinite(o):
            return str(o)
        raise TypeError(f"not serializable: {o!r}")

    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=_default)
    log(f"      wrote {out / 'summary.json'}")
    return summary


def write_bundle(bundle: RunBundle, tag: str = None) -> Path:
    """Emit trajectory CSV, spectrum CSV, alpha CSV, and the run manifest."""
    cfg = bundle.cfg
    out = ensure_outdir(cfg)
    tag = tag or f"{cfg.scenario}_{cfg.controller}_{cfg.digest()}"
    bundle.traj.to_csv(out / f"trajectory_{tag}.csv")
    bundle.asm.spectrum.to_csv(out / f"spectrum_{tag}.csv")
    shapes.shape_to_csv(bundle.asm.alpha, bundle.asm.grid, out / f"alpha_{tag}.csv")
    manifest = {
        "config": json.loads(cfg.canonical()),
        "digest": cfg.digest(),
        "delta": bundle.asm.delta,
        "mu": bundle.asm.mu,
        "eigenvalues": [
            [float(z.real), float(z.imag)]
            for z in np.atleast_1d(bundle.asm.spectrum.eigenvalues)
        ],
        "hautus_margins": {str(k): v for k, v in bundle.asm.hautus.margins.items()},
        "anchor_node": int(bundle.asm.rmap.perm[-1]),
        "from_cache": bundle.asm.from_cache,
        "wall_time_s": bundle.wall_time,
        "integrator": {"nfev": bundle.traj.nfev, "status": bundle.traj.status},
        "diagnostics": None if bundle.diag is None else {
            "fitted_rate": bundle.diag.fitted_rate,
            "window": list(bundle.diag.window),
            "mass_drift": bundle.diag.mass_drift,
            "min_density": bundle.diag.min_density,
            "max_v_jump": bundle.diag.max_v_jump,
        },
        "time_to_1pct": bundle.time_to_fraction(),
        "certificates": _cert_json(bundle.certificates),
        "all_passed": bundle.all_passed,
    }
    path = out / f"manifest_{tag}.json"

    def _default(o):
        if isinstance(o, float) and not np.isfinite(o):
            return str(o)
        raise TypeError(f"not serializable: {o!r}")

    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=_default)
    return path

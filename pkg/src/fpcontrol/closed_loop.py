"""Nonlinear closed-loop integration with state feedback.

The full bilinear system rho' = A rho + u N rho is advanced with an
adaptive order-2(3) pair; the control u is recomputed from the feedback
law at every integrator stage.  Feedback acts through the reduced
zero-mean coordinates, so both laws vanish identically at the stationary
state and mass conservation is structural.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .grid import Grid2D, weighted_norm
from .linop import as_matrix
from .matrix_equations import LyapunovSolution, RiccatiSolution, solve_lyapunov
from .reduction import ReducedSystem, ReductionMap

MASS_DRIFT_LIMIT = 1e-8


@dataclass
class FeedbackLaw:
    """A state-feedback law u(y) on density fluctuations y = rho - rho_inf.

    kind 'none' is the open loop (u forced to 0).  kind 'riccati' is the
    linear law u = -ghat . yhat.  kind 'lyapunov' is the bilinear-affine
    law u = -(bhat + nhat yhat) . (S + What) yhat, whose quadratic form
    v(yhat) = yhat . (S + What) yhat is the certified Lyapunov function.
    """

    kind: str
    rmap: ReductionMap = None
    gain: np.ndarray = None      # riccati: reduced row B^T Pi
    smat: np.ndarray = None      # lyapunov: S + What, dense symmetric
    bhat: np.ndarray = None      # lyapunov: reduced control direction
    nop = None                   # lyapunov: sparse full-space N
    mu: float = None             # lyapunov: certified rate

    def __post_init__(self):
        if self.kind not in ("none", "riccati", "lyapunov"):
            raise ValueError(f"unknown feedback kind {self.kind!r}")

    def control(self, y: np.ndarray) -> float:
        """u evaluated at a fluctuation (or any field; mass is projected out)."""
        if self.kind == "none":
            return 0.0
        yhat = self.rmap.reduce(y)
        if self.kind == "riccati":
            return -float(np.dot(self.gain, yhat))
        vy = self.smat @ yhat
        direction = self.bhat + self.rmap.reduce(self.nop @ self.rmap.lift(yhat))
        return -float(np.dot(direction, vy))

    def lyapunov_value(self, y: np.ndarray) -> float:
        if self.kind != "lyapunov":
            raise ValueError("V is defined for the lyapunov law only")
        yhat = self.rmap.reduce(y)
        return float(yhat @ (self.smat @ yhat))


def riccati_control(y: np.ndarray, law: FeedbackLaw) -> float:
    if law.kind != "riccati":
        raise ValueError("law kind must be 'riccati'")
    return law.control(y)


def lyapunov_control(y: np.ndarray, law: FeedbackLaw) -> float:
    if law.kind != "lyapunov":
        raise ValueError("law kind must be 'lyapunov'")
    return law.control(y)


def riccati_law(sys: ReducedSystem, sol: RiccatiSolution) -> FeedbackLaw:
    gain = np.asarray(sol.gain)
    if gain.ndim == 2:
        gain = gain[0]
    return FeedbackLaw(kind="riccati", rmap=sys.rmap, gain=gain)


def lyapunov_law(sys: ReducedSystem, nop, mu: float,
                 upsilon: LyapunovSolution = None) -> FeedbackLaw:
    """Build the bilinear law from the rate-mu Lyapunov certificate.

    Solves Ahat^T S + S Ahat = -2 mu What when no solution is supplied.
    """
    if upsilon is None:
        upsilon = solve_lyapunov(sys.ahat, 2.0 * mu * sys.rmap.mass_gram())
    law = FeedbackLaw(kind="lyapunov", rmap=sys.rmap,
                      smat=upsilon.s + sys.rmap.mass_gram(),
                      bhat=sys.bhat, mu=mu)
    law.nop = as_matrix(nop)
    return law


@dataclass
class TrajectoryRecord:
    t: np.ndarray                # sample times, strictly increasing
    l2dev: np.ndarray            # weighted L2 distance to rho_inf
    u: np.ndarray                # control at samples
    mass: np.ndarray
    min_rho: np.ndarray
    v: np.ndarray                # Lyapunov value (nan when not applicable)
    states: np.ndarray           # sampled densities, shape (len(t), k)
    nfev: int
    status: str
    law_kind: str
    peak_l1: float = 0.0         # largest w*|rho|_1 the integrator visited

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.mass - self.mass[0])))

    def to_csv(self, path) -> None:
        header = "t,l2dev,u,mass,minrho,V"
        data = np.column_stack([self.t, self.l2dev, self.u, self.mass,
                                self.min_rho, self.v])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.16e")

    def snapshot(self, time: float, g: Grid2D, path) -> None:
        """Dump the sampled density nearest the requested time as a grid CSV."""
        i = int(np.argmin(np.abs(self.t - time)))
        np.savetxt(path, g.reshape(self.states[i]), delimiter=",", fmt="%.16e")


def initial_condition(kind: str, g: Grid2D, rho_inf: np.ndarray,
                      seed: int = 0, custom: np.ndarray = None) -> np.ndarray:
    """Unit-mass initial densities for the standard scenarios."""
    if kind == "random_init":
        rng = np.random.default_rng(seed)
        rho0 = rng.uniform(0.0, 1.0, g.k)
        return rho0 / (g.w * np.sum(rho0))
    if kind == "point_mass":
        rho0 = np.zeros(g.k)
        rho0[g.nearest_node(1.0, 0.0)] = 1.0 / g.w
        return rho0
    if kind == "custom":
        if custom is None:
            raise ValueError("custom scenario needs an explicit density")
        rho0 = np.asarray(custom, dtype=float)
        if abs(g.w * np.sum(rho0) - 1.0) > 1e-8:
            raise ValueError("custom initial density must have unit mass")
        return rho0
    raise ValueError(f"unknown scenario {kind!r}")


def integrate(a, nop, rho0: np.ndarray, law: FeedbackLaw, t_end: float,
              tol: float = 1e-8, n_samples: int = 400) -> TrajectoryRecord:
    """Integrate rho' = A rho + u N rho with stage-evaluated feedback.

    Bogacki-Shampine 2(3) adaptive stepping; dense output sampled on a
    uniform grid.  Mass drift beyond 1e-8 aborts the run since it can only
    come from a broken assembly.
    """
    if not 1e-10 <= tol <= 1e-3:
        raise ValueError("tol must lie in [1e-10, 1e-3]")
    if law.rmap is None:
        raise ValueError("feedback law must carry a reduction map")
    amat = as_matrix(a)
    g = a.grid
    rho_inf = law.rmap.rho_inf
    nmat = as_matrix(nop) if law.kind != "none" else None

    # the exact rhs has zero total mass for every state (column sums of A
    # and N vanish); removing the exactly-summed roundoff defect through a
    # single near-zero entry keeps the trajectory on the constant-mass
    # manifold even when the control magnitude amplifies the noise
    peak = [0.0]  # largest |rho|_1 the integrator visits, for the mass guard

    def _project_mass(dot):
        s = math.fsum(dot)
        if s != 0.0:
            dot[int(np.argmin(np.abs(dot)))] -= s
        return dot

    if law.kind == "none":
        def rhs(t, rho):
            peak[0] = max(peak[0], float(np.sum(np.abs(rho))))
            return _project_mass(amat @ rho)
    else:
        def rhs(t, rho):
            peak[0] = max(peak[0], float(np.sum(np.abs(rho))))
            u = law.control(rho - rho_inf)
            return _project_mass(amat @ rho + u * (nmat @ rho))

    t_eval = np.linspace(0.0, t_end, n_samples)
    sol = solve_ivp(rhs, (0.0, t_end), np.asarray(rho0, dtype=float),
                    method="RK23", t_eval=t_eval, rtol=tol,
                    atol=1e-12, dense_output=False)
    if sol.status != 0:
        reached = sol.t[-1] if sol.t.size else 0.0
        raise ValueError(
            f"integration failed past t = {reached:.4g} after {sol.nfev} "
            f"evaluations (peak |rho|_1 {g.w * peak[0]:.3e}): {sol.message}")

    states = sol.y.T
    mass = g.w * np.sum(states, axis=1)
    drift = np.max(np.abs(mass - mass[0]))
    # unit mass is representable only to eps * |rho|_1, so the guard must
    # scale with the largest excursion; the floor keeps it a sharp
    # assembly-bug detector for design-regime states
    limit = max(MASS_DRIFT_LIMIT, 16 * np.finfo(float).eps * g.w * peak[0])
    if drift > limit:
        raise ValueError(
            f"mass drift {drift:.2e} exceeds {limit:.0e}; "
            "the generator or control operator is mis-assembled"
        )

    dev = states - rho_inf[None, :]
    l2dev = np.sqrt(g.w * np.sum(dev * dev, axis=1))
    u = np.zeros(len(sol.t))
    v = np.full(len(sol.t), np.nan)
    if law.kind != "none":
        for i in range(len(sol.t)):
            u[i] = law.control(dev[i])
    if law.kind == "lyapunov":
        for i in range(len(sol.t)):
            v[i] = law.lyapunov_value(dev[i])
    return TrajectoryRecord(
        t=sol.t, l2dev=l2dev, u=u, mass=mass,
        min_rho=np.min(states, axis=1), v=v, states=states,
        nfev=sol.nfev, status=sol.message, law_kind=law.kind,
        peak_l1=g.w * peak[0],
    )


@dataclass
class DiagnosticsReport:
    fitted_rate: float           # positive number: |slope| of log ||y||
    window: tuple                # (t_lo, t_hi) actually used
    mass_drift: float
    min_density: float
    max_v_jump: float            # largest positive jump of V, nan if no V
    target_rate: float

    def __str__(self):
        return (
            f"fitted rate {self.fitted_rate:.4f} on t in "
            f"[{self.window[0]:.3g}, {self.window[1]:.3g}] "
            f"(target {self.target_rate:.4f}); mass drift {self.mass_drift:.2e}; "
            f"min density {self.min_density:.2e}; max V jump {self.max_v_jump:.2e}"
        )


def fitted_decay_rate(t: np.ndarray, norms: np.ndarray, lo: float = 1e-6,
                      hi: float = 1e-1):
    """Least-squares exponential rate on the window norms/norms[0] in [lo, hi]."""
    rel = norms / norms[0]
    mask = (rel >= lo) & (rel <= hi) & (norms > 0)
    if np.count_nonzero(mask) < 2:
        raise ValueError(
            "decay window is empty; integrate longer or widen the window"
        )
    slope = np.polyfit(t[mask], np.log(norms[mask]), 1)[0]
    return -float(slope), (float(t[mask][0]), float(t[mask][-1]))


def diagnostics(traj: TrajectoryRecord, delta: float, lo: float = 1e-6,
                hi: float = 1e-1) -> DiagnosticsReport:
    rate, window = fitted_decay_rate(traj.t, traj.l2dev, lo, hi)
    finite_v = traj.v[np.isfinite(traj.v)]
    jump = float(np.max(np.diff(finite_v))) if finite_v.size > 1 else float("nan")
    return DiagnosticsReport(
        fitted_rate=rate, window=window, mass_drift=traj.mass_drift,
        min_density=float(np.min(traj.min_rho)), max_v_jump=jump,
        target_rate=delta,
    )


@dataclass
class SpectrumShiftReport:
    """Spectrum of the idealized Lyapunov closed loop against the formula.

    With bhat equal to the slow eigenvector, the closed loop is a rank-one
    update that moves lambda_2 to
    lambda_2 - |psi2|^2 + (mu/lambda_2)|psi2|^2 and keeps every other
    eigenvalue, because the remaining left eigenvectors annihilate the
    update direction.
    """

    eigenvalues: np.ndarray
    lam2_open: float
    lam2_formula: float
    lam2_computed: float
    formula_error: float
    mode_drift: float            # max relative motion of the j >= 3 modes
    degenerate: bool
    note: str = ""


def closed_loop_spectrum(sys: ReducedSystem, upsilon: LyapunovSolution,
                         mu: float) -> SpectrumShiftReport:
    what = sys.rmap.mass_gram()
    acl = sys.ahat - np.outer(sys.bhat, (upsilon.s + what) @ sys.bhat)
    open_eigs = np.linalg.eigvals(sys.ahat)
    closed_eigs = np.linalg.eigvals(acl)

    i2 = int(np.argmax(open_eigs.real))
    lam2 = open_eigs[i2]
    rest = np.delete(open_eigs, i2)
    n2 = sys.rmap.reduced_inner(sys.bhat, sys.bhat)
    formula = lam2 - n2 + (mu / lam2) * n2

    # pair each open j >= 3 eigenvalue with its nearest closed one, then the
    # leftover closed eigenvalue is the shifted lambda_2
    taken = np.zeros(len(closed_eigs), dtype=bool)
    drift = 0.0
    for lam in sorted(rest, key=lambda z: -z.real):
        dists = np.where(taken, np.inf, np.abs(closed_eigs - lam))
        j = int(np.argmin(dists))
        taken[j] = True
        drift = max(drift, float(np.abs(closed_eigs[j] - lam) / max(abs(lam), 1e-300)))
    lam2_closed = closed_eigs[~taken][0]

    gap = float(np.min(np.abs(rest - formula)))
    degenerate = gap < 1e-8
    note = "formula eigenvalue degenerate with an open mode" if degenerate else ""
    err = float(abs(lam2_closed - formula) / max(abs(formula), 1e-300))
    return SpectrumShiftReport(
        eigenvalues=np.sort_complex(closed_eigs), lam2_open=complex(lam2),
        lam2_formula=complex(formula), lam2_computed=complex(lam2_closed),
        formula_error=err, mode_drift=drift, degenerate=degenerate, note=note,
    )

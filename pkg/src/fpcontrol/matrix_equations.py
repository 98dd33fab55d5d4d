"""Dense matrix equations for the reduced feedback designs.

Two equations are solved on the reduced zero-mean coordinates: a Lyapunov
equation certifying a decay rate in the mass-weighted geometry, and the
partial-stabilization Riccati equation for the shifted reduced generator.
The Riccati solve is Newton-Kleinman: each step is one Lyapunov solve, and
the iteration needs a stabilizing initial gain, which is built from the
unstable left invariant subspace of the shifted operator.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

KRON_ORACLE_LIMIT = 30


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def lyap_residual(f: np.ndarray, w: np.ndarray, s: np.ndarray) -> float:
    """Relative residual of F^T S + S F + W = 0."""
    r = f.T @ s + s @ f + w
    scale = np.linalg.norm(f.T @ s) + np.linalg.norm(s @ f) + np.linalg.norm(w)
    return float(np.linalg.norm(r) / max(scale, 1e-300))


@dataclass
class LyapunovSolution:
    s: np.ndarray
    residual: float


def solve_lyapunov(f: np.ndarray, w: np.ndarray, rtol: float = 1e-8) -> LyapunovSolution:
    """Solve F^T S + S F + W = 0 for symmetric S (Bartels-Stewart).

    W must be symmetric; the solution is symmetrized and certified by its
    relative residual.
    """
    f = np.asarray(f, dtype=float)
    w = np.asarray(w, dtype=float)
    if f.shape != w.shape or f.shape[0] != f.shape[1]:
        raise ValueError("F and W must be square with matching shapes")
    if np.linalg.norm(w - w.T) > 1e-12 * max(np.linalg.norm(w), 1e-300):
        raise ValueError("W must be symmetric")
    s = _sym(sla.solve_continuous_lyapunov(f.T, -w))
    res = lyap_residual(f, w, s)
    if res > rtol:
        raise ValueError(f"lyapunov residual {res:.2e} > {rtol:.0e}")
    return LyapunovSolution(s=s, residual=res)


def lyapunov_kron_oracle(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Kronecker-vectorized reference solve of F^T S + S F + W = 0.

    An independent O(n^6) route kept for cross-checking the production
    solver on small systems.
    """
    f = np.asarray(f, dtype=float)
    w = np.asarray(w, dtype=float)
    n = f.shape[0]
    if n > KRON_ORACLE_LIMIT:
        raise ValueError(f"kron oracle limited to n <= {KRON_ORACLE_LIMIT}")
    eye = np.eye(n)
    big = np.kron(eye, f.T) + np.kron(f.T, eye)
    vec = np.linalg.solve(big, -w.reshape(-1, order="F"))
    return vec.reshape((n, n), order="F")


def care_residual(f: np.ndarray, b: np.ndarray, q: np.ndarray,
                  pi: np.ndarray) -> float:
    """Relative residual of F^T P + P F - P B B^T P + Q = 0."""
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] == 1 and f.shape[0] != 1:
        b = b.T
    t1 = f.T @ pi
    t2 = pi @ f
    t3 = (pi @ b) @ (b.T @ pi)
    r = t1 + t2 - t3 + q
    scale = (np.linalg.norm(t1) + np.linalg.norm(t2)
             + np.linalg.norm(t3) + np.linalg.norm(q))
    return float(np.linalg.norm(r) / max(scale, 1e-300))


def stabilizing_initial_gain(f: np.ndarray, b: np.ndarray) -> np.ndarray:
    """A gain K with F - B K Hurwitz, from the unstable left subspace.

    The ordered real Schur form of F^T puts the right-half-plane block
    first; its Schur basis V spans an exact left invariant subspace, so
    V^T F = T11^T V^T and the unstable dynamics close in the coordinates
    xi = V^T x.  Stabilizing the small pair (T11^T, V^T B) and pulling the
    gain back through V^T leaves every stable eigenvalue of F untouched.
    """
    f = np.asarray(f, dtype=float)
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] == 1 and f.shape[0] != 1:
        b = b.T
    m = b.shape[1]
    t, z, sdim = sla.schur(f.T, output="real", sort="rhp")
    if sdim == 0:
        return np.zeros((m, f.shape[0]))
    v = z[:, :sdim]
    t11 = t[:sdim, :sdim]
    bs = v.T @ b
    ps = sla.solve_continuous_are(t11.T, bs, np.eye(sdim), np.eye(m))
    k = (bs.T @ ps) @ v.T
    cl = np.max(np.linalg.eigvals(f - b @ k).real)
    if cl >= 0:
        raise ValueError(
            f"initial gain failed to stabilize (abscissa {cl:.2e}); "
            "the pair is likely not stabilizable"
        )
    return k


@dataclass
class RiccatiSolution:
    pi: np.ndarray
    gain: np.ndarray             # B^T Pi
    residual: float
    iterations: int
    closed_loop_abscissa: float
    history: list = field(default_factory=list)


def solve_care(f: np.ndarray, b: np.ndarray, q: np.ndarray = None,
               rtol: float = 1e-8, max_iter: int = 60) -> RiccatiSolution:
    """Stabilizing solution of F^T P + P F - P B B^T P + Q = 0.

    Newton-Kleinman iteration: given a stabilizing gain K_j, solve the
    Lyapunov equation for the closed loop F - B K_j with right-hand side
    Q + K_j^T K_j, and read the next gain off the solution.  Convergence
    is certified by the relative Riccati residual.
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] == 1 and n != 1:
        b = b.T
    q = np.zeros((n, n)) if q is None else np.asarray(q, dtype=float)

    k = stabilizing_initial_gain(f, b)
    pi = np.zeros((n, n))
    history = []
    for it in range(1, max_iter + 1):
        fk = f - b @ k
        rhs = q + k.T @ k
        pi = _sym(sla.solve_continuous_lyapunov(fk.T, -rhs))
        k = b.T @ pi
        res = care_residual(f, b, q, pi)
        history.append(res)
        if res <= rtol:
            break
    else:
        raise ValueError(
            f"newton iteration did not reach {rtol:.0e} in {max_iter} steps "
            f"(last residual {history[-1]:.2e})"
        )
    lam_min = float(np.min(np.linalg.eigvalsh(pi)))
    if lam_min < -1e-8 * max(np.linalg.norm(pi), 1e-300):
        raise ValueError(f"riccati solution not PSD (lambda_min {lam_min:.2e})")
    abscissa = float(np.max(np.linalg.eigvals(f - b @ (b.T @ pi)).real))
    return RiccatiSolution(pi=pi, gain=b.T @ pi, residual=res,
                           iterations=it, closed_loop_abscissa=abscissa,
                           history=history)


def lift_riccati(pihat: np.ndarray, rmap) -> np.ndarray:
    """Full-space Pi = S^T Pihat S with S the reduction row map.

    S y are the reduced coordinates of the zero-mean part of y, so the
    lifted Pi annihilates the stationary state by construction and acts on
    densities through their fluctuation only.
    """
    k = rmap.grid.k
    pihat = np.asarray(pihat, dtype=float)
    if pihat.shape != (k - 1, k - 1):
        raise ValueError("pihat has wrong shape for this grid")
    eye = np.eye(k)
    s_map = np.empty((k - 1, k))
    for j in range(k):
        s_map[:, j] = rmap.reduce(eye[:, j])
    return s_map.T @ pihat @ s_map

"""Control shape synthesis by singular Neumann elliptic solves.

The control enters the dynamics through div(rho * grad(alpha)); a shape
alpha is synthesized so that the resulting control direction B = N rho_inf
excites the slow modes.  Both recipes lead to the same singular elliptic
problem div(rho_inf * grad(alpha)) = rhs with no-flux boundary, solvable
exactly when rhs has zero weighted mean; the zero-mean solution
representative is picked by a bordered saddle solve.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid2D
from .linop import LinOp
from .reduction import ReductionMap
from .spectral import SpectralData


def elliptic_operator(rho_inf: np.ndarray, g: Grid2D) -> LinOp:
    """Flux-form discretization of div(rho_inf * grad(.)), no-flux closure.

    Face coefficients are harmonic means of the adjacent rho_inf values;
    the assembly emits symmetric entry pairs so C = C^T holds exactly and
    constants span the kernel.
    """
    rho = np.asarray(rho_inf, dtype=float)
    if rho.shape[0] != g.k:
        raise ValueError("rho_inf length does not match grid")
    if np.min(rho) <= 0:
        raise ValueError("rho_inf must be strictly positive for the flux form")
    arr = g.reshape(rho)
    rows, cols, vals = [], [], []

    def add_faces(left_idx, right_idx, h):
        a = rho[left_idx]
        b = rho[right_idx]
        c = 2.0 * a * b / (a + b) / h**2
        rows.extend([left_idx, right_idx])
        cols.extend([right_idx, left_idx])
        vals.extend([c, c])

    i1, i2 = g.multi_index(np.arange(g.k))
    m1 = i1 < g.nx1 - 1
    add_faces(np.arange(g.k)[m1], np.arange(g.k)[m1] + 1, g.h1)
    m2 = i2 < g.nx2 - 1
    add_faces(np.arange(g.k)[m2], np.arange(g.k)[m2] + g.nx1, g.h2)

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    diag = -np.bincount(rows, weights=vals, minlength=g.k)
    rows = np.concatenate([rows, np.arange(g.k)])
    cols = np.concatenate([cols, np.arange(g.k)])
    vals = np.concatenate([vals, diag])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(g.k, g.k)).tocsr()
    return LinOp(matrix=mat, tag="elliptic", grid=g)


@dataclass
class ShapeProblem:
    """An elliptic shape problem together with its solution and residual."""

    c: LinOp
    rhs: np.ndarray
    alpha: np.ndarray
    residual: float
    source: str  # which recipe produced the rhs


def solve_shape(c: LinOp, rhs: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Zero-mean solution of C alpha = rhs via the bordered saddle system.

    The border vector is the weighted constant, so the saddle solve acts as
    the pseudoinverse on the compatible complement while pinning the mean
    of alpha to zero.  Incompatible right-hand sides are projected with a
    warning.
    """
    if c.tag != "elliptic":
        raise ValueError(f"expected tag 'elliptic', got {c.tag!r}")
    g = c.grid
    rhs = np.asarray(rhs, dtype=float)
    one = np.full(g.k, g.w)
    imbalance = float(np.dot(one, rhs))
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros(g.k)
    if abs(imbalance) > 1e-10 * g.w * np.sqrt(g.k) * rhs_norm:
        warnings.warn(
            f"shape rhs incompatible by {imbalance:.2e}; projecting onto "
            "zero weighted mean",
            stacklevel=2,
        )
        rhs = rhs - imbalance / (g.w * g.k)
        if np.linalg.norm(rhs) <= 1e-14 * rhs_norm:
            # nothing solvable left: the rhs was pure mean
            return np.zeros(g.k)
    sys = sp.bmat(
        [[c.matrix, one.reshape(-1, 1)],
         [sp.csr_matrix(one.reshape(1, -1)), None]],
        format="csc",
    )
    try:
        sol = spla.splu(sys).solve(np.concatenate([rhs, [0.0]]))
    except RuntimeError as exc:
        raise ValueError(f"saddle solve failed: {exc}")
    alpha = sol[:-1]
    res = np.linalg.norm(c.matrix @ alpha - rhs) / np.linalg.norm(rhs)
    if res > rtol:
        raise ValueError(f"elliptic solve residual {res:.2e} > {rtol:.0e}")
    return alpha


def riccati_rhs(spec: SpectralData, d: int, phi_exponent: np.ndarray,
                rmap: ReductionMap) -> np.ndarray:
    """Right-hand side P sum_{i=2..d} e^{-Phi} phi_i for the shape solve."""
    if spec.count < d:
        raise ValueError(f"need eigenvectors up to index {d}, have {spec.count}")
    lams = spec.eigenvalues
    if np.max(np.abs(lams[:d].imag)) > 0:
        raise ValueError(
            "complex eigenvalue inside the controlled cluster; the shape "
            "recipe is defined for real slow modes"
        )
    weight = np.exp(-np.asarray(phi_exponent, dtype=float))
    acc = np.zeros(spec.grid.k)
    for i in range(2, d + 1):
        acc += weight * spec.phi_i(i).real
    return rmap.project_p(acc)


def lyapunov_rhs(spec: SpectralData) -> np.ndarray:
    """Right-hand side psi_2 (the slowest density-side eigenvector)."""
    psi2 = spec.psi_i(2)
    if np.iscomplexobj(psi2):
        raise ValueError("psi_2 is complex; the recipe needs a real slow mode")
    return np.asarray(psi2, dtype=float)


@dataclass
class HautusReport:
    margins: dict
    passed: bool
    threshold: float
    note: str = ""

    def __str__(self):
        entries = ", ".join(f"m_{j} = {v:.3e}" for j, v in self.margins.items())
        status = "PASS" if self.passed else "STABILIZABILITY FAILURE"
        extra = f" ({self.note})" if self.note else ""
        return f"hautus margins: {entries} -> {status}{extra}"


def hautus_margins(bhat: np.ndarray, spec: SpectralData, d: int,
                   rmap: ReductionMap, threshold: float = 1e-6,
                   required=None) -> HautusReport:
    """Normalized couplings of the control direction to the shifted modes.

    The adjoint-side eigenvectors of the reduced operator are obtained from
    the full-space ones by the exact correspondence phi_hat = (R^T phi)
    truncated; the margin is |<bhat, phi_hat_j>| / (|bhat| |phi_hat_j|).
    All margins 2..d are reported; the verdict covers `required` (default
    all of them).  A shape built to reach a single mode is deliberately
    orthogonal to the rest, so its caller restricts the verdict.
    """
    bhat = np.asarray(bhat)
    bnorm = np.linalg.norm(bhat)
    margins = {}
    for j in range(2, d + 1):
        phi = spec.phi_i(j)
        phip = phi[rmap.perm]
        phihat = phip[:-1] - phip[-1]
        denom = bnorm * np.linalg.norm(phihat)
        margins[j] = float(abs(np.vdot(bhat, phihat)) / denom) if denom > 0 else 0.0
    required = tuple(range(2, d + 1)) if required is None else tuple(required)
    unknown = [j for j in required if j not in margins]
    if unknown:
        raise ValueError(f"required modes {unknown} outside the computed range")
    passed = all(margins[j] >= threshold for j in required)
    note = "" if passed else "control direction nearly orthogonal to a required mode"
    if required != tuple(range(2, d + 1)):
        scope = f"verdict covers modes {sorted(required)}"
        note = f"{note}; {scope}" if note else scope
    return HautusReport(margins=margins, passed=passed, threshold=threshold, note=note)


def rotate_shape(alpha: np.ndarray, g: Grid2D) -> np.ndarray:
    """Aspect-scaled quarter turn of a shape on the rectangle.

    Resamples alpha under (x1, x2) -> (s*x2, -x1/s) with s the aspect ratio,
    relative to the domain center, using bilinear interpolation with
    constant extension at the corners, then removes the weighted mean.
    """
    from scipy.interpolate import RegularGridInterpolator

    alpha = np.asarray(alpha, dtype=float)
    a1, b1, a2, b2 = g.bounds
    c1, c2 = 0.5 * (a1 + b1), 0.5 * (a2 + b2)
    s = (b1 - a1) / (b2 - a2)
    interp = RegularGridInterpolator(
        (g.x2, g.x1), g.reshape(alpha), method="linear",
        bounds_error=False, fill_value=None,
    )
    x1, x2 = g.nodes()
    u1 = np.clip(c1 + s * (x2 - c2), a1, b1)
    u2 = np.clip(c2 - (x1 - c1) / s, a2, b2)
    rotated = interp(np.column_stack([u2, u1]))
    return rotated - np.sum(rotated) / g.k


def shape_to_csv(alpha: np.ndarray, g: Grid2D, path) -> None:
    """Dump a shape as an (nx2 rows) x (nx1 cols) CSV grid."""
    np.savetxt(path, g.reshape(alpha), delimiter=",", fmt="%.16e")

"""Leading spectrum of the generator, the shift delta, and the rate mu.

The generator's spectrum sits in the closed left half-plane with a simple
eigenvalue at zero (mass conservation).  Everything here works on the
leading cluster: the m eigenvalues of smallest |Re|, their density-side
eigenvectors (psi, eigenvectors of A), and test-function-side eigenvectors
(phi, eigenvectors of A^T, with phi_1 the constant).  Eigenvectors are
normalized to unit weighted L2 norm with the first nonnegligible component
positive, so downstream gains are reproducible.
"""

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid2D, weighted_norm
from .linop import LinOp, as_matrix
from .reduction import ReducedSystem

DENSE_LIMIT = 2500
RESIDUAL_TOL = 1e-8


def _fix_scale(vec: np.ndarray, w: float) -> np.ndarray:
    """Unit weighted norm; first nonnegligible component (made) positive."""
    nrm = np.sqrt(w) * np.linalg.norm(vec)
    v = vec / nrm
    mags = np.abs(v)
    lead = int(np.argmax(mags > 1e-8 * mags.max()))
    pivot = v[lead]
    if np.iscomplexobj(v):
        phase = pivot / abs(pivot)
        v = v / phase
        if np.max(np.abs(v.imag)) <= 1e-10 * np.max(np.abs(v.real)):
            v = v.real.copy()
    elif pivot < 0:
        v = -v
    return v


def _sort_key(lams: np.ndarray) -> np.ndarray:
    return np.lexsort((np.abs(lams.imag), -lams.real))


@dataclass
class SpectralData:
    """Leading eigenpairs; psi are density-side, phi test-function-side."""

    eigenvalues: np.ndarray  # sorted by descending real part
    psi: np.ndarray  # k x m, columns unit weighted norm
    phi: np.ndarray  # k x m
    residual_psi: np.ndarray
    residual_phi: np.ndarray
    grid: Grid2D
    op_norm: float

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def eigenvalue(self, i: int) -> complex:
        """1-based accessor matching the lambda_1 = 0 convention."""
        return self.eigenvalues[i - 1]

    def psi_i(self, i: int) -> np.ndarray:
        return self.psi[:, i - 1]

    def phi_i(self, i: int) -> np.ndarray:
        return self.phi[:, i - 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "re_lambda", "im_lambda",
                             "residual_psi", "residual_phi"])
            for i, lam in enumerate(self.eigenvalues):
                writer.writerow(
                    [i + 1, f"{lam.real:.16e}", f"{lam.imag:.16e}",
                     f"{self.residual_psi[i]:.3e}", f"{self.residual_phi[i]:.3e}"]
                )


def _dense_two_sided(mat: np.ndarray, m: int):
    lams, vl, vr = sla.eig(mat, left=True, right=True)
    order = _sort_key(lams)[:m]
    return lams[order], vr[:, order], vl[:, order]


def _sparse_two_sided(mat: sp.spmatrix, m: int, sigma: float):
    howmany = min(mat.shape[0] - 2, max(2 * m, m + 6))
    lams, vr = spla.eigs(mat, k=howmany, sigma=sigma)
    lams_t, vl = spla.eigs(mat.T.tocsc(), k=howmany, sigma=sigma)
    order = _sort_key(lams)[:m]
    lams, vr = lams[order], vr[:, order]
    order_t = _sort_key(lams_t)
    lams_t, vl = lams_t[order_t], vl[:, order_t]
    # pair the adjoint side to conj(lambda), matching the dense convention
    cols = []
    for lam in lams:
        j = int(np.argmin(np.abs(lams_t - np.conj(lam))))
        if abs(lams_t[j] - np.conj(lam)) > 1e-6 * max(1.0, abs(lam)):
            raise ValueError(
                f"could not pair adjoint eigenvector for eigenvalue {lam:.6e}"
            )
        cols.append(vl[:, j])
    return lams, vr, np.column_stack(cols)


def leading_eigenpairs(op, m: int, rtol: float = RESIDUAL_TOL) -> SpectralData:
    """The m eigenpairs of smallest |Re lambda|, residual-certified.

    Accepts the assembled generator (LinOp).  Dense solves up to
    DENSE_LIMIT unknowns, shift-invert targeting the origin above.
    """
    if m > 12:
        raise ValueError("leading-cluster scope is m <= 12")
    if not isinstance(op, LinOp) or op.tag != "generator":
        raise ValueError("leading_eigenpairs expects the assembled generator")
    g = op.grid
    mat = op.matrix
    op_norm = sp.linalg.norm(mat, "fro")

    if g.k <= DENSE_LIMIT:
        lams, vr, vl = _dense_two_sided(mat.toarray(), m)
    else:
        lams, vr, vl = _sparse_two_sided(mat, m, sigma=1.0)

    w = g.w
    psi = np.column_stack([_fix_scale(vr[:, i], w) for i in range(m)])
    phi = np.column_stack([_fix_scale(vl[:, i], w) for i in range(m)])

    res_psi = np.array(
        [np.linalg.norm(mat @ psi[:, i] - lams[i] * psi[:, i]) / op_norm
         for i in range(m)]
    )
    res_phi = np.array(
        [np.linalg.norm(mat.T @ phi[:, i] - np.conj(lams[i]) * phi[:, i]) / op_norm
         for i in range(m)]
    )
    # adjoint eigenvectors of a real matrix pair with conjugated eigenvalues;
    # for the real leading cluster this is just A^T phi = lambda phi
    bad = [(i + 1, float(max(res_psi[i], res_phi[i])))
           for i in range(m) if max(res_psi[i], res_phi[i]) > rtol]
    if bad:
        raise ValueError(f"non-converged eigenpairs (index, residual): {bad}")

    if np.max(np.abs(lams.imag)) <= 1e-10 * max(1.0, np.max(np.abs(lams.real))):
        lams = lams.real.astype(float)
        psi = psi.real
        phi = phi.real
    return SpectralData(
        eigenvalues=lams,
        psi=psi,
        phi=phi,
        residual_psi=res_psi,
        residual_phi=res_phi,
        grid=g,
        op_norm=float(op_norm),
    )


def symmetrize(a: LinOp, phi_exponent: np.ndarray):
    """Similarity transform S = D A D^-1 with D = diag(e^{Phi/2}).

    Returns (S, defect) where defect = ||S - S^T|| / ||S|| in Frobenius
    norms; the upwinding leaves an O(h) defect.
    """
    if a.tag != "generator":
        raise ValueError(f"expected tag 'generator', got {a.tag!r}")
    expo = 0.5 * (np.asarray(phi_exponent) - np.max(phi_exponent))
    d = np.exp(expo)
    mat = sp.diags(d) @ a.matrix @ sp.diags(1.0 / d)
    defect = sp.linalg.norm(mat - mat.T, "fro") / sp.linalg.norm(mat, "fro")
    return LinOp(matrix=mat.tocsr(), tag="generator", grid=a.grid), float(defect)


def choose_delta(spec: SpectralData, d: int, override: float = None) -> float:
    """Shift so the d slowest modes (and only they) become unstable.

    Default is the midpoint of |Re lambda_d| and |Re lambda_{d+1}|.
    """
    if d < 2:
        raise ValueError("need d >= 2")
    if spec.count < d + 1:
        raise ValueError(f"need at least {d + 1} eigenvalues, have {spec.count}")
    re = spec.eigenvalues.real
    gap = abs(re[d] - re[d - 1])
    if gap < 1e-8:
        raise ValueError(
            f"no spectral gap after mode {d}: Re lambda_{d} = {re[d - 1]:.6e}, "
            f"Re lambda_{d + 1} = {re[d]:.6e}"
        )
    if override is not None:
        delta = float(override)
    else:
        delta = 0.5 * (abs(re[d - 1]) + abs(re[d]))
    if not (abs(re[d - 1]) <= delta < abs(re[d])):
        raise ValueError(
            f"delta = {delta:.6e} does not separate modes {d} and {d + 1}"
        )
    return delta


def choose_mu(sys: ReducedSystem, k_h1, margin: float = 0.01) -> float:
    """Smallest safe rate mu with <(mu I - Ahat)y, y> >= H1 norm of y.

    Solves the symmetric generalized eigenproblem
    (sym(What Ahat) + Khat) v = mu What v and pads the top eigenvalue by the
    margin.
    """
    rmap = sys.rmap
    what = rmap.mass_gram()
    khat = rmap.reduce_gram(as_matrix(k_h1))
    lhs = 0.5 * (what @ sys.ahat + sys.ahat.T @ what)
    lhs = 0.5 * (lhs + lhs.T) + khat
    try:
        top = sla.eigh(
            lhs, 0.5 * (what + what.T),
            eigvals_only=True,
            subset_by_index=[sys.dim - 1, sys.dim - 1],
        )[0]
    except sla.LinAlgError as exc:
        raise ValueError(f"reduced mass gram is not positive definite: {exc}")
    return float((1.0 + margin) * top)


def mu_probe_margin(sys: ReducedSystem, k_h1, mu: float,
                    n_probes: int = 1000, seed: int = 0) -> float:
    """Min over random probes of mu<y,y> - <Ahat y, y> - |y|_H1^2 (weighted)."""
    rmap = sys.rmap
    khat = rmap.reduce_gram(as_matrix(k_h1))
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(n_probes):
        y = rng.standard_normal(sys.dim)
        wy = rmap.apply_mass_gram(y)
        val = mu * np.dot(y, wy) - np.dot(sys.ahat @ y, wy) - np.dot(y, khat @ y)
        worst = min(worst, val)
    return float(worst)

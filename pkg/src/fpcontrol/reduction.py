"""Zero-mean projection and reduction of the mass-conserving dynamics.

The generator conserves mass (A^T one = 0) and fixes the stationary density
(A rho_inf = 0), so the dynamics decouple into the mass coordinate and a
zero-mean remainder.  The reduction matrix R realizes that splitting:
R e_k = rho_inf and R^T one = e_k, where one = w*(1,...,1)^T carries the
quadrature weight.  In these coordinates reducing a zero-mean field is a
truncation and lifting appends the negated sum, so both are O(k) and exact.

The anchor coordinate is always permuted to the node of maximal rho_inf;
the permutation is recorded and undone on lift.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid2D, mass
from .linop import LinOp, as_matrix

IDENTITY_TOL = 1e-10


def projector_P(rho_inf: np.ndarray, g: Grid2D) -> LinOp:
    """Dense projector P = I - rho_inf*one^T onto zero-mass fields.

    Only intended for small grids and tests; everywhere else the rank-1
    action of ReductionMap.project_p is used.
    """
    if abs(mass(g, rho_inf) - 1.0) > 1e-10:
        raise ValueError("rho_inf must have unit mass")
    one = np.full(g.k, g.w)
    p = np.eye(g.k) - np.outer(rho_inf, one)
    return LinOp(matrix=sp.csr_matrix(p), tag="projector", grid=g)


@dataclass
class ReductionMap:
    """R-factors of the splitting, held in rank-structured form.

    perm maps reduced positions to original node indices; rho_p is the
    stationary state in permuted order (anchor last).
    """

    grid: Grid2D
    rho_inf: np.ndarray
    perm: np.ndarray

    def __post_init__(self):
        g = self.grid
        rho = np.asarray(self.rho_inf, dtype=float)
        if rho.shape[0] != g.k:
            raise ValueError("rho_inf length does not match grid")
        if abs(mass(g, rho) - 1.0) > 1e-10:
            raise ValueError("rho_inf must have unit mass")
        self.rho_p = rho[self.perm]
        if self.rho_p[-1] == 0.0:
            raise ValueError("anchor entry of rho_inf vanishes")

    # -- projections in the full space (original node order) ---------------
    def mass_of(self, y: np.ndarray) -> float:
        return float(self.grid.w * np.sum(y))

    def project_p(self, y: np.ndarray) -> np.ndarray:
        """P y = y - rho_inf * <one, y>: kills the mass component."""
        return np.asarray(y, dtype=float) - self.mass_of(y) * self.rho_inf

    def project_q(self, y: np.ndarray) -> np.ndarray:
        """Q y = rho_inf * <one, y>: the mass component along rho_inf."""
        return self.mass_of(y) * self.rho_inf

    def theta(self, y: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto zero-mean fields (subtract the average)."""
        y = np.asarray(y, dtype=float)
        return y - (self.grid.w * np.sum(y)) / (self.grid.w * self.grid.k)

    # -- reduced coordinates ------------------------------------------------
    def reduce(self, y: np.ndarray) -> np.ndarray:
        """Coordinates of the zero-mean part: selector^T R^-1 y."""
        yp = np.asarray(y, dtype=float)[self.perm]
        m = self.grid.w * np.sum(yp)
        return yp[:-1] - m * self.rho_p[:-1]

    def lift(self, yhat: np.ndarray) -> np.ndarray:
        """R [yhat; 0] = the zero-mean field with the given coordinates."""
        yhat = np.asarray(yhat, dtype=float)
        yp = np.empty(self.grid.k)
        yp[:-1] = yhat
        yp[-1] = -np.sum(yhat)
        out = np.empty(self.grid.k)
        out[self.perm] = yp
        return out

    def lift_adjoint(self, phihat: np.ndarray) -> np.ndarray:
        """R^-T [phihat; 0]: lifts eigenvectors of Ahat^T to ones of A^T."""
        phihat = np.asarray(phihat, dtype=float)
        w = self.grid.w
        shift = w * np.dot(self.rho_p[:-1], phihat)
        yp = np.empty(self.grid.k)
        yp[:-1] = phihat - shift
        yp[-1] = -shift
        out = np.empty(self.grid.k)
        out[self.perm] = yp
        return out

    # -- matrix reductions ----------------------------------------------------
    def reduce_matrix(self, a, check: bool = True, tol: float = IDENTITY_TOL) -> np.ndarray:
        """Dense Ahat = selector^T R^-1 A R selector, with nullity check.

        The transformed R^-1 A R must have (numerically) null last row and
        column; anything else means the identities A rho_inf = 0 or
        A^T one = 0 are broken.
        """
        a = as_matrix(a)
        k = self.grid.k
        w = self.grid.w
        ap = a[self.perm][:, self.perm].tocsc()
        last_col = np.asarray(ap[:, -1].todense()).ravel()
        dense = ap[:, :-1].toarray()
        dense -= last_col[:, None]
        col_sums = np.asarray(ap.sum(axis=0)).ravel()
        tilde_cols = col_sums[:-1] - col_sums[-1]  # column sums of A R selector
        ahat = dense[:-1, :] - w * np.outer(self.rho_p[:-1], tilde_cols)

        if check:
            a_norm = max(sp.linalg.norm(a, "fro"), 1e-300)
            t = ap @ self.rho_p  # last column of A R
            last_col_red = np.concatenate(
                [t[:-1] - w * self.rho_p[:-1] * np.sum(t) ,
                 [w * np.sum(t)]]
            )
            last_row = w * np.concatenate([tilde_cols, [np.sum(t)]])
            res = max(np.linalg.norm(last_col_red), np.linalg.norm(last_row)) / a_norm
            if res > tol:
                raise ValueError(
                    f"reduction failed: last row/column of R^-1 A R has relative "
                    f"norm {res:.2e} > {tol:.0e}"
                )
        return ahat

    def reduce_gram(self, m) -> np.ndarray:
        """Dense Mhat = (R selector)^T M (R selector) for symmetric M."""
        md = as_matrix(m)[self.perm][:, self.perm].toarray()
        core = md[:-1, :-1]
        col = md[:-1, -1]
        row = md[-1, :-1]
        return core - col[:, None] - row[None, :] + md[-1, -1]

    def mass_gram(self) -> np.ndarray:
        """Reduced gram of the weighted L2 inner product: w*(I + 1 1^T)."""
        n = self.grid.k - 1
        return self.grid.w * (np.eye(n) + np.ones((n, n)))

    def apply_mass_gram(self, yhat: np.ndarray) -> np.ndarray:
        return self.grid.w * (yhat + np.sum(yhat))

    def solve_mass_gram(self, zhat: np.ndarray) -> np.ndarray:
        """Inverse gram action via Sherman-Morrison: (1/w)*(z - sum(z)/k)."""
        return (zhat - np.sum(zhat) / self.grid.k) / self.grid.w

    def reduced_inner(self, yhat: np.ndarray, zhat: np.ndarray) -> float:
        """Weighted L2 inner product of the lifted fields, computed reducedly."""
        return float(self.grid.w * (np.dot(yhat, zhat) + np.sum(yhat) * np.sum(zhat)))

    # -- dense factors (small grids / serialization checks) -----------------
    def r_dense(self) -> np.ndarray:
        k = self.grid.k
        r = np.zeros((k, k))
        r[np.arange(k - 1), np.arange(k - 1)] = 1.0
        r[-1, :-1] = -1.0
        r[:, -1] = self.rho_p
        return r

    def r_inv_dense(self) -> np.ndarray:
        k = self.grid.k
        w = self.grid.w
        c = np.concatenate([self.rho_p[:-1], [-1.0]])
        j = np.diag(np.concatenate([np.ones(k - 1), [0.0]]))
        return j - w * np.outer(c, np.ones(k))


def build_R(rho_inf: np.ndarray, g: Grid2D) -> ReductionMap:
    """Reduction factors anchored at the node of maximal rho_inf."""
    rho = np.asarray(rho_inf, dtype=float)
    anchor = int(np.argmax(rho))
    perm = np.arange(g.k)
    perm[anchor], perm[-1] = perm[-1], perm[anchor]
    return ReductionMap(grid=g, rho_inf=rho, perm=perm)


@dataclass
class ReducedSystem:
    """Shifted zero-mean subsystem (Ahat, Bhat, Mhat) plus its reduction map."""

    ahat: np.ndarray
    bhat: np.ndarray
    mhat: np.ndarray
    rmap: ReductionMap
    delta: float

    @property
    def rho_inf(self) -> np.ndarray:
        return self.rmap.rho_inf

    @property
    def grid(self) -> Grid2D:
        return self.rmap.grid

    @property
    def dim(self) -> int:
        return self.ahat.shape[0]

    def save(self, path) -> None:
        g = self.grid
        np.savez_compressed(
            path,
            ahat=self.ahat,
            bhat=self.bhat,
            mhat=self.mhat,
            rho_inf=self.rmap.rho_inf,
            perm=self.rmap.perm,
            delta=self.delta,
            grid_shape=np.array([g.nx1, g.nx2]),
            grid_bounds=np.array(g.bounds),
        )

    @staticmethod
    def load(path) -> "ReducedSystem":
        from .grid import build_grid

        dat = np.load(path)
        nx1, nx2 = (int(v) for v in dat["grid_shape"])
        g = build_grid(nx1, nx2, tuple(dat["grid_bounds"]))
        rmap = ReductionMap(grid=g, rho_inf=dat["rho_inf"], perm=dat["perm"])
        return ReducedSystem(
            ahat=dat["ahat"],
            bhat=dat["bhat"],
            mhat=dat["mhat"],
            rmap=rmap,
            delta=float(dat["delta"]),
        )


def reduce_system(a, b: np.ndarray, m, rmap: ReductionMap, delta: float) -> ReducedSystem:
    """Build the reduced shifted system of the zero-mean dynamics.

    m = None selects the default cost (identity on the zero-mean subspace in
    the weighted geometry), whose reduced gram is exactly w*(I + 1 1^T).
    """
    g = rmap.grid
    amat = as_matrix(a)
    b = np.asarray(b, dtype=float)
    one = np.full(g.k, g.w)

    a_norm = max(sp.linalg.norm(amat, "fro"), 1e-300)
    pre = {
        "A rho_inf": np.linalg.norm(amat @ rmap.rho_inf)
        / (a_norm * np.linalg.norm(rmap.rho_inf)),
        "A^T one": np.linalg.norm(amat.T @ one) / (a_norm * g.w),
        "B^T one": abs(np.dot(b, one)) / max(np.linalg.norm(b) * g.w, 1e-300),
    }
    bad = {k: v for k, v in pre.items() if v > IDENTITY_TOL}
    if bad:
        raise ValueError(f"reduction preconditions violated: {bad}")

    ahat = rmap.reduce_matrix(amat)
    bhat = rmap.reduce(b)
    mhat = rmap.mass_gram() if m is None else rmap.reduce_gram(m)
    return ReducedSystem(ahat=ahat, bhat=bhat, mhat=mhat, rmap=rmap, delta=float(delta))


@dataclass
class IdentityReport:
    residuals: dict
    passed: bool
    tol: float

    def __str__(self):
        lines = [f"decoupling identities (tol {self.tol:.0e}):"]
        for name, val in self.residuals.items():
            lines.append(f"  {name:10s} {val:.3e}")
        lines.append(f"  -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def verify_identities(a, n, b: np.ndarray, rho_inf: np.ndarray, g: Grid2D,
                      tol: float = IDENTITY_TOL) -> IdentityReport:
    """Residuals of QA = 0, PA = A, QN = 0, PN = N, PB = B, QB = 0.

    Q = rho_inf one^T is rank one, so every residual reduces to a vector
    norm; nothing dense is formed.
    """
    amat = as_matrix(a)
    nmat = as_matrix(n)
    b = np.asarray(b, dtype=float)
    one = np.full(g.k, g.w)
    rho_norm = np.linalg.norm(rho_inf)

    a_norm = max(sp.linalg.norm(amat, "fro"), 1e-300)
    n_norm = max(sp.linalg.norm(nmat, "fro"), 1e-300)
    b_norm = max(np.linalg.norm(b), 1e-300)

    qa = rho_norm * np.linalg.norm(amat.T @ one) / a_norm
    qn = rho_norm * np.linalg.norm(nmat.T @ one) / n_norm
    qb = rho_norm * abs(np.dot(one, b)) / b_norm
    residuals = {
        "||QA||": qa,
        "||PA - A||": qa,
        "||QN||": qn,
        "||PN - N||": qn,
        "||PB - B||": qb,
        "||QB||": qb,
    }
    passed = all(v <= tol for v in residuals.values())
    return IdentityReport(residuals=residuals, passed=passed, tol=tol)

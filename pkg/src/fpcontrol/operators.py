"""Discrete generator, control operator, and stationary kernel.

The generator A acting on densities is assembled indirectly: first the
adjoint A*phi = nu*Laplace(phi) - grad(G).grad(phi) is discretized with a
5-point Neumann Laplacian and componentwise first-order upwinding, then A is
its plain transpose.  Under the uniform quadrature weight the plain
transpose coincides with the weighted adjoint, so mass conservation
(A^T one = 0) holds by construction instead of by accident.  The control
operator N rho = div(rho * grad(alpha)) is built along the same route from
N*phi = -grad(phi).grad(alpha).
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid2D, PotentialSpec, mass
from .linop import LinOp


def _axis_neighbors(g: Grid2D, axis: int):
    """Flat indices of the lower/upper neighbor along an axis, Neumann-mirrored.

    At a boundary node the outside neighbor is replaced by the inside one,
    which is exactly the ghost-node closure for a zero normal derivative.
    """
    i1, i2 = g.multi_index(np.arange(g.k))
    if axis == 0:
        lo_i = np.where(i1 > 0, i1 - 1, i1 + 1)
        hi_i = np.where(i1 < g.nx1 - 1, i1 + 1, i1 - 1)
        return g.flat_index(lo_i, i2), g.flat_index(hi_i, i2)
    lo_j = np.where(i2 > 0, i2 - 1, i2 + 1)
    hi_j = np.where(i2 < g.nx2 - 1, i2 + 1, i2 - 1)
    return g.flat_index(i1, lo_j), g.flat_index(i1, hi_j)


def _advection_diffusion_adjoint(g: Grid2D, nu: float, grad_fields) -> sp.csr_matrix:
    """Assemble nu*Laplace - v.grad with upwinding, acting on test functions.

    grad_fields is the pair of nodal advection components (v1, v2).  Only
    off-diagonal entries are generated; each diagonal is the negated row sum,
    so constants are in the kernel up to summation roundoff.
    """
    k = g.k
    idx = np.arange(k)
    # seeded with empties so a zero advection field still assembles
    rows = [np.empty(0, dtype=idx.dtype)]
    cols = [np.empty(0, dtype=idx.dtype)]
    vals = [np.empty(0)]
    for axis, h, vfield in ((0, g.h1, grad_fields[0]), (1, g.h2, grad_fields[1])):
        lo, hi = _axis_neighbors(g, axis)
        if nu > 0:
            c = nu / h**2
            rows.append(idx)
            cols.append(lo)
            vals.append(np.full(k, c))
            rows.append(idx)
            cols.append(hi)
            vals.append(np.full(k, c))
        v = np.asarray(vfield, dtype=float)
        up = v > 0  # -v*(phi_C - phi_lo)/h: weight v/h on the upwind neighbor
        if np.any(up):
            rows.append(idx[up])
            cols.append(lo[up])
            vals.append(v[up] / h)
        dn = v < 0  # -v*(phi_hi - phi_C)/h: weight -v/h on the downwind neighbor
        if np.any(dn):
            rows.append(idx[dn])
            cols.append(hi[dn])
            vals.append(-v[dn] / h)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    diag = -np.bincount(rows, weights=vals, minlength=k)
    rows = np.concatenate([rows, idx])
    cols = np.concatenate([cols, idx])
    vals = np.concatenate([vals, diag])
    return sp.coo_matrix((vals, (rows, cols)), shape=(k, k)).tocsr()


def assemble_adjoint_generator(spec: PotentialSpec, g: Grid2D) -> LinOp:
    """Upwind discretization of A*phi = nu*Laplace(phi) - grad(G).grad(phi)."""
    x1, x2 = g.nodes()
    g1, g2 = spec.grad(x1, x2)
    g1 = np.broadcast_to(np.asarray(g1, dtype=float), (g.k,))
    g2 = np.broadcast_to(np.asarray(g2, dtype=float), (g.k,))
    mat = _advection_diffusion_adjoint(g, spec.nu, (g1, g2))
    return LinOp(matrix=mat, tag="adjoint_generator", grid=g)


def generator_from_adjoint(astar: LinOp) -> LinOp:
    """The generator is the plain transpose of the assembled adjoint."""
    if astar.tag != "adjoint_generator":
        raise ValueError(f"expected tag 'adjoint_generator', got {astar.tag!r}")
    return LinOp(matrix=astar.matrix.T.tocsr(), tag="generator", grid=astar.grid)


def assemble_control_operator(alpha: np.ndarray, g: Grid2D) -> LinOp:
    """Control operator N rho = div(rho*grad(alpha)), via its upwinded adjoint.

    The nodal gradient of the discrete shape alpha is taken centered in the
    interior and one-sided at the boundary.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[0] != g.k:
        raise ValueError(f"shape field length {alpha.shape[0]} != grid size {g.k}")
    arr = g.reshape(alpha)
    da1 = np.gradient(arr, g.h1, axis=1).ravel()
    da2 = np.gradient(arr, g.h2, axis=0).ravel()
    nstar = _advection_diffusion_adjoint(g, 0.0, (da1, da2))
    return LinOp(matrix=nstar.T.tocsr(), tag="control", grid=g)


def control_vector(n: LinOp, rho_inf: np.ndarray) -> np.ndarray:
    """B = N rho_inf; zero-mean by construction."""
    if n.tag != "control":
        raise ValueError(f"expected tag 'control', got {n.tag!r}")
    return n.apply(rho_inf)


def _bordered_kernel_solve(a: sp.csr_matrix, border: np.ndarray) -> np.ndarray:
    """Solve for the kernel vector of a singular generator with a mass border."""
    k = a.shape[0]
    sys = sp.bmat(
        [[a, border.reshape(-1, 1)], [sp.csr_matrix(border.reshape(1, -1)), None]],
        format="csc",
    )
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    sol = spla.splu(sys).solve(rhs)
    return sol[:k]


def discrete_stationary(a: LinOp, tol: float = 1e-10) -> np.ndarray:
    """Exact discrete kernel of A, normalized to unit mass.

    The analytic density samples are only O(h) close to the kernel of the
    upwinded A; the projection algebra downstream needs A rho = 0 to solver
    precision, so the kernel is computed here by a bordered solve.
    """
    if a.tag != "generator":
        raise ValueError(f"expected tag 'generator', got {a.tag!r}")
    g = a.grid
    one = np.full(g.k, g.w)
    rho = _bordered_kernel_solve(a.matrix, one)

    a_norm = sp.linalg.norm(a.matrix, "fro")
    res = np.linalg.norm(a.matrix @ rho) / (a_norm * np.linalg.norm(rho))
    if not np.isfinite(res) or res > tol:
        raise ValueError(
            f"kernel solve failed: relative residual {res:.2e} > {tol:.0e}"
        )

    # A second, randomized border must reproduce the same direction; if it
    # does not, the kernel is more than one-dimensional.
    rng = np.random.default_rng(12345)
    border2 = one * (1.0 + 0.5 * rng.random(g.k))
    rho2 = _bordered_kernel_solve(a.matrix, border2)
    rho2 = rho2 / (g.w * rho2.sum())
    rho_n = rho / (g.w * rho.sum())
    if np.linalg.norm(rho2 - rho_n) / np.linalg.norm(rho_n) > 1e-6:
        raise ValueError("multiple kernel directions detected: assembly is broken")

    peak = float(np.max(rho_n))
    if np.min(rho_n) < -1e-12 * peak:
        raise ValueError(
            f"kernel vector not nonnegative (min {np.min(rho_n):.2e}); "
            "assembly is broken"
        )
    rho_n = np.maximum(rho_n, 0.0)
    return rho_n / (g.w * rho_n.sum())


def export_matrix_market(op: LinOp, path) -> None:
    """Write an operator to a matrix-market text file for external cross-checks."""
    from scipy.io import mmwrite

    mmwrite(str(path), op.matrix.tocoo(), comment=f"tag={op.tag}")


def neumann_laplacian(g: Grid2D, nu: float = 1.0) -> LinOp:
    """nu times the 5-point Laplacian with mirror-ghost Neumann closure."""
    zero = np.zeros(g.k)
    mat = _advection_diffusion_adjoint(g, nu, (zero, zero))
    return LinOp(matrix=mat, tag="adjoint_generator", grid=g)

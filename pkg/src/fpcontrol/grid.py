"""Grid, potential, stationary state, and the discrete inner products.

Everything downstream is measured in the conventions fixed here: nodes are
vertex-centered including the boundary, fields are flat arrays in row-major
order with axis 1 fastest, and the quadrature carries a single uniform
weight w = h1*h2 at every node.  The discrete constant-mass functional is
m(rho) = w * sum(rho); the vector realizing it is w*ones, so that
m(rho_inf) = 1 after normalization.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .linop import LinOp


@dataclass(frozen=True)
class Grid2D:
    """Vertex-centered tensor grid on a rectangle (a1,b1) x (a2,b2)."""

    nx1: int
    nx2: int
    bounds: tuple  # (a1, b1, a2, b2)
    h1: float
    h2: float
    w: float
    k: int

    @property
    def x1(self) -> np.ndarray:
        a1, b1, _, _ = self.bounds
        return np.linspace(a1, b1, self.nx1)

    @property
    def x2(self) -> np.ndarray:
        _, _, a2, b2 = self.bounds
        return np.linspace(a2, b2, self.nx2)

    def nodes(self):
        """Flat coordinate arrays (X1, X2), axis 1 fastest."""
        return np.tile(self.x1, self.nx2), np.repeat(self.x2, self.nx1)

    def flat_index(self, i1, i2):
        return np.asarray(i2) * self.nx1 + np.asarray(i1)

    def multi_index(self, idx):
        idx = np.asarray(idx)
        return idx % self.nx1, idx // self.nx1

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """View a flat field as an (nx2, nx1) array."""
        return np.asarray(values).reshape(self.nx2, self.nx1)

    def nearest_node(self, x1: float, x2: float) -> int:
        i1 = int(np.argmin(np.abs(self.x1 - x1)))
        i2 = int(np.argmin(np.abs(self.x2 - x2)))
        return self.flat_index(i1, i2)


def build_grid(nx1: int, nx2: int, bounds) -> Grid2D:
    """Build a vertex-centered grid; bounds = (a1, b1, a2, b2)."""
    a1, b1, a2, b2 = (float(v) for v in bounds)
    if nx1 < 3 or nx2 < 3:
        raise ValueError(f"need at least 3 nodes per axis, got {nx1} x {nx2}")
    if not (b1 > a1 and b2 > a2):
        raise ValueError(f"degenerate bounds {bounds}")
    h1 = (b1 - a1) / (nx1 - 1)
    h2 = (b2 - a2) / (nx2 - 1)
    return Grid2D(
        nx1=int(nx1),
        nx2=int(nx2),
        bounds=(a1, b1, a2, b2),
        h1=h1,
        h2=h2,
        w=h1 * h2,
        k=int(nx1) * int(nx2),
    )


@dataclass(frozen=True)
class PotentialSpec:
    """Closed-form confining potential G with analytic gradient and diffusion nu."""

    name: str
    nu: float
    g: Callable
    grad: Callable  # grad(x1, x2) -> (dG/dx1, dG/dx2)
    params: dict = field(default_factory=dict)


def make_potential(name: str, nu: float = 1.0, **params) -> PotentialSpec:
    """Potentials selectable by name: double_well, quadratic, flat."""
    if nu <= 0:
        raise ValueError(f"diffusion nu must be positive, got {nu}")
    if name == "double_well":
        c1 = float(params.pop("c1", 3.0))
        c2 = float(params.pop("c2", 6.0))
        if params:
            raise ValueError(f"unknown double_well parameters {sorted(params)}")

        def g(x1, x2):
            return c1 * (x1**2 - 1.0) ** 2 + c2 * x2**2

        def grad(x1, x2):
            return 4.0 * c1 * x1 * (x1**2 - 1.0), 2.0 * c2 * x2

        return PotentialSpec(name, nu, g, grad, {"c1": c1, "c2": c2})
    if name == "quadratic":
        q1 = float(params.pop("q1", 1.0))
        q2 = float(params.pop("q2", 1.0))
        m1 = float(params.pop("m1", 0.0))
        m2 = float(params.pop("m2", 0.0))
        if params:
            raise ValueError(f"unknown quadratic parameters {sorted(params)}")

        def g(x1, x2):
            return 0.5 * q1 * (x1 - m1) ** 2 + 0.5 * q2 * (x2 - m2) ** 2

        def grad(x1, x2):
            return q1 * (x1 - m1), q2 * (x2 - m2)

        return PotentialSpec(name, nu, g, grad, {"q1": q1, "q2": q2, "m1": m1, "m2": m2})
    if name == "flat":
        c = float(params.pop("c", 0.0))
        if params:
            raise ValueError(f"unknown flat parameters {sorted(params)}")

        def g(x1, x2):
            return c + 0.0 * x1 + 0.0 * x2

        def grad(x1, x2):
            return 0.0 * x1, 0.0 * x2

        return PotentialSpec(name, nu, g, grad, {"c": c})
    raise ValueError(f"unknown potential name {name!r}")


def check_gradient(spec: PotentialSpec, n_points: int = 20, seed: int = 0,
                   step: float = 1e-5, tol: float = 1e-6) -> float:
    """Finite-difference validation of the analytic gradient at random points."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-1.2, 1.2, n_points)
    x2 = rng.uniform(-0.9, 0.9, n_points)
    g1, g2 = spec.grad(x1, x2)
    fd1 = (spec.g(x1 + step, x2) - spec.g(x1 - step, x2)) / (2 * step)
    fd2 = (spec.g(x1, x2 + step) - spec.g(x1, x2 - step)) / (2 * step)
    scale = np.maximum(np.hypot(g1, g2), 1.0)
    err = float(np.max(np.hypot(fd1 - g1, fd2 - g2) / scale))
    if err > tol:
        raise ValueError(f"gradient check failed: relative error {err:.2e} > {tol:.0e}")
    return err


def eval_potential(spec: PotentialSpec, g: Grid2D) -> np.ndarray:
    """Nodal samples of G."""
    x1, x2 = g.nodes()
    return np.asarray(spec.g(x1, x2), dtype=float)


def phi_field(spec: PotentialSpec, g: Grid2D) -> np.ndarray:
    """Log-density exponent Phi = log(nu) + G/nu."""
    return np.log(spec.nu) + eval_potential(spec, g) / spec.nu


def stationary_state(spec: PotentialSpec, g: Grid2D) -> np.ndarray:
    """Unit-mass sample of the unforced steady density, proportional to e^{-G/nu}.

    Exponentials are max-shifted so large barriers cannot overflow.
    """
    expo = -eval_potential(spec, g) / spec.nu
    rho = np.exp(expo - np.max(expo))
    return rho / (g.w * rho.sum())


def mass(g: Grid2D, rho: np.ndarray) -> float:
    """Discrete mass functional m(rho) = w * sum(rho)."""
    rho = np.asarray(rho)
    if rho.shape[0] != g.k:
        raise ValueError(f"field length {rho.shape[0]} does not match grid size {g.k}")
    return float(g.w * rho.sum())


def cell_volumes(g: Grid2D) -> np.ndarray:
    """Trapezoidal cell volume per node: w interior, halved per boundary axis.

    The kernel vector of the assembled generator is a stationary measure in
    uniform-weight coordinates; its boundary entries carry half cells (corner
    entries quarter cells).  Scale an analytic density by these volumes (over
    w) before comparing it with that kernel, or the comparison picks up an
    O(1) mismatch on the boundary strip.
    """
    f1 = np.ones(g.nx1)
    f1[0] = f1[-1] = 0.5
    f2 = np.ones(g.nx2)
    f2[0] = f2[-1] = 0.5
    return g.w * np.outer(f2, f1).ravel()


def weighted_inner(g: Grid2D, u: np.ndarray, v: np.ndarray) -> float:
    """L2 inner product with the uniform quadrature weight."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[0] != g.k or v.shape[0] != g.k:
        raise ValueError(
            f"field lengths {u.shape[0]}, {v.shape[0]} do not match grid size {g.k}"
        )
    return float(g.w * np.dot(u, v))


def weighted_norm(g: Grid2D, u: np.ndarray) -> float:
    return float(np.sqrt(max(weighted_inner(g, u, u), 0.0)))


def _forward_difference(n: int, h: float) -> sp.csr_matrix:
    """(n-1) x n forward difference map along one line of nodes."""
    e = np.ones(n - 1) / h
    return sp.diags([-e, e], offsets=[0, 1], shape=(n - 1, n)).tocsr()


def gradient_maps(g: Grid2D):
    """Forward-difference gradient components as sparse maps on flat fields."""
    d1 = _forward_difference(g.nx1, g.h1)
    d2 = _forward_difference(g.nx2, g.h2)
    big1 = sp.kron(sp.identity(g.nx2, format="csr"), d1, format="csr")
    big2 = sp.kron(d2, sp.identity(g.nx1, format="csr"), format="csr")
    return big1, big2


def h1_gram(g: Grid2D) -> LinOp:
    """Gram operator K with y^T K y = ||y||^2 + ||grad_h y||^2 in the weighted norm."""
    d1, d2 = gradient_maps(g)
    k = g.w * (sp.identity(g.k, format="csr") + d1.T @ d1 + d2.T @ d2)
    k = (k + k.T) * 0.5  # enforce exact symmetry regardless of product order
    return LinOp(matrix=k.tocsr(), tag="gram", grid=g)

"""Shared fixtures: assembled systems at the grid sizes the suite reuses.

Session scope keeps the expensive assemblies (eigensolves in particular)
to one per size for the whole run.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from fpcontrol import (assemble_adjoint_generator, assemble_control_operator,
                       build_grid, build_R, choose_delta, control_vector,
                       discrete_stationary, elliptic_operator,
                       generator_from_adjoint, leading_eigenpairs,
                       make_potential, phi_field, reduce_system, riccati_rhs,
                       solve_shape)


@dataclass
class Stack:
    """One double-well system, assembled once, shared read-only."""

    g: object
    pot: object
    astar: object
    a: object
    rho_inf: np.ndarray
    rmap: object
    spec: object
    delta: float

    def shape_and_control(self, rotated: bool = False):
        from fpcontrol import rotate_shape

        c = elliptic_operator(self.rho_inf, self.g)
        rhs = riccati_rhs(self.spec, 4, phi_field(self.pot, self.g), self.rmap)
        alpha = solve_shape(c, rhs)
        if rotated:
            alpha = rotate_shape(alpha, self.g)
        nop = assemble_control_operator(alpha, self.g)
        b = control_vector(nop, self.rho_inf)
        return alpha, nop, b

    def reduced(self, b):
        return reduce_system(self.a, b, None, self.rmap, self.delta)


def _build(nx1: int, nx2: int, m: int = 6, d: int = 4) -> Stack:
    g = build_grid(nx1, nx2, (-1.5, 1.5, -1.0, 1.0))
    pot = make_potential("double_well")
    astar = assemble_adjoint_generator(pot, g)
    a = generator_from_adjoint(astar)
    rho_inf = discrete_stationary(a)
    rmap = build_R(rho_inf, g)
    spec = leading_eigenpairs(a, m)
    delta = choose_delta(spec, d)
    return Stack(g=g, pot=pot, astar=astar, a=a, rho_inf=rho_inf, rmap=rmap,
                 spec=spec, delta=delta)


@pytest.fixture(scope="session")
def stack16():
    return _build(16, 12)


@pytest.fixture(scope="session")
def stack24():
    return _build(24, 16)


@pytest.fixture(scope="session")
def stack48():
    return _build(48, 32)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)

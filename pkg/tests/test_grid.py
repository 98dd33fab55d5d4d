import numpy as np
import pytest

from fpcontrol import (build_grid, h1_gram, make_potential, phi_field,
                       stationary_state, weighted_inner, weighted_norm)
from fpcontrol.grid import gradient_maps


def test_grid_geometry():
    g = build_grid(7, 5, (-1.5, 1.5, -1.0, 1.0))
    assert g.k == 35
    assert g.h1 == pytest.approx(0.5)
    assert g.h2 == pytest.approx(0.5)
    assert g.w == pytest.approx(0.25)
    assert g.x1[0] == -1.5 and g.x1[-1] == 1.5
    assert g.x2[0] == -1.0 and g.x2[-1] == 1.0


def test_grid_indexing_round_trip():
    g = build_grid(9, 6, (0.0, 1.0, 0.0, 1.0))
    idx = np.arange(g.k)
    i1, i2 = g.multi_index(idx)
    assert np.array_equal(g.flat_index(i1, i2), idx)
    x1f, x2f = g.nodes()
    assert x1f.shape == (g.k,) and x2f.shape == (g.k,)
    # axis 1 fastest: the first nx1 nodes share x2 = bottom edge
    assert np.all(x2f[: g.nx1] == g.x2[0])


def test_grid_rejects_degenerate():
    with pytest.raises(ValueError):
        build_grid(2, 5, (0, 1, 0, 1))
    with pytest.raises(ValueError):
        build_grid(5, 5, (1, 0, 0, 1))


def test_double_well_values():
    pot = make_potential("double_well")
    # frozen spot checks of G = 3(x1^2-1)^2 + 6 x2^2
    assert pot.g(0.0, 0.0) == pytest.approx(3.0)
    assert pot.g(1.0, 0.0) == pytest.approx(0.0)
    assert pot.g(-1.5, 1.0) == pytest.approx(10.6875)
    g1, g2 = pot.grad(0.5, -0.25)
    assert g1 == pytest.approx(4 * 3 * 0.5 * (0.25 - 1.0))
    assert g2 == pytest.approx(2 * 6 * -0.25)


def test_make_potential_rejects_unknown():
    with pytest.raises(ValueError):
        make_potential("volcano")
    with pytest.raises(ValueError):
        make_potential("double_well", c3=1.0)
    with pytest.raises(ValueError):
        make_potential("double_well", nu=-1.0)


def test_phi_field_matches_potential():
    g = build_grid(12, 9, (-1.5, 1.5, -1.0, 1.0))
    pot = make_potential("double_well", nu=2.0)
    phi = phi_field(pot, g)
    x1f, x2f = g.nodes()
    expected = np.log(2.0) + pot.g(x1f, x2f) / 2.0
    assert np.allclose(phi, expected, rtol=0, atol=1e-14)


def test_stationary_state_mass_and_positivity():
    g = build_grid(20, 15, (-1.5, 1.5, -1.0, 1.0))
    pot = make_potential("double_well")
    rho = stationary_state(pot, g)
    assert g.w * np.sum(rho) == pytest.approx(1.0, abs=1e-13)
    assert np.all(rho > 0)
    # Gibbs shape: log rho + G/nu constant
    x1f, x2f = g.nodes()
    c = np.log(rho) + pot.g(x1f, x2f)
    assert np.ptp(c) < 1e-12


def test_weighted_inner_is_w_scaled_dot(rng):
    g = build_grid(10, 8, (0, 2, 0, 1))
    u = rng.normal(size=g.k)
    v = rng.normal(size=g.k)
    assert weighted_inner(g, u, v) == pytest.approx(g.w * np.dot(u, v))
    assert weighted_norm(g, u) == pytest.approx(np.sqrt(g.w) * np.linalg.norm(u))


def test_gradient_maps_exact_on_linears():
    g = build_grid(14, 11, (-1.5, 1.5, -1.0, 1.0))
    d1, d2 = gradient_maps(g)
    x1f, x2f = g.nodes()
    f = 2.0 * x1f - 3.0 * x2f + 1.0
    assert np.allclose(d1 @ f, 2.0, atol=1e-12)
    assert np.allclose(d2 @ f, -3.0, atol=1e-12)


def test_h1_gram_energy(rng):
    g = build_grid(9, 7, (-1.5, 1.5, -1.0, 1.0))
    k = h1_gram(g)
    ones = np.ones(g.k)
    # constants carry no gradient energy: 1^T K 1 = ||1||_w^2
    assert ones @ (k @ ones) == pytest.approx(weighted_norm(g, ones) ** 2)
    for _ in range(5):
        u = rng.normal(size=g.k)
        energy = u @ (k @ u)
        assert energy >= weighted_norm(g, u) ** 2 - 1e-12

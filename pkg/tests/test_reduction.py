import numpy as np
import pytest

from fpcontrol import (ReducedSystem, as_matrix, build_R, reduce_system,
                       verify_identities, weighted_inner)


def test_anchor_is_density_peak(stack16):
    rmap = stack16.rmap
    assert rmap.perm[-1] == int(np.argmax(stack16.rho_inf))
    assert sorted(rmap.perm) == list(range(stack16.g.k))


def test_reduce_lift_round_trip(stack16, rng):
    rmap = stack16.rmap
    yhat = rng.normal(size=stack16.g.k - 1)
    y = rmap.lift(yhat)
    # lifted fields carry no mass, and reduce recovers the coordinates
    assert abs(np.sum(y)) <= 1e-12 * np.abs(y).sum()
    assert np.allclose(rmap.reduce(y), yhat, rtol=0, atol=1e-12)


def test_reduce_kills_stationary_direction(stack16, rng):
    rmap = stack16.rmap
    assert np.max(np.abs(rmap.reduce(stack16.rho_inf))) <= 1e-12
    # reducing y and its mass-projected part agree
    y = rng.normal(size=stack16.g.k)
    c = 3.7
    assert np.allclose(rmap.reduce(y + c * stack16.rho_inf), rmap.reduce(y),
                       atol=1e-12)


def test_lift_adjoint_is_the_adjoint(stack16, rng):
    rmap = stack16.rmap
    for _ in range(5):
        phihat = rng.normal(size=stack16.g.k - 1)
        y = rng.normal(size=stack16.g.k)
        lhs = np.dot(rmap.lift_adjoint(phihat), y)
        rhs = np.dot(phihat, rmap.reduce(y))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_mass_gram_matches_lifted_inner(stack16, rng):
    g, rmap = stack16.g, stack16.rmap
    what = rmap.mass_gram()
    for _ in range(3):
        a = rng.normal(size=g.k - 1)
        b = rng.normal(size=g.k - 1)
        direct = weighted_inner(g, rmap.lift(a), rmap.lift(b))
        assert a @ (what @ b) == pytest.approx(direct, rel=1e-10)
        assert rmap.reduced_inner(a, b) == pytest.approx(direct, rel=1e-10)


def test_solve_mass_gram_inverts(stack16, rng):
    rmap = stack16.rmap
    z = rng.normal(size=stack16.g.k - 1)
    y = rmap.solve_mass_gram(z)
    assert np.allclose(rmap.apply_mass_gram(y), z, rtol=1e-10, atol=1e-12)


def test_intertwining_exact(stack16, rng):
    # reducing A y equals Ahat applied to reduced y, for arbitrary y
    rmap = stack16.rmap
    ahat = rmap.reduce_matrix(stack16.a)
    amat = as_matrix(stack16.a)
    scale = np.abs(ahat).max()
    for _ in range(5):
        y = rng.normal(size=stack16.g.k)
        lhs = rmap.reduce(amat @ y)
        rhs = ahat @ rmap.reduce(y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale * np.linalg.norm(y)


def test_reduced_spectrum_drops_zero(stack16):
    # Ahat keeps every generator eigenvalue except the conserved zero
    ahat = stack16.rmap.reduce_matrix(stack16.a)
    lams_hat = np.sort_complex(np.linalg.eigvals(ahat))
    lams = np.sort_complex(np.linalg.eigvals(as_matrix(stack16.a).toarray()))
    # the full spectrum has one extra eigenvalue: the zero
    i_zero = int(np.argmin(np.abs(lams)))
    assert abs(lams[i_zero]) <= 1e-8
    kept = np.delete(lams, i_zero)
    assert np.allclose(np.sort(kept.real), np.sort(lams_hat.real), atol=1e-7)


def test_verify_identities_pass(stack24):
    alpha, nop, b = stack24.shape_and_control()
    rep = verify_identities(stack24.a, nop, b, stack24.rho_inf, stack24.g)
    assert rep.passed
    assert len(rep.residuals) == 6
    assert max(rep.residuals.values()) <= 1e-10


def test_reduce_system_shapes_and_shift(stack16):
    alpha, nop, b = stack16.shape_and_control()
    sysr = reduce_system(stack16.a, b, None, stack16.rmap, stack16.delta)
    k = stack16.g.k
    assert sysr.ahat.shape == (k - 1, k - 1)
    assert sysr.bhat.shape == (k - 1,)
    assert sysr.delta == stack16.delta
    assert sysr.dim == k - 1
    # bhat is the reduction of b
    assert np.allclose(sysr.bhat, stack16.rmap.reduce(b), atol=1e-12)


def test_reduced_system_save_load_round_trip(tmp_path, stack16):
    alpha, nop, b = stack16.shape_and_control()
    sysr = reduce_system(stack16.a, b, None, stack16.rmap, stack16.delta)
    path = tmp_path / "sys.npz"
    sysr.save(path)
    back = ReducedSystem.load(path)
    assert np.allclose(back.ahat, sysr.ahat, atol=1e-14)
    assert np.allclose(back.bhat, sysr.bhat, atol=1e-14)
    assert back.delta == sysr.delta
    assert np.array_equal(back.rmap.perm, sysr.rmap.perm)

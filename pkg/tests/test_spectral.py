import numpy as np
import pytest

from fpcontrol import (choose_delta, choose_mu, h1_gram, leading_eigenpairs,
                       mu_probe_margin, reduce_system, weighted_inner,
                       weighted_norm)


def test_zero_eigenvalue_leads(stack16):
    spec = stack16.spec
    assert abs(spec.eigenvalue(1)) <= 1e-9
    # sorted by descending real part, all in the closed left half plane
    re = spec.eigenvalues.real
    assert np.all(np.diff(re) <= 1e-12)
    assert re[1] < -1e-3


def test_lambda2_frozen_values(stack16, stack24):
    assert stack16.spec.eigenvalue(2).real == pytest.approx(-0.5238, abs=2e-4)
    assert stack24.spec.eigenvalue(2).real == pytest.approx(-0.41776, abs=2e-4)
    assert stack16.spec.eigenvalues.imag.max() <= 1e-10
    assert stack24.spec.eigenvalues.imag.max() <= 1e-10


def test_residual_certification(stack24):
    spec = stack24.spec
    assert np.max(spec.residual_psi) <= 1e-8
    assert np.max(spec.residual_phi) <= 1e-8


def test_eigenvector_normalization(stack16):
    g, spec = stack16.g, stack16.spec
    for i in range(1, spec.count + 1):
        assert weighted_norm(g, spec.psi_i(i).real) == pytest.approx(1.0, abs=1e-9)
        assert weighted_norm(g, spec.phi_i(i).real) == pytest.approx(1.0, abs=1e-9)


def test_first_adjoint_vector_constant(stack16):
    phi1 = stack16.spec.phi_i(1)
    assert np.ptp(phi1.real) <= 1e-8 * np.abs(phi1).max()


def test_biorthogonality(stack16):
    # left and right eigenvectors of distinct eigenvalues are w-orthogonal
    g, spec = stack16.g, stack16.spec
    for i in range(1, spec.count + 1):
        for j in range(1, spec.count + 1):
            if i == j:
                continue
            if abs(spec.eigenvalue(i) - spec.eigenvalue(j)) < 1e-6:
                continue
            val = weighted_inner(g, spec.phi_i(i).real, spec.psi_i(j).real)
            assert abs(val) <= 1e-7


def test_delta_frozen_values(stack24, stack48):
    # midpoint of |Re lambda_4| and |Re lambda_5|
    assert stack24.delta == pytest.approx(12.585, abs=2e-3)
    assert stack48.delta == pytest.approx(12.371, abs=2e-3)
    lam4 = abs(stack24.spec.eigenvalue(4).real)
    lam5 = abs(stack24.spec.eigenvalue(5).real)
    assert stack24.delta == pytest.approx(0.5 * (lam4 + lam5), abs=1e-12)
    assert lam4 <= stack24.delta < lam5


def test_choose_delta_override_and_validation(stack16):
    lam4 = abs(stack16.spec.eigenvalue(4).real)
    lam5 = abs(stack16.spec.eigenvalue(5).real)
    inside = 0.25 * lam4 + 0.75 * lam5
    assert choose_delta(stack16.spec, 4, override=inside) == inside
    with pytest.raises(ValueError):
        # an override below the cluster cannot separate it
        choose_delta(stack16.spec, 4, override=0.5 * lam4)
    with pytest.raises(ValueError):
        choose_delta(stack16.spec, stack16.spec.count + 1)
    with pytest.raises(ValueError):
        choose_delta(stack16.spec, 0)


def test_leading_eigenpairs_input_validation(stack16):
    with pytest.raises(ValueError):
        leading_eigenpairs(stack16.a, 13)
    with pytest.raises(ValueError):
        leading_eigenpairs(stack16.astar, 4)


def test_mu_frozen_values(stack16, stack24):
    for stack, expected in ((stack16, 20.81), (stack24, 23.14)):
        alpha, nop, b = stack.shape_and_control()
        sysr = reduce_system(stack.a, b, None, stack.rmap, stack.delta)
        mu = choose_mu(sysr, h1_gram(stack.g))
        assert mu == pytest.approx(expected, abs=2e-2)
        assert mu_probe_margin(sysr, h1_gram(stack.g), mu) >= 0.0


def test_mu_padding_and_monotonicity(stack16):
    alpha, nop, b = stack16.shape_and_control()
    sysr = reduce_system(stack16.a, b, None, stack16.rmap, stack16.delta)
    k = h1_gram(stack16.g)
    mu1 = choose_mu(sysr, k, margin=0.01)
    mu5 = choose_mu(sysr, k, margin=0.05)
    # both pad the same pencil eigenvalue multiplicatively
    assert mu5 / mu1 == pytest.approx(1.05 / 1.01, rel=1e-12)
    # the dissipativity functional is affine increasing in mu
    m1 = mu_probe_margin(sysr, k, mu1)
    m2 = mu_probe_margin(sysr, k, 2.0 * mu1)
    assert m2 > m1 >= 0.0


def test_spectrum_csv(tmp_path, stack16):
    path = tmp_path / "spec.csv"
    stack16.spec.to_csv(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0].startswith("index,")
    assert len(rows) == stack16.spec.count + 1

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from fvlab.errors import InconsistentSpectralData, NegativeTime, NotCentered
from fvlab.spectral import (
    SpectralData,
    ZeroSumBasis,
    build_pi_return,
    check_decay,
    diffusion_operator,
    dirichlet_form,
    drift_operator,
    drift_operator_generator_form,
    killed_semigroup,
    pi_semigroup,
    semigroup_identity_gap,
    solve_qsd,
    uniformized_expm,
    yaglom_conditional,
)

from conftest import random_centred, random_fleet

F0 = np.array([1.0, -1.0])


def test_qsd_chain_a(chain_a):
    # oracle: roots of the characteristic polynomial of p_D
    roots = np.sort(np.roots(np.poly(chain_a.p_D)).real)
    assert roots == pytest.approx([-0.5, 0.5])
    spec = solve_qsd(chain_a)
    assert spec.lam == pytest.approx(1 - roots[-1], abs=1e-12)
    assert spec.gamma == pytest.approx(roots[-1] - roots[0], abs=1e-12)
    np.testing.assert_allclose(spec.pi, [0.5, 0.5], atol=1e-12)


def test_qsd_chain_b(chain_b):
    spec = solve_qsd(chain_b)
    assert spec.lam == pytest.approx(0.3)
    np.testing.assert_allclose(spec.pi, [1.0])
    assert spec.gamma == math.inf


def test_qsd_chain_c(chain_c):
    spec = solve_qsd(chain_c)
    assert spec.lam == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(spec.pi, [0.5, 0.5], atol=1e-12)
    assert spec.gamma == pytest.approx(2.0)


def test_qsd_invariants_on_random_chains():
    for ch in random_fleet(30, kmax=20, seed=7):
        spec = solve_qsd(ch)
        P = np.asarray(ch.p_D)
        assert np.max(np.abs(P.T @ spec.pi - (1 - spec.lam) * spec.pi)) <= 1e-10
        assert spec.pi.sum() == pytest.approx(1.0, abs=1e-12)
        assert spec.pi.min() > 0
        assert abs(spec.pi @ ch.q - spec.lam) <= 1e-10
        assert spec.gamma > 0
        # oracle: spectral radius from a dense eigensolve
        assert 1 - spec.lam == pytest.approx(np.max(np.abs(np.linalg.eigvals(P))), abs=1e-10)


def test_periodic_support_falls_back_or_converges(chain_c):
    # CHAIN-C is periodic; the lazy iteration still converges
    spec = solve_qsd(chain_c)
    assert spec.perron_residual <= 1e-10


def test_uniformization_matches_expm():
    rng = np.random.default_rng(3)
    for ch in random_fleet(5, seed=11):
        P = np.asarray(ch.p_D)
        v = rng.standard_normal(ch.k)
        for t in (0.0, 0.3, 7.0, 180.0):
            ref = expm(t * (P - np.eye(ch.k))) @ v
            np.testing.assert_allclose(uniformized_expm(P, t, v), ref, atol=1e-12, rtol=1e-9)
            refl = v @ expm(t * (P - np.eye(ch.k)))
            np.testing.assert_allclose(uniformized_expm(P, t, v, left=True), refl, atol=1e-12, rtol=1e-9)


def test_killed_semigroup_examples(chain_a):
    np.testing.assert_allclose(killed_semigroup(chain_a, F0, 1.0), math.exp(-1.5) * F0, atol=1e-12)
    np.testing.assert_allclose(killed_semigroup(chain_a, [1, 1], 1.0), [math.exp(-0.5)] * 2, atol=1e-12)
    f = np.array([0.3, -2.0])
    assert np.array_equal(killed_semigroup(chain_a, f, 0.0), f)
    with pytest.raises(NegativeTime):
        killed_semigroup(chain_a, f, -1.0)


def test_killed_semigroup_contracts_nonnegative(chain_d):
    f = np.array([1.0, 0.2, 0.7])
    g = killed_semigroup(chain_d, f, 2.0)
    assert np.all(g >= 0) and g.max() <= f.max()


def test_yaglom(chain_a, chain_c):
    mu = np.array([1.0, 0.0])
    assert np.array_equal(yaglom_conditional(chain_a, mu, 0.0), mu)
    np.testing.assert_allclose(yaglom_conditional(chain_a, mu, 40.0), solve_qsd(chain_a).pi, atol=1e-12)
    ref = mu @ expm(0.7 * (chain_c.p_D - np.eye(2)))
    np.testing.assert_allclose(yaglom_conditional(chain_c, mu, 0.7), ref, atol=1e-12)


def test_pi_return_examples(chain_a, chain_b, chain_c):
    for ch, ref in ((chain_a, [[0.25, 0.75], [0.75, 0.25]]), (chain_b, [[1.0]]), (chain_c, chain_c.p_D)):
        pr = build_pi_return(ch, solve_qsd(ch))
        np.testing.assert_allclose(pr.p_pi, ref, atol=1e-12)
        np.testing.assert_allclose(pr.p_pi.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(pr.p_pi.T @ pr.spec.pi, pr.spec.pi, atol=1e-10)


def test_pi_return_rejects_wrong_spec(chain_a):
    spec = solve_qsd(chain_a)
    bad = SpectralData(np.array([0.9, 0.1]), spec.lam, spec.gamma, 0.0, spec.eigenvalues, "manual")
    with pytest.raises(InconsistentSpectralData):
        build_pi_return(chain_a, bad)


def test_pi_semigroup_chain_a(chain_a):
    pr = build_pi_return(chain_a, solve_qsd(chain_a))
    # oracle: dense matrix exponential of the pi-return generator; f0 decays at 3/2
    for t in (0.0, 0.5, 1.0, 3.0):
        ref = expm(t * (pr.p_pi - np.eye(2))) @ F0
        got = pi_semigroup(pr, F0, t)
        np.testing.assert_allclose(got, ref, atol=1e-12)
        np.testing.assert_allclose(got, math.exp(-1.5 * t) * F0, atol=1e-12)
    np.testing.assert_allclose(pi_semigroup(pr, [1, 1], 4.0), [1, 1], atol=1e-12)


def test_pi_semigroup_properties(fixture_chain):
    _, ch, spec, pr = fixture_chain
    rng = np.random.default_rng(5)
    for f in rng.standard_normal((5, ch.k)):
        g = pi_semigroup(pr, f, 1.3)
        assert spec.pi @ g == pytest.approx(spec.pi @ f, abs=1e-10)
        np.testing.assert_allclose(pi_semigroup(pr, pi_semigroup(pr, f, 0.4), 0.9), g, atol=1e-9)


def test_semigroup_identity(fixture_chain):
    _, ch, spec, pr = fixture_chain
    rng = np.random.default_rng(17)
    for f in rng.standard_normal((20, ch.k)):
        for t in (0, 0.5, 1, 2, 5):
            assert semigroup_identity_gap(pr, f, t) <= 1e-9


def test_dirichlet_form_examples(chain_a, chain_c, fixture_chain):
    pr_a = build_pi_return(chain_a, solve_qsd(chain_a))
    pr_c = build_pi_return(chain_c, solve_qsd(chain_c))
    assert dirichlet_form(pr_a, F0) == pytest.approx(1.5)
    assert dirichlet_form(pr_c, F0) == pytest.approx(2.0)
    assert dirichlet_form(pr_a, [3, 3]) == 0
    _, ch, spec, pr = fixture_chain
    rng = np.random.default_rng(1)
    L = pr.p_pi - np.eye(ch.k)
    for f in random_centred(spec.pi, rng, 10):
        # oracle: -<pi, f L f>
        assert dirichlet_form(pr, f) == pytest.approx(-spec.pi @ (f * (L @ f)), abs=1e-10)
        assert dirichlet_form(pr, f) >= 0


def test_diffusion_operator(fixture_chain):
    name, ch, spec, pr = fixture_chain
    A = diffusion_operator(pr)
    if ch.k == 1:
        assert A.reduced.shape == (0, 0)
        return
    M = A.reduced
    assert np.max(np.abs(M - M.T)) <= 1e-12
    assert np.linalg.eigvalsh(M).min() > 0
    rng = np.random.default_rng(2)
    for f in random_centred(spec.pi, rng, 10):
        assert A.quadratic_form(f) == pytest.approx(dirichlet_form(pr, f), abs=1e-10)
    if name == "chain_a":
        assert A.quadratic_form(F0) == pytest.approx(1.5)


def test_diffusion_positive_on_random_three_state():
    for ch in random_fleet(10, kmax=3, seed=99):
        pr = build_pi_return(ch, solve_qsd(ch))
        assert np.linalg.eigvalsh(diffusion_operator(pr).reduced).min() > 0


def test_drift_operator(fixture_chain):
    name, ch, spec, pr = fixture_chain
    B = drift_operator(pr)
    expected = {"chain_a": [[-1.0]], "chain_b": np.zeros((0, 0)), "chain_c": [[-2.0]]}
    if name in expected:
        np.testing.assert_allclose(B.reduced, expected[name], atol=1e-12)
    np.testing.assert_array_equal(B.reduced, drift_operator_generator_form(pr).reduced)
    if ch.k > 1:
        assert np.linalg.eigvals(B.reduced).real.max() <= -spec.gamma + 1e-9


def test_drift_spectrum_random():
    for ch in random_fleet(15, kmax=12, seed=5):
        spec = solve_qsd(ch)
        B = drift_operator(build_pi_return(ch, spec))
        assert np.linalg.eigvals(B.reduced).real.max() <= -spec.gamma + 1e-9


def test_drift_matches_full_matrix_action(chain_d):
    spec = solve_qsd(chain_d)
    pr = build_pi_return(chain_d, spec)
    B = drift_operator(pr)
    xi = np.array([0.3, -0.1, -0.2])
    full = pr.p_pi.T @ xi - (1 - spec.lam) * xi
    np.testing.assert_allclose(B.full_matrix() @ xi, full, atol=1e-12)


def test_zero_sum_basis_roundtrip():
    pi = np.array([0.2, 0.3, 0.5])
    b = ZeroSumBasis(pi)
    rng = np.random.default_rng(0)
    a = rng.standard_normal(2)
    np.testing.assert_allclose(b.restrict_measure(b.lift_measure(a)), a)
    np.testing.assert_allclose(b.restrict_function(b.lift_function(a)), a)
    # the pairing of lifted coordinates is the plain dot product
    c = rng.standard_normal(2)
    assert b.lift_measure(a) @ b.lift_function(c) == pytest.approx(a @ c)
    with pytest.raises(NotCentered):
        b.restrict_function([1.0, 0.0, 0.0])


def test_check_decay(chain_a, chain_c, fixture_chain):
    grid = range(11)
    for ch, rate in ((chain_a, 1.5), (chain_c, 2.0)):
        spec = solve_qsd(ch)
        pr = build_pi_return(ch, spec)
        rep = check_decay(pr, F0, 0.1, grid)
        assert spec.lam + spec.gamma == pytest.approx(rate)
        assert rep.holds and rep.stable and math.isfinite(rep.constant)
    rep = check_decay(pr, [0.0, 0.0], 0.1, grid)
    assert rep.trivial and rep.holds
    with pytest.raises(NotCentered):
        check_decay(pr, [1.0, 0.0], 0.1, grid)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000), st.floats(0, 5))
def test_semigroup_identity_property(k, seed, t):
    from fvlab.chain import random_chain

    ch = random_chain(k, np.random.default_rng(seed))
    pr = build_pi_return(ch, solve_qsd(ch))
    f = np.random.default_rng(seed + 1).standard_normal(k)
    assert semigroup_identity_gap(pr, f, t) <= 1e-9

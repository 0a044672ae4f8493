import math

import numpy as np
import pytest
from scipy.linalg import expm

from fvlab.covariance import diagonalize_symmetric
from fvlab.errors import DimensionMismatch, InvalidParams, InvalidStepSize
from fvlab.oracle import enumerate_simplex, fv_rates
from fvlab.simulate import (
    EmpiricalMeasure,
    ParticleConfiguration,
    fluctuation,
    fv_step,
    initial_positions,
    make_rng,
    sample_stationary,
    simulate_ou,
    simulate_pi_return,
)
from fvlab.spectral import build_pi_return, diffusion_operator, drift_operator, solve_qsd
from fvlab.stats import mean_with_se

F0 = np.array([1.0, -1.0])


def test_forced_exit_resamples_onto_other_particle(chain_a):
    cfg = ParticleConfiguration(np.array([0, 0]), 0.0, make_rng(0))
    # destination uniform 0.99 lies in the exit block of row (0, 1/2, 1/2)
    out = fv_step(chain_a, cfg, uniforms=(0.0, 0.99, 0.5), wait=0.25)
    np.testing.assert_array_equal(out.positions, [0, 0])
    assert out.time == 0.25
    cfg = ParticleConfiguration(np.array([0, 1]), 0.0, make_rng(0))
    out = fv_step(chain_a, cfg, uniforms=(0.0, 0.99, 0.0), wait=0.1)
    np.testing.assert_array_equal(out.positions, [1, 1])


def test_self_loop_is_noop(chain_d):
    cfg = ParticleConfiguration(np.array([0, 1, 2]), 1.0, make_rng(0))
    out = fv_step(chain_d, cfg, uniforms=(0.0, 0.05, 0.5))
    np.testing.assert_array_equal(out.positions, cfg.positions)
    assert out.time > 1.0


def test_single_state_domain_never_moves(chain_b):
    cfg = ParticleConfiguration(np.zeros(5, dtype=np.int64), 0.0, make_rng(1))
    for _ in range(200):
        cfg = fv_step(chain_b, cfg)
    assert np.all(cfg.positions == 0) and cfg.time > 0


def test_fv_step_rejects_single_particle(chain_a):
    with pytest.raises(InvalidParams):
        fv_step(chain_a, ParticleConfiguration(np.array([0]), 0.0, make_rng(0)))


def test_event_frequencies_match_generator(chain_d):
    # oracle: rates of the particle generator divided by the total clock rate n
    n, events = 3, 20_000
    lat = enumerate_simplex(n, chain_d.k)
    rng = make_rng(4)
    for counts in lat.states[[0, 4, 9]]:
        pos = np.repeat(np.arange(chain_d.k), counts)
        cfg = ParticleConfiguration(pos, 0.0, rng)
        freq = {}
        for _ in range(events):
            new = fv_step(chain_d, cfg).empirical(chain_d.k).counts
            assert new.sum() == n
            key = tuple(new - counts)
            freq[key] = freq.get(key, 0) + 1
        rates = fv_rates(chain_d, counts, n)[0]
        for x in range(chain_d.k):
            for y in range(chain_d.k):
                if x == y or rates[x, y] == 0:
                    continue
                key = tuple(np.eye(chain_d.k, dtype=int)[y] - np.eye(chain_d.k, dtype=int)[x])
                p = rates[x, y] / n
                se = math.sqrt(p * (1 - p) / events)
                assert abs(freq.get(key, 0) / events - p) <= 4 * se


def test_initial_positions(chain_d):
    spec = solve_qsd(chain_d)
    rng = make_rng(0)
    assert initial_positions(chain_d, spec, 10, "pi", rng).shape == (10,)
    assert set(initial_positions(chain_d, spec, 50, "uniform", rng)) <= {0, 1, 2}
    np.testing.assert_array_equal(initial_positions(chain_d, spec, 4, "point:b", rng), [1, 1, 1, 1])
    with pytest.raises(InvalidParams):
        initial_positions(chain_d, spec, 4, "bogus", rng)


def test_sample_stationary_chain_b(chain_b):
    spec = solve_qsd(chain_b)
    sim = sample_stationary(chain_b, spec, 6, burn_in=1, spacing=1, samples=20, seed=0)
    assert np.all(sim.counts == 6)
    assert all(m.weights[0] == 1 for m in sim.measures())


def test_sample_stationary_determinism(chain_d):
    spec = solve_qsd(chain_d)
    a = sample_stationary(chain_d, spec, 20, samples=50, seed=9)
    b = sample_stationary(chain_d, spec, 20, samples=50, seed=9)
    c = sample_stationary(chain_d, spec, 20, samples=50, seed=10)
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)
    assert np.all(a.counts.sum(axis=1) == 20)
    assert a.heuristic_schedule


def test_sample_stationary_lln_chain_a(chain_a):
    spec = solve_qsd(chain_a)
    sim = sample_stationary(chain_a, spec, 100, burn_in=50 / spec.gamma, spacing=5 / spec.gamma,
                            samples=2000, seed=3)
    assert not sim.heuristic_schedule
    m, se = mean_with_se(sim.weights @ F0)
    assert abs(m) <= 3 * se


def test_sample_stationary_invalid(chain_a):
    spec = solve_qsd(chain_a)
    with pytest.raises(InvalidParams):
        sample_stationary(chain_a, spec, 1)
    with pytest.raises(InvalidParams):
        sample_stationary(chain_a, spec, 4, samples=0)
    with pytest.raises(InvalidParams):
        sample_stationary(chain_a, spec, 4, burn_in=-1.0, spacing=1.0)


def test_fluctuation_examples(chain_a, chain_b):
    spec = solve_qsd(chain_a)
    np.testing.assert_allclose(fluctuation(EmpiricalMeasure(np.array([5, 5]), 10), spec).xi, 0, atol=1e-15)
    xi = fluctuation(EmpiricalMeasure(np.array([3, 1]), 4), spec).xi
    np.testing.assert_allclose(xi, [0.5, -0.5])
    assert xi.sum() == 0
    assert fluctuation(EmpiricalMeasure(np.array([4]), 4), solve_qsd(chain_b)).xi == pytest.approx([0.0])
    with pytest.raises(DimensionMismatch):
        fluctuation(EmpiricalMeasure(np.array([1, 1, 2]), 4), spec)


def test_pi_return_paths(chain_a, chain_b):
    pr_b = build_pi_return(chain_b, solve_qsd(chain_b))
    assert np.all(simulate_pi_return(pr_b, 50.0, "1", seed=1).states == 0)
    pr = build_pi_return(chain_a, solve_qsd(chain_a))
    tr0 = simulate_pi_return(pr, 0.0, "2", seed=0)
    assert list(tr0.states) == [1]
    t_end = 1e4
    occ = simulate_pi_return(pr, t_end, "1", seed=2).occupation(2)
    # oracle: asymptotic variance 2ab/(a+b)^3 of the occupation time of a two-state chain
    a = b = 0.75
    se = math.sqrt(2 * a * b / (a + b) ** 3 / t_end)
    assert abs(occ[0] - 0.5) <= 3 * se


def test_ou_noiseless_matches_exponential(chain_d):
    spec = solve_qsd(chain_d)
    pr = build_pi_return(chain_d, spec)
    B0 = drift_operator(pr)
    dec = diagonalize_symmetric(diffusion_operator(pr))
    quiet = type(dec)(dec.vectors, np.zeros_like(dec.coefficients), dec.reduced_vectors)
    xi0 = np.array([0.7, -0.4])
    errs = []
    for dt in (1e-2, 5e-3):
        path = simulate_ou(B0, quiet, dt, 2.0, xi0=xi0, record_every=int(round(1 / dt)))
        ref = expm(2.0 * B0.reduced) @ xi0
        errs.append(np.max(np.abs(path.xi[-1] - ref)))
    assert errs[0] < 0.02
    assert errs[1] < 0.6 * errs[0]  # first-order convergence


def test_ou_trivial_and_invalid(chain_a):
    pr = build_pi_return(chain_a, solve_qsd(chain_a))
    B0 = drift_operator(pr)
    dec = diagonalize_symmetric(diffusion_operator(pr))
    path = simulate_ou(B0, dec, 1e-3, 0.0)
    assert path.xi.shape == (1, 1) and path.xi[0, 0] == 0
    with pytest.raises(InvalidStepSize):
        simulate_ou(B0, dec, 0.0, 1.0)
    a = simulate_ou(B0, dec, 1e-2, 5.0, seed=4)
    b = simulate_ou(B0, dec, 1e-2, 5.0, seed=4)
    assert np.array_equal(a.xi, b.xi)

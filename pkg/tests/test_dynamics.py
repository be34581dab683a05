import numpy as np
import pytest
from scipy.linalg import expm as scipy_expm

from dgflow.dynamics import (DensityTrajectory, FreeEnergyParams, entropy,
                             evolve_density, free_energy, free_energy_rates,
                             gibbs_density, heat_flow, matrix_exponential,
                             two_point_heat_oracle, two_point_probability,
                             two_point_w2)
from dgflow.errors import ParameterError
from dgflow.geometry import make_density
from dgflow.graphs import MarkovChain, generate_graph, to_markov_chain


def two_state_chain(p=0.5, q=0.5):
    K = np.array([[1 - p, p], [q, 1 - q]])
    pi = np.array([q, p]) / (p + q)
    return MarkovChain(n=2, K=K, pi=pi)


def random_chain(seed, n=6):
    g = generate_graph("erdos_renyi", n, seed=seed)
    return to_markov_chain(g)


def test_matrix_exponential_2x2_closed_form():
    # Q = [[-a, a], [b, -b]] has exp(tQ) with decay rate a + b
    a, b, t = 0.7, 0.4, 1.3
    Q = np.array([[-a, a], [b, -b]])
    s = a + b
    E = np.exp(-s * t)
    expected = np.array([
        [(b + a * E) / s, a * (1 - E) / s],
        [b * (1 - E) / s, (a + b * E) / s],
    ])
    assert np.allclose(matrix_exponential(Q, t), expected, atol=1e-12)


def test_matrix_exponential_matches_scipy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        Q = rng.uniform(0, 2, (n, n))
        np.fill_diagonal(Q, 0.0)
        np.fill_diagonal(Q, -Q.sum(axis=1))
        t = float(rng.uniform(0, 3))
        assert np.allclose(matrix_exponential(Q, t), scipy_expm(Q * t),
                           atol=1e-10)


def test_matrix_exponential_semigroup():
    Q = np.array([[-1.0, 1.0], [0.5, -0.5]])
    A = matrix_exponential(Q, 0.7) @ matrix_exponential(Q, 0.3)
    assert np.allclose(A, matrix_exponential(Q, 1.0), atol=1e-12)


def test_matrix_exponential_rejects_bad_rates():
    with pytest.raises(ParameterError):
        matrix_exponential(np.array([[1.0, -1.0], [0.0, 0.0]]), 1.0)


def test_heat_flow_two_point_oracle():
    for p, q, beta0 in [(0.5, 0.5, 0.8), (0.3, 0.6, -0.4), (0.9, 0.1, 0.0)]:
        chain = two_state_chain(p, q)
        p0 = two_point_probability(beta0)
        rho0 = make_density(p0 / chain.pi, chain.pi)
        grid = np.linspace(0.0, 2.0, 21)
        traj = heat_flow(chain, rho0, grid)
        probs = traj.probabilities(chain.pi)
        for t, pv in zip(grid, probs):
            beta_t = two_point_heat_oracle(p, q, beta0, t)
            assert pv[1] - pv[0] == pytest.approx(beta_t, abs=1e-8)


def test_two_point_w2_difference_quotient_diverges():
    # quotient W2 / gap = sqrt(2 / gap) blows up as the gap shrinks
    gaps = [1e-2, 1e-4, 1e-6]
    quotients = [two_point_w2(0.0, g) / g for g in gaps]
    assert quotients[0] < quotients[1] < quotients[2]
    assert quotients[2] > 1e3
    assert quotients[1] == pytest.approx(np.sqrt(2 / 1e-4), rel=1e-12)


def test_evolve_density_heat_consistency():
    # with V = 0 and beta = 1 the frozen-rate stepper reproduces the exact
    # heat semigroup as the step size shrinks
    chain = random_chain(5, n=8)
    rng = np.random.default_rng(1)
    p0 = rng.dirichlet(np.ones(8))
    grid = np.linspace(0.0, 2e-3, 41)  # dt = 5e-5
    params = FreeEnergyParams(V=np.zeros(8), beta=1.0)
    traj = evolve_density(chain, p0, params, grid)
    rho0 = make_density(p0 / chain.pi, chain.pi)
    exact = heat_flow(chain, rho0, grid)
    err = max(np.max(np.abs(a.rho - b.rho))
              for a, b in zip(traj.densities, exact.densities))
    assert err <= 1e-6


def test_evolve_density_first_order_in_dt():
    chain = two_state_chain()
    p0 = np.array([0.9, 0.1])
    params = FreeEnergyParams(V=np.zeros(2), beta=1.0)
    grid = np.array([0.0, 0.05])
    rho0 = make_density(p0 / chain.pi, chain.pi)
    exact = heat_flow(chain, rho0, grid).densities[-1].rho
    errs = []
    for sub in (1, 10, 100):
        traj = evolve_density(chain, p0, params, grid, substeps=sub)
        errs.append(np.max(np.abs(traj.densities[-1].rho - exact)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] == pytest.approx(10, rel=0.5)


def test_gibbs_is_stationary():
    chain = random_chain(7, n=5)
    rng = np.random.default_rng(2)
    params = FreeEnergyParams(V=rng.uniform(-1, 1, 5), beta=0.3)
    rho_g = gibbs_density(params, chain.pi)
    p0 = rho_g.rho * chain.pi
    grid = np.linspace(0.0, 1.0, 11)
    traj = evolve_density(chain, p0, params, grid, substeps=5)
    for d in traj.densities:
        assert np.max(np.abs(d.rho - rho_g.rho)) < 1e-8


def test_entropy_nonincreasing_along_heat_flow():
    chain = random_chain(9, n=6)
    rng = np.random.default_rng(3)
    rho0 = make_density(rng.uniform(0.1, 3.0, 6), chain.pi)
    grid = np.linspace(0.0, 3.0, 31)
    traj = heat_flow(chain, rho0, grid)
    ents = [entropy(d, chain.pi) for d in traj.densities]
    assert all(b <= a + 1e-12 for a, b in zip(ents, ents[1:]))


def test_free_energy_nonincreasing_along_evolution():
    rng = np.random.default_rng(4)
    for seed in range(5):
        chain = random_chain(seed + 20, n=5)
        params = FreeEnergyParams(V=rng.uniform(-1, 1, 5),
                                  beta=float(rng.uniform(0.05, 0.5)))
        p0 = rng.dirichlet(np.ones(5))
        grid = np.linspace(0.0, 1.0, 51)
        traj = evolve_density(chain, p0, params, grid, substeps=10)
        vals = [free_energy(d, params, chain.pi)[2] for d in traj.densities]
        assert all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))


def test_mass_conserved_each_step():
    chain = random_chain(11, n=7)
    rng = np.random.default_rng(5)
    params = FreeEnergyParams(V=rng.uniform(-1, 1, 7), beta=0.1)
    p0 = rng.dirichlet(np.ones(7))
    traj = evolve_density(chain, p0, params, np.linspace(0, 1, 101), substeps=2)
    for d in traj.densities:
        assert abs(np.dot(chain.pi, d.rho) - 1.0) <= 1e-9


def test_rates_off_diagonal_nonnegative():
    chain = random_chain(13, n=6)
    rng = np.random.default_rng(6)
    rho = make_density(rng.uniform(0.2, 2.0, 6), chain.pi)
    params = FreeEnergyParams(V=rng.uniform(-1, 1, 6), beta=0.2)
    Q = free_energy_rates(chain, rho, params)
    off = Q - np.diag(np.diag(Q))
    assert np.all(off >= 0)
    assert np.allclose(Q.sum(axis=1), 0.0, atol=1e-12)


def test_trajectory_grid_must_increase():
    chain = two_state_chain()
    d = make_density(np.array([1.0, 1.0]), chain.pi)
    with pytest.raises(ParameterError):
        DensityTrajectory(grid=np.array([0.0, 0.5, 0.5]),
                          densities=[d, d, d], clip_events=[])

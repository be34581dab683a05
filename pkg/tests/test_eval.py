import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgflow.dynamics import FreeEnergyParams, evolve_density, heat_flow
from dgflow.errors import ParameterError, ShapeMismatchError
from dgflow.evaluate import (ExperimentConfig, hellinger, run_experiment,
                             single_run, time_avg_hellinger)
from dgflow.geometry import make_density
from dgflow.graphs import generate_graph, to_markov_chain


def test_hellinger_identical():
    p = np.array([0.2, 0.3, 0.5])
    assert hellinger(p, p) == 0.0


def test_hellinger_disjoint_diracs():
    assert hellinger(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == \
        pytest.approx(1.0, abs=1e-15)


def test_hellinger_half_mixture():
    val = hellinger(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    assert val == pytest.approx(np.sqrt((2 - np.sqrt(2)) / 2), abs=1e-12)
    assert val == pytest.approx(0.54120, abs=5e-6)


def test_hellinger_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        hellinger(np.array([0.5, 0.6]), np.array([0.5, 0.5]))
    with pytest.raises(ParameterError):
        hellinger(np.array([-0.1, 1.1]), np.array([0.5, 0.5]))


simplex = st.lists(st.floats(min_value=1e-6, max_value=1.0),
                   min_size=4, max_size=4).map(
    lambda v: np.array(v) / np.sum(v))


@given(simplex, simplex)
def test_hellinger_symmetric_bounded(p, q):
    d = hellinger(p, q)
    assert d == pytest.approx(hellinger(q, p), abs=1e-14)
    assert -1e-12 <= d <= 1.0 + 1e-12


@given(simplex, simplex, simplex)
def test_hellinger_triangle_inequality(p, q, r):
    assert hellinger(p, r) <= hellinger(p, q) + hellinger(q, r) + 1e-12


def test_time_avg_matches_hand_sum():
    g = generate_graph("complete", 4, seed=0)
    chain = to_markov_chain(g)
    rng = np.random.default_rng(0)
    rho0 = make_density(rng.uniform(0.2, 3.0, 4), chain.pi)
    grid = np.linspace(0, 1, 6)
    pred = heat_flow(chain, rho0, grid)
    params = FreeEnergyParams(V=rng.uniform(-1, 1, 4), beta=0.3)
    p0 = rho0.rho * chain.pi
    truth = evolve_density(chain, p0, params, grid, substeps=5)
    val = time_avg_hellinger(pred, truth, chain)
    hand = np.mean([
        hellinger(a, b)
        for a, b in zip(pred.probabilities(chain.pi),
                        truth.probabilities(chain.pi))
    ])
    assert val == pytest.approx(hand, abs=1e-15)
    assert time_avg_hellinger(truth, truth, chain) == 0.0


def test_time_avg_grid_mismatch():
    g = generate_graph("complete", 3, seed=0)
    chain = to_markov_chain(g)
    rho0 = make_density(np.ones(3), chain.pi)
    a = heat_flow(chain, rho0, np.linspace(0, 1, 5))
    b = heat_flow(chain, rho0, np.linspace(0, 1, 6))
    with pytest.raises(ShapeMismatchError):
        time_avg_hellinger(a, b, chain)


def test_config_rejects_unknown_class():
    with pytest.raises(ParameterError):
        ExperimentConfig(classes=("nope",))


def fast_config(**kw):
    base = dict(classes=("complete",), sizes=(4,), betas=(0.1,),
                samples=2000, seeds_per_cell=2, grid_points=41,
                substeps=2, train=dict_cfg())
    base.update(kw)
    return ExperimentConfig(**base)


def dict_cfg():
    from dgflow.learning import TrainConfig
    return TrainConfig(steps=3000, learning_rate=2e-3)


def test_single_run_deterministic():
    cfg = fast_config()
    a = single_run("complete", 0.1, 0, cfg)
    b = single_run("complete", 0.1, 0, cfg)
    assert a.hellinger == b.hellinger
    assert not a.failed


def test_oracle_beats_random_and_bounds_trained():
    learned = run_experiment(fast_config())
    oracle = run_experiment(fast_config(mode="oracle"))
    rnd = run_experiment(fast_config(mode="random"))
    m_l = learned.per_beta[0.1]["mean"]
    m_o = oracle.per_beta[0.1]["mean"]
    m_r = rnd.per_beta[0.1]["mean"]
    assert m_o <= 0.02  # sampling-free resimulation of the truth params
    assert m_l <= m_o + 0.05
    assert m_r > m_l


def test_report_structure():
    rep = run_experiment(fast_config())
    d = rep.to_dict()
    assert d["per_beta"][0]["seeds"] == [0, 1]
    assert ("complete", 0.1) in rep.cells
    assert d["cells"][0]["stable_runs"] <= 2
    assert any(r["beta"] == 0.1 for r in d["reference_scores"])

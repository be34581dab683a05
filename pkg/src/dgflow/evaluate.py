"""Hellinger metrics and the benchmark harness.

Runs the full pipeline per cell (graph class, beta level): sample a graph
and ground-truth parameters, simulate, sample snapshots, train, re-simulate
with the learned parameters from the same start, and score the
time-averaged Hellinger distance.  Collapsed runs are excluded from cell
means but counted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import sample_snapshots
from .dynamics import DensityTrajectory, FreeEnergyParams, evolve_density
from .errors import DgflowError, ParameterError, ShapeMismatchError
from .graphs import GRAPH_CLASSES, MarkovChain, generate_graph, to_markov_chain
from .learning import ModelParams, TrainConfig, detect_collapse, model_forward, train

# Published reference scores for side-by-side display only; never recomputed.
REFERENCE_SCORES = {
    0.01: (0.066, 0.031),
    0.10: (0.059, 0.029),
    0.20: (0.063, 0.037),
}


def hellinger(p: np.ndarray, q: np.ndarray) -> float:
    """(1/sqrt 2) L2 distance between the square-root vectors; in [0, 1]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ShapeMismatchError(f"shape mismatch {p.shape} vs {q.shape}")
    for v in (p, q):
        if np.any(v < 0):
            raise ParameterError("probability vectors must be nonnegative")
        if abs(v.sum() - 1.0) > 1e-8:
            raise ParameterError(f"probabilities must sum to 1, got {v.sum()}")
    return float(np.sqrt(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2) / 2.0))


def time_avg_hellinger(pred: DensityTrajectory, truth: DensityTrajectory,
                       chain: MarkovChain) -> float:
    """Mean per-step Hellinger between the probability rows of two paths."""
    if len(pred.grid) != len(truth.grid) or not np.allclose(
            pred.grid, truth.grid, rtol=0, atol=1e-12):
        raise ShapeMismatchError("trajectory grids differ")
    pp = pred.probabilities(chain.pi)
    tp = truth.probabilities(chain.pi)
    return float(np.mean([hellinger(a, b) for a, b in zip(pp, tp)]))


@dataclass
class ExperimentConfig:
    """Benchmark sweep description with the published defaults."""

    classes: tuple = GRAPH_CLASSES
    sizes: tuple = (3, 4, 5, 6)
    betas: tuple = (0.01, 0.10, 0.20)
    v_range: tuple = (-1.0, 1.0)
    samples: int = 10_000
    seeds_per_cell: int = 5
    t_max: float = 1.0
    grid_points: int = 101
    log_grid: bool = False
    substeps: int = 5
    mode: str = "learned"  # learned | oracle | random
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not self.classes:
            raise ParameterError("at least one graph class is required")
        for c in self.classes:
            if c not in GRAPH_CLASSES:
                raise ParameterError(f"unknown graph class {c!r}")
        if self.mode not in ("learned", "oracle", "random"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.samples < 1 or self.seeds_per_cell < 1 or self.grid_points < 2:
            raise ParameterError("samples, seeds and grid points must be positive")

    def grid(self) -> np.ndarray:
        if self.log_grid:
            g = np.geomspace(self.t_max / (self.grid_points - 1), self.t_max,
                             self.grid_points - 1)
            return np.concatenate([[0.0], g])
        return np.linspace(0.0, self.t_max, self.grid_points)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["classes"] = list(self.classes)
        d["sizes"] = list(self.sizes)
        d["betas"] = list(self.betas)
        d["v_range"] = list(self.v_range)
        d["train"] = self.train.to_dict()
        return d


@dataclass
class RunResult:
    class_tag: str
    beta: float
    seed: int
    n: int
    hellinger: float
    collapsed: bool
    failed: bool
    beta_hat: float
    loss_final: float
    error: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Report:
    config: dict
    runs: list            # RunResult rows
    cells: dict           # (class_tag, beta) -> summary dict
    per_beta: dict        # beta -> summary dict over all classes
    wall_clock: float

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "runs": [r.to_dict() for r in self.runs],
            "cells": [
                {"class_tag": c, "beta": b, **s}
                for (c, b), s in sorted(self.cells.items())
            ],
            "per_beta": [
                {"beta": b, **s} for b, s in sorted(self.per_beta.items())
            ],
            "reference_scores": [
                {"beta": b, "mean": m, "sd": s}
                for b, (m, s) in sorted(REFERENCE_SCORES.items())
            ],
            "wall_clock": self.wall_clock,
        }


def learned_free_energy(params: ModelParams, n: int) -> FreeEnergyParams:
    """Extract an explicit (V, beta) pair from a fitted model.

    The gradient head at state 0 gives V up to the additive gauge; the
    mean removes it.  For the mlp variant beta is averaged over states.
    """
    row, b0 = model_forward(params, 0)
    V = row - row.mean()
    if params.variant == "tabular":
        return FreeEnergyParams(V=V, beta=params.beta())
    betas = [model_forward(params, x)[1] for x in range(n)]
    return FreeEnergyParams(V=V, beta=float(np.mean(betas)))


def single_run(class_tag: str, beta: float, seed: int,
               config: ExperimentConfig) -> RunResult:
    """One benchmark cell member: full pipeline, deterministic in the seed."""
    root = np.random.SeedSequence(seed, spawn_key=(10,))
    draw = np.random.default_rng(root)
    n = int(config.sizes[draw.integers(len(config.sizes))])
    try:
        graph = generate_graph(class_tag, n, seed=seed)
        chain = to_markov_chain(graph)
        lo, hi = config.v_range
        V = draw.uniform(lo, hi, chain.n)
        p0 = draw.dirichlet(np.ones(chain.n))
        truth_params = FreeEnergyParams(V=V, beta=float(beta))
        grid = config.grid()
        truth = evolve_density(chain, p0, truth_params, grid,
                               substeps=config.substeps)

        if config.mode == "oracle":
            fitted_fe = truth_params
            beta_hat, loss_final = float(beta), 0.0
        else:
            dataset = sample_snapshots(truth, chain, config.samples, seed=seed)
            tcfg = TrainConfig(**{**config.train.to_dict(), "seed": seed})
            if config.mode == "random":
                model = (ModelParams.init_tabular(chain.n, seed=seed)
                         if tcfg.variant == "tabular"
                         else ModelParams.init_mlp(chain.n, seed=seed,
                                                   hidden=tcfg.hidden))
                loss_final = float("nan")
            else:
                model, log = train(dataset, chain, tcfg)
                loss_final = float(log.losses[-1]) if len(log.losses) else float("nan")
            fitted_fe = learned_free_energy(model, chain.n)
            beta_hat = fitted_fe.beta
        pred = evolve_density(chain, p0, fitted_fe, grid,
                              substeps=config.substeps)
        collapsed = detect_collapse(pred, chain.pi, truth=truth)
        score = time_avg_hellinger(pred, truth, chain)
        return RunResult(class_tag, float(beta), seed, chain.n, score,
                         collapsed, False, beta_hat, loss_final)
    except DgflowError as exc:
        return RunResult(class_tag, float(beta), seed, n, float("nan"),
                         False, True, float("nan"), float("nan"),
                         error=f"{type(exc).__name__}: {exc}")


def _summarize(rows):
    stable = [r.hellinger for r in rows if not r.failed and not r.collapsed]
    return {
        "mean": float(np.mean(stable)) if stable else float("nan"),
        "sd": float(np.std(stable, ddof=1)) if len(stable) > 1 else 0.0,
        "stable_runs": len(stable),
        "collapsed": sum(1 for r in rows if r.collapsed),
        "failed": sum(1 for r in rows if r.failed),
        "seeds": sorted({r.seed for r in rows}),
    }


def run_experiment(config: ExperimentConfig | None = None,
                   run_fn=None, progress=None) -> Report:
    """Full sweep over (class, beta) cells with seeds_per_cell runs each.

    run_fn lets callers substitute a parallel executor; it must map
    (class_tag, beta, seed, config) tuples to RunResult in order.
    """
    config = config or ExperimentConfig()
    t0 = time.time()
    jobs = [(c, b, s)
            for c in config.classes
            for b in config.betas
            for s in range(config.seeds_per_cell)]
    if run_fn is None:
        results = []
        for c, b, s in jobs:
            results.append(single_run(c, b, s, config))
            if progress:
                progress(results[-1])
    else:
        results = run_fn(jobs, config)

    cells = {}
    for c in config.classes:
        for b in config.betas:
            rows = [r for r in results
                    if r.class_tag == c and r.beta == float(b)]
            cells[(c, float(b))] = _summarize(rows)
    per_beta = {}
    for b in config.betas:
        rows = [r for r in results if r.beta == float(b)]
        per_beta[float(b)] = _summarize(rows)
    return Report(config=config.to_dict(), runs=results, cells=cells,
                  per_beta=per_beta, wall_clock=time.time() - t0)

"""Snapshot datasets and geodesic preprocessing.

Generates empirical per-timestep counts from a ground-truth trajectory,
estimates strictly positive densities from counts, and precomputes the
backward geodesic velocities consumed by the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DgflowError, ParameterError
from .geometry import Density, geodesic_velocity, make_density
from .graphs import MarkovChain
from .dynamics import DensityTrajectory


@dataclass
class SnapshotDataset:
    """Per-timestep state counts on a shared time grid.

    counts has shape (T+1, n).  In exact mode counts holds the exact
    probability rows and total_per_step is 1.0; this bypasses sampling
    noise so geometric and statistical error can be separated in tests.
    """

    grid: np.ndarray
    counts: np.ndarray
    total_per_step: float
    chain_ref: str
    seed: int
    exact: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape[0] != len(self.grid):
            raise ParameterError("one count row per grid point required")
        if np.any(self.counts < 0):
            raise ParameterError("counts must be nonnegative")
        sums = self.counts.sum(axis=1)
        if np.max(np.abs(sums - self.total_per_step)) > 1e-6 * max(1.0, self.total_per_step):
            raise ParameterError("count rows must sum to total_per_step")

    def to_dict(self) -> dict:
        return {
            "grid": [float(t) for t in self.grid],
            "counts": [[float(c) for c in row] for row in self.counts],
            "total_per_step": float(self.total_per_step),
            "chain_ref": self.chain_ref,
            "seed": int(self.seed),
            "exact": bool(self.exact),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SnapshotDataset":
        return cls(
            grid=np.asarray(d["grid"], float),
            counts=np.asarray(d["counts"], float),
            total_per_step=float(d["total_per_step"]),
            chain_ref=d["chain_ref"],
            seed=int(d["seed"]),
            exact=bool(d.get("exact", False)),
        )


@dataclass
class GeodesicTable:
    """Precomputed backward geodesic velocities per snapshot interval.

    velocities[k] is the initial velocity of the geodesic from the density
    at t_{k+1} back to the one at t_k (one entry per interval); failed
    intervals hold None and are skipped by training batches.
    """

    densities: list            # estimated Density per grid point
    velocities: list           # EdgeField (n x n) or None, per interval
    dts: np.ndarray            # interval lengths
    failures: list = field(default_factory=list)  # (interval, message)

    @property
    def num_intervals(self) -> int:
        return len(self.velocities)

    def valid_intervals(self) -> list:
        return [k for k, v in enumerate(self.velocities) if v is not None]


def sample_snapshots(trajectory: DensityTrajectory, chain: MarkovChain,
                     M: int, seed: int = 0) -> SnapshotDataset:
    """Draw M multinomial samples from p_t = rho_t * pi at each grid point."""
    if M < 1:
        raise ParameterError(f"need M >= 1, got {M}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    probs = trajectory.probabilities(chain.pi)
    counts = np.stack([rng.multinomial(M, p / p.sum()) for p in probs])
    return SnapshotDataset(grid=trajectory.grid, counts=counts,
                           total_per_step=float(M), chain_ref="", seed=seed)


def exact_snapshots(trajectory: DensityTrajectory, chain: MarkovChain) -> SnapshotDataset:
    """Infinite-sample dataset: the exact probability rows, no noise."""
    probs = trajectory.probabilities(chain.pi)
    return SnapshotDataset(grid=trajectory.grid, counts=probs,
                           total_per_step=1.0, chain_ref="", seed=0, exact=True)


def estimate_density(counts: np.ndarray, pi: np.ndarray,
                     epsilon: float = 0.5) -> Density:
    """Additively smoothed density estimate from one count row.

    p_hat = (counts + eps) / (M + n eps), rho_hat = p_hat / pi,
    renormalized to unit pi-mass.  Strictly positive for eps > 0.
    """
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ParameterError("counts must be nonnegative and not all zero")
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative")
    n = len(counts)
    p_hat = (counts + epsilon) / (counts.sum() + n * epsilon)
    return make_density(p_hat / np.asarray(pi, float), pi)


def precompute_geodesics(dataset: SnapshotDataset, chain: MarkovChain,
                         epsilon: float = 0.5, mode: str = "single") -> GeodesicTable:
    """Estimate densities and one backward geodesic velocity per interval.

    velocities[k] = v_geo(rho_hat[t_{k+1}] -> rho_hat[t_k]); solver
    failures are recorded and the interval excluded from training.
    """
    if len(dataset.grid) < 2:
        raise ParameterError("dataset needs at least 2 timesteps")
    eps = 0.0 if dataset.exact else epsilon
    densities = [estimate_density(row, chain.pi, eps) for row in dataset.counts]
    dts = np.diff(dataset.grid)
    velocities = []
    failures = []
    for k in range(len(dts)):
        try:
            v = geodesic_velocity(chain, densities[k + 1], densities[k],
                                  dt=float(dts[k]), mode=mode)
            velocities.append(v)
        except DgflowError as err:
            velocities.append(None)
            failures.append((k, str(err)))
    return GeodesicTable(densities=densities, velocities=velocities,
                         dts=dts, failures=failures)

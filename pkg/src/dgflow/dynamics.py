"""Forward simulation of free-energy flows on a chain.

Free-energy functionals, the discrete heat semigroup, the state-dependent
jump rates driving the gradient-flow CTMC, matrix-exponential stepping,
and the two-state closed forms used as oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .geometry import DENSITY_FLOOR, Density, log_mean_matrix, make_density
from .graphs import MarkovChain


@dataclass
class FreeEnergyParams:
    """Per-vertex potential V and entropy weight beta > 0.

    V only matters up to an additive constant; consumers use differences.
    """

    V: np.ndarray
    beta: float

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        if not np.all(np.isfinite(self.V)):
            raise ParameterError("potential must be finite")
        if self.beta <= 0:
            raise ParameterError(f"beta must be positive, got {self.beta}")


@dataclass
class DensityTrajectory:
    """Densities on a strictly increasing time grid starting at 0."""

    grid: np.ndarray
    densities: list  # list of Density
    clip_events: list = field(default_factory=list)  # (step, n_clipped)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid[0] != 0.0 or np.any(np.diff(self.grid) <= 0):
            raise ParameterError("grid must be strictly increasing from 0")
        if len(self.densities) != len(self.grid):
            raise ParameterError("one density per grid point required")

    def probabilities(self, pi: np.ndarray) -> np.ndarray:
        """Stacked probability rows p_t = rho_t * pi, shape (T+1, n)."""
        return np.stack([d.rho * pi for d in self.densities])


def entropy(rho: Density, pi: np.ndarray) -> float:
    """Relative entropy sum_x pi(x) rho(x) log rho(x)."""
    r = rho.rho
    return float(np.sum(pi * r * np.log(r)))


def free_energy(rho: Density, params: FreeEnergyParams, pi: np.ndarray):
    """Return (potential_term, entropy_term, total)."""
    pot = float(np.sum(params.V * rho.rho * pi))
    ent = entropy(rho, pi)
    return pot, ent, pot + params.beta * ent


def gibbs_density(params: FreeEnergyParams, pi: np.ndarray) -> Density:
    """Stationary density of the flow: rho propto exp(-V/beta)."""
    r = np.exp(-(params.V - params.V.min()) / params.beta)
    return make_density(r, pi)


def _check_rate_matrix(Q: np.ndarray):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ParameterError(f"rate matrix must be square, got {Q.shape}")
    off = Q - np.diag(np.diag(Q))
    if np.min(off) < -1e-12:
        raise ParameterError("rate matrix has negative off-diagonal entries")
    if np.max(np.abs(Q.sum(axis=1))) > 1e-9 * max(1.0, np.max(np.abs(Q))):
        raise ParameterError("rate matrix rows must sum to zero")
    return Q


def matrix_exponential(Q: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(t Q) for a rate matrix Q, by scaling and squaring.

    The Taylor series of the scaled matrix is summed until the relative
    term drops below 1e-16.  Rows of the result sum to 1 within 1e-10 and
    tiny negative entries are clipped to zero.
    """
    Q = _check_rate_matrix(Q)
    n = Q.shape[0]
    B = t * Q
    norm = np.max(np.abs(B).sum(axis=1))
    squarings = max(0, int(np.ceil(np.log2(norm)))) if norm > 1.0 else 0
    B = B / (2.0**squarings)
    P = np.eye(n)
    term = np.eye(n)
    scale = max(1.0, np.max(np.abs(P)))
    for k in range(1, 60):
        term = term @ B / k
        P = P + term
        if np.max(np.abs(term)) < 1e-16 * scale:
            break
    for _ in range(squarings):
        P = P @ P
    P = np.where(P < 0, 0.0, P)
    return P


def heat_flow(chain: MarkovChain, rho0: Density, grid: np.ndarray) -> DensityTrajectory:
    """Exact heat evolution rho_t = exp(t (K - I)) rho_0 at each grid point."""
    rho0.validate(chain.pi)
    grid = np.asarray(grid, dtype=float)
    gen = chain.K - np.eye(chain.n)
    densities = []
    for t in grid:
        rho_t = matrix_exponential_raw(gen, t) @ rho0.rho
        densities.append(Density(rho_t))
    return DensityTrajectory(grid=grid, densities=densities)


def matrix_exponential_raw(B: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Scaling-and-squaring exponential without the rate-matrix checks.

    Used for generators applied on the left (columns sum to zero).
    """
    B = t * np.asarray(B, dtype=float)
    n = B.shape[0]
    norm = np.max(np.abs(B).sum(axis=1))
    squarings = max(0, int(np.ceil(np.log2(norm)))) if norm > 1.0 else 0
    B = B / (2.0**squarings)
    P = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ B / k
        P = P + term
        if np.max(np.abs(term)) < 1e-16:
            break
    for _ in range(squarings):
        P = P @ P
    return P


def free_energy_rates(chain: MarkovChain, rho: Density,
                      params: FreeEnergyParams) -> np.ndarray:
    """Jump rates of the free-energy flow at the current density.

    With psi = V + beta log rho, the off-diagonal rate is
    Q[i,j] = K[i,j] Theta[i,j] / rho[i] * max(psi[i] - psi[j], 0),
    so mass flows from high psi to low psi; with V = 0, beta = 1 the net
    flux reduces to the heat equation through the log-mean identity.
    The diagonal closes each row to zero.
    """
    r = rho.rho
    psi = params.V + params.beta * np.log(r)
    Theta = log_mean_matrix(r)
    drop = np.maximum(psi[:, None] - psi[None, :], 0.0)
    Q = chain.K * Theta * drop / r[:, None]
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def evolve_density(chain: MarkovChain, p0: np.ndarray,
                   params: FreeEnergyParams, grid: np.ndarray,
                   substeps: int = 1) -> DensityTrajectory:
    """Evolve a probability vector by freezing the rates per interval.

    On each (sub)interval the rate matrix is rebuilt from the current
    density and the probability row is stepped through exp(dt Q).  Floor
    breaches are clipped, renormalized, and recorded in clip_events.
    substeps > 1 refines the freezing grid between recorded points.
    """
    p = np.asarray(p0, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-8:
        raise ParameterError("p0 must be a probability vector")
    grid = np.asarray(grid, dtype=float)
    clip_events = []

    def current_density(pvec, step):
        rho = pvec / chain.pi
        n_clip = int(np.sum(rho <= DENSITY_FLOOR))
        if n_clip > 0:
            clip_events.append((step, n_clip))
        return make_density(rho, chain.pi)

    densities = [current_density(p, 0)]
    p = densities[0].rho * chain.pi
    for k in range(1, len(grid)):
        dt = (grid[k] - grid[k - 1]) / substeps
        for _ in range(substeps):
            rho = current_density(p, k)
            Q = free_energy_rates(chain, rho, params)
            p = rho.rho * chain.pi @ matrix_exponential(Q, dt)
            mass = p.sum()
            # stiff rate matrices (floored densities at small beta) cost the
            # exponential a few digits; renormalize, fail only on real drift
            if abs(mass - 1.0) > 1e-6:
                raise NumericalError(f"mass drifted to {mass} at step {k}")
            p = p / mass
        densities.append(current_density(p, k))
        p = densities[-1].rho * chain.pi
    return DensityTrajectory(grid=grid, densities=densities,
                             clip_events=clip_events)


def two_point_heat_oracle(p: float, q: float, beta0: float, t: float) -> float:
    """Closed-form skew parameter of the 2-state heat flow.

    beta_t = (p-q)/(p+q) (1 - exp(-(p+q) t)) + beta0 exp(-(p+q) t).
    """
    if not (0 < p < 1 and 0 < q < 1):
        raise ParameterError("need 0 < p, q < 1")
    if not -1 <= beta0 <= 1:
        raise ParameterError("beta0 must lie in [-1, 1]")
    decay = np.exp(-(p + q) * t)
    return float((p - q) / (p + q) * (1.0 - decay) + beta0 * decay)


def two_point_w2(alpha: float, beta: float) -> float:
    """Euclidean W2 between the two-point measures with skews alpha, beta."""
    if not (-1 <= alpha <= 1 and -1 <= beta <= 1):
        raise ParameterError("skew parameters must lie in [-1, 1]")
    return float(np.sqrt(2.0 * abs(alpha - beta)))


def two_point_probability(beta: float) -> np.ndarray:
    """p_beta = [ (1-beta)/2, (1+beta)/2 ]."""
    return np.array([(1.0 - beta) / 2.0, (1.0 + beta) / 2.0])

"""The transport geometry on densities over a reversible chain.

Logarithmic-mean mobility, discrete gradient/divergence, weighted inner
products, and the Schur-Cholesky solver for the discrete continuity
equation that yields geodesic velocities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import BoundaryError, NumericalError, ParameterError
from .graphs import MarkovChain

DENSITY_FLOOR = 1e-12

# Relative diff below which the log-mean switches to its series branch.
_LOGMEAN_SERIES_CUTOFF = 1e-9


@dataclass
class Density:
    """Strictly positive density w.r.t. pi, with unit pi-weighted mass."""

    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)

    def validate(self, pi: np.ndarray):
        if np.any(self.rho <= 0):
            raise ParameterError("density must be strictly positive")
        mass = float(np.dot(pi, self.rho))
        if abs(mass - 1.0) > 1e-10:
            raise ParameterError(f"pi-weighted mass is {mass}, expected 1")


def make_density(values: np.ndarray, pi: np.ndarray,
                 floor: float = DENSITY_FLOOR) -> Density:
    """Clip at the positivity floor and renormalize to unit pi-mass."""
    rho = np.maximum(np.asarray(values, dtype=float), floor)
    rho = rho / np.dot(pi, rho)
    return Density(rho=rho)


@dataclass
class MobilityMatrices:
    """Log-mean mobility of a density and the derived operators.

    Theta: entrywise log-mean of rho; W = diag(pi)(K (.) Theta);
    A = K (.) Theta - diag((K (.) Theta) 1) is the continuity operator;
    M = diag(W 1) - W is the weighted graph Laplacian.
    """

    Theta: np.ndarray
    W: np.ndarray
    A: np.ndarray
    M: np.ndarray


def log_mean(s: float, t: float) -> float:
    """Logarithmic mean (s - t)/(log s - log t), equal to s when s == t.

    A series branch in delta = (s - t)/(s + t) avoids the 0/0 cancellation
    for nearly equal arguments.
    """
    if s <= 0 or t <= 0:
        raise ParameterError(f"log_mean needs positive arguments, got ({s}, {t})")
    if abs(s - t) < _LOGMEAN_SERIES_CUTOFF * max(s, t):
        d = (s - t) / (s + t)
        return 0.5 * (s + t) * (1.0 - d * d / 3.0)
    return (s - t) / (np.log(s) - np.log(t))


def log_mean_matrix(rho: np.ndarray) -> np.ndarray:
    """Entrywise log-mean Theta[i,j] = m(rho[i], rho[j])."""
    rho = np.asarray(rho, dtype=float)
    s = rho[:, None]
    t = rho[None, :]
    diff = s - t
    near = np.abs(diff) < _LOGMEAN_SERIES_CUTOFF * np.maximum(s, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = diff / (np.log(s) - np.log(t))
    d = diff / (s + t)
    series = 0.5 * (s + t) * (1.0 - d * d / 3.0)
    return np.where(near, series, direct)


def dlog_mean_first(s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Partial derivative of the log-mean in its first argument.

    d1 m(s,t) = [log(s/t) - (s-t)/s] / log(s/t)^2, with the limit 1/2 at
    s == t (first-order series 1/2 - (s-t)/(6 t) near the diagonal).
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    diff = s - t
    near = np.abs(diff) < 1e-7 * np.maximum(s, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log(s) - np.log(t)
        direct = (L - diff / s) / (L * L)
    series = 0.5 - diff / (6.0 * t)
    return np.where(near, series, direct)


def mobility(chain: MarkovChain, rho: Density) -> MobilityMatrices:
    """Assemble Theta, W, A, M for a density on the chain."""
    Theta = log_mean_matrix(rho.rho)
    C = chain.K * Theta
    W = chain.pi[:, None] * C
    A = C - np.diag(C.sum(axis=1))
    M = np.diag(W.sum(axis=1)) - W
    M = 0.5 * (M + M.T)  # reversibility makes M symmetric; enforce exactly
    return MobilityMatrices(Theta=Theta, W=W, A=A, M=M)


def discrete_gradient(psi: np.ndarray) -> np.ndarray:
    """Edge field (grad psi)(x,y) = psi(x) - psi(y)."""
    psi = np.asarray(psi, dtype=float)
    return psi[:, None] - psi[None, :]


def discrete_divergence(chain: MarkovChain, Phi: np.ndarray) -> np.ndarray:
    """(div Phi)(x) = 1/2 sum_y K(x,y) (Phi(y,x) - Phi(x,y))."""
    Phi = np.asarray(Phi, dtype=float)
    return 0.5 * (chain.K * (Phi.T - Phi)).sum(axis=1)


def inner_pi(f: np.ndarray, g: np.ndarray, pi: np.ndarray) -> float:
    """<f, g>_pi = sum f g pi."""
    return float(np.sum(np.asarray(f) * np.asarray(g) * np.asarray(pi)))


def inner_rho(Phi: np.ndarray, Psi: np.ndarray, chain: MarkovChain,
              rho: Density) -> float:
    """<Phi, Psi>_rho = 1/2 sum_{x,y} Phi Psi K(x,y) m_rho(x,y) pi(x)."""
    Theta = log_mean_matrix(rho.rho)
    w = chain.K * Theta * chain.pi[:, None]
    return float(0.5 * np.sum(np.asarray(Phi) * np.asarray(Psi) * w))


def _chol_with_jitter(mat: np.ndarray, base_jitter: float, max_tries: int = 8):
    """Lower Cholesky factor of mat + jitter*I, escalating the jitter x100
    on failure.  Returns (L, jitter_used)."""
    jitter = base_jitter
    last_err = None
    for _ in range(max_tries):
        try:
            L = cholesky(mat + jitter * np.eye(mat.shape[0]), lower=True)
            return L, jitter
        except np.linalg.LinAlgError as err:  # pragma: no cover - scipy raises its own
            last_err = err
            jitter *= 100.0
        except Exception as err:
            last_err = err
            jitter *= 100.0
    raise NumericalError(f"Cholesky failed after max jitter {jitter}: {last_err}")


def solve_continuity_potential(chain: MarkovChain, rho: Density,
                               rho_dot: np.ndarray, pin: int = 0,
                               return_multipliers: bool = False):
    """Solve the continuity equation A(rho) psi = -rho_dot for psi.

    Minimizes psi^T M(rho) psi subject to the continuity constraint and the
    gauge psi[pin] = 0, via the KKT system solved with a double Cholesky:

      1. M = L_M L_M^T        (with a small diagonal jitter),
      2. Y = M^{-1} A_g^T     (two triangular solves),
      3. S = A_g Y            (Schur complement),
      4. S = L_S L_S^T,
      5. solve for lambda, then psi = -1/2 Y lambda.

    A_g stacks A(rho) with the gauge row e_pin^T.
    """
    rho_dot = np.asarray(rho_dot, dtype=float)
    n = chain.n
    if rho_dot.shape != (n,):
        raise ParameterError(f"rho_dot has shape {rho_dot.shape}, expected ({n},)")
    balance = float(np.dot(chain.pi, rho_dot))
    if abs(balance) > 1e-10:
        raise ParameterError(f"rho_dot is not pi-balanced: <rho_dot,1>_pi = {balance}")
    rho.validate(chain.pi)

    mob = mobility(chain, rho)
    M, A = mob.M, mob.A

    A_g = np.vstack([A, np.eye(n)[pin]])
    c = np.concatenate([-rho_dot, [0.0]])

    jitter_m = 1e-12 * np.trace(M) / n
    L_M, _ = _chol_with_jitter(M, jitter_m)
    Z = solve_triangular(L_M, A_g.T, lower=True)
    Y = solve_triangular(L_M.T, Z, lower=False)

    S = A_g @ Y
    S = 0.5 * (S + S.T)
    # S is exactly rank-deficient (left kernel of A is pi); the jitter scale
    # comes from the bounded leading block, not the large gauge corner.
    jitter_s = 1e-12 * np.trace(S[:n, :n]) / n
    L_S, _ = _chol_with_jitter(S, jitter_s)
    rhs = -2.0 * c
    lam = solve_triangular(
        L_S.T, solve_triangular(L_S, rhs, lower=True), lower=False
    )
    psi = -0.5 * (Y @ lam)
    psi = psi - psi[pin]

    residual = float(np.max(np.abs(A @ psi + rho_dot)))
    if residual > 1e-8:
        raise NumericalError(
            f"continuity solve residual {residual:.3e} exceeds 1e-8"
        )
    if return_multipliers:
        return psi, lam
    return psi


def geodesic_velocity(chain: MarkovChain, rho_from: Density, rho_to: Density,
                      dt: float = 1.0, pin: int = 0, mode: str = "single",
                      shoot_steps: int = 20, shoot_iters: int = 4) -> np.ndarray:
    """Initial velocity grad(psi) of the geodesic from rho_from to rho_to.

    Default mode treats the displacement rho_to - rho_from as a unit-time
    density derivative and solves one continuity system (first-order
    accurate as the densities approach each other).  mode="shooting"
    refines psi0 with a few fixed-point corrections through the full
    geodesic ODE.
    """
    rho_from.validate(chain.pi)
    rho_to.validate(chain.pi)
    rho_dot = rho_to.rho - rho_from.rho
    psi = solve_continuity_potential(chain, rho_from, rho_dot, pin=pin)
    if mode == "single":
        return discrete_gradient(psi)
    if mode != "shooting":
        raise ParameterError(f"unknown geodesic mode {mode!r}")
    for _ in range(shoot_iters):
        try:
            path = geodesic_shoot(chain, rho_from, psi, steps=shoot_steps,
                                  horizon=1.0)
        except BoundaryError:
            break
        rho_end = path[-1][0].rho
        miss = rho_to.rho - rho_end
        if np.max(np.abs(miss)) < 1e-10:
            break
        correction = solve_continuity_potential(chain, rho_from, miss, pin=pin)
        psi = psi + correction
    return discrete_gradient(psi)


def _geodesic_rhs(chain: MarkovChain, rho: np.ndarray, psi: np.ndarray):
    Theta = log_mean_matrix(rho)
    C = chain.K * Theta
    dpsi = psi[None, :] - psi[:, None]  # psi(y) - psi(x)
    rho_dot = -(C * dpsi).sum(axis=1)
    d1 = dlog_mean_first(rho[:, None], rho[None, :])
    psi_dot = -0.5 * (chain.K * d1 * dpsi**2).sum(axis=1)
    return rho_dot, psi_dot


def geodesic_shoot(chain: MarkovChain, rho0: Density, psi0: np.ndarray,
                   steps: int = 100, horizon: float = 1.0):
    """Integrate the coupled geodesic ODE with RK4.

    Returns the list of (Density, psi) at the steps+1 grid points.  Raises
    BoundaryError if the density hits the positivity floor.
    """
    rho0.validate(chain.pi)
    h = horizon / steps
    rho = rho0.rho.copy()
    psi = np.asarray(psi0, dtype=float).copy()
    mass0 = float(np.dot(chain.pi, rho))
    out = [(Density(rho.copy()), psi.copy())]
    for k in range(steps):
        k1r, k1p = _geodesic_rhs(chain, rho, psi)
        k2r, k2p = _geodesic_rhs(chain, rho + 0.5 * h * k1r, psi + 0.5 * h * k1p)
        k3r, k3p = _geodesic_rhs(chain, rho + 0.5 * h * k2r, psi + 0.5 * h * k2p)
        k4r, k4p = _geodesic_rhs(chain, rho + h * k3r, psi + h * k3p)
        rho = rho + (h / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        psi = psi + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        if np.any(rho <= DENSITY_FLOOR):
            raise BoundaryError(
                f"density left the positive region at step {k + 1}",
                step_index=k + 1,
            )
        mass = float(np.dot(chain.pi, rho))
        if abs(mass - mass0) > 1e-8:
            raise NumericalError(f"mass drifted by {mass - mass0:.3e} at step {k + 1}")
        out.append((Density(rho.copy()), psi.copy()))
    return out


def wk_action(chain: MarkovChain, path, dt: float,
              continuity_tol: float = 1e-6) -> float:
    """Left-endpoint Riemann sum of the kinetic energy along a path.

    path is a list of (Density, psi) pairs; each consecutive pair must
    satisfy the discrete continuity equation within continuity_tol.  The
    value upper-bounds the squared transport distance of the polyline.
    """
    if len(path) < 1:
        raise ParameterError("empty path")
    total = 0.0
    for k in range(len(path) - 1):
        rho_k, psi_k = path[k]
        rho_next, _ = path[k + 1]
        mob = mobility(chain, rho_k)
        drho = (rho_next.rho - rho_k.rho) / dt
        res = float(np.max(np.abs(mob.A @ psi_k + drho)))
        if res > continuity_tol:
            raise ParameterError(
                f"path violates continuity at step {k}: residual {res:.3e}"
            )
        v = discrete_gradient(psi_k)
        total += dt * inner_rho(v, v, chain, rho_k)
    return total

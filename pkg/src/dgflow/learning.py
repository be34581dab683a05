"""Learning the potential gradient and entropy weight from snapshots.

Tabular and MLP heads, the quadratic first-order-optimality loss, exact
analytic gradients, a from-scratch Adam with decoupled weight decay, and
the training loop over precomputed geodesic velocities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import GeodesicTable, SnapshotDataset, precompute_geodesics
from .dynamics import DensityTrajectory
from .errors import NumericalError, ParameterError
from .graphs import MarkovChain

HIDDEN_WIDTH = 64


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass
class ModelParams:
    """Model parameters: a potential-gradient head and a positive beta.

    tabular: an explicit per-vertex table V_table plus raw_beta, with
    beta = softplus(raw_beta).  mlp: two tanh hidden layers of width 64 on
    one-hot states, an n-dim gradient head and a scalar beta head.  The
    gradient head row at state x is oriented as [V(y) - V(x)]_y.
    """

    variant: str
    arrays: dict  # name -> ndarray

    @classmethod
    def init_tabular(cls, n: int, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
        return cls(variant="tabular", arrays={
            "V_table": rng.normal(0.0, 0.01, n),
            "raw_beta": np.array([_inv_softplus(0.5)]),
        })

    @classmethod
    def init_mlp(cls, n: int, seed: int = 0, hidden: int = HIDDEN_WIDTH) -> "ModelParams":
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))

        def glorot(fan_in, fan_out, shape):
            return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), shape)

        return cls(variant="mlp", arrays={
            "W1": glorot(n, hidden, (n, hidden)),
            "b1": np.zeros(hidden),
            "W2": glorot(hidden, hidden, (hidden, hidden)),
            "b2": np.zeros(hidden),
            "W_out": glorot(hidden, n, (hidden, n)),
            "b_out": np.zeros(n),
            "w_beta": glorot(hidden, 1, (hidden,)),
            "b_beta": np.array([_inv_softplus(0.5)]),
        })

    def copy(self) -> "ModelParams":
        return ModelParams(self.variant,
                           {k: v.copy() for k, v in self.arrays.items()})

    def beta(self) -> float:
        if self.variant == "tabular":
            return float(softplus(self.arrays["raw_beta"][0]))
        raise ParameterError("mlp beta is state-dependent; use model_forward")

    def centered_potential(self) -> np.ndarray:
        """Tabular V with the additive gauge removed (zero mean)."""
        if self.variant != "tabular":
            raise ParameterError("only the tabular variant has an explicit table")
        V = self.arrays["V_table"]
        return V - V.mean()


def _inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def _mlp_hidden(params: ModelParams, xs: np.ndarray):
    a = params.arrays
    z1 = a["W1"][xs] + a["b1"]
    h1 = np.tanh(z1)
    z2 = h1 @ a["W2"] + a["b2"]
    h2 = np.tanh(z2)
    return h1, h2


def model_forward(params: ModelParams, state_index: int):
    """Predicted gradient row [V(y) - V(x)]_y at a state, and beta > 0."""
    xs = np.array([int(state_index)])
    g, b = _forward_batch(params, xs)
    return g[0], float(b[0])


def _forward_batch(params: ModelParams, xs: np.ndarray):
    a = params.arrays
    n = _model_n(params)
    if np.any(xs < 0) or np.any(xs >= n):
        raise ParameterError("state index out of range")
    if params.variant == "tabular":
        V = a["V_table"]
        g = V[None, :] - V[xs][:, None]
        b = np.full(len(xs), softplus(a["raw_beta"][0]))
        return g, b
    h1, h2 = _mlp_hidden(params, xs)
    g = h2 @ a["W_out"] + a["b_out"]
    b = softplus(h2 @ a["w_beta"] + a["b_beta"][0])
    return g, b


def _model_n(params: ModelParams) -> int:
    if params.variant == "tabular":
        return len(params.arrays["V_table"])
    return params.arrays["W1"].shape[0]


def _geo_arrays(geo: GeodesicTable):
    """Stacked per-interval arrays for vectorized batch assembly (cached)."""
    cache = getattr(geo, "_stacked", None)
    if cache is None:
        T = geo.num_intervals
        n = len(geo.densities[0].rho)
        logR = np.stack([np.log(geo.densities[k + 1].rho) for k in range(T)])
        # velocity rows flipped to the [f(y) - f(x)]_y orientation
        U = np.zeros((T, n, n))
        ok = np.zeros(T, dtype=bool)
        for k, v in enumerate(geo.velocities):
            if v is not None:
                U[k] = -v
                ok[k] = True
        cache = (logR, U, ok, np.asarray(geo.dts, dtype=float))
        geo._stacked = cache
    return cache


def _batch_targets(batch, geo: GeodesicTable, tau):
    """Score rows and velocity-over-tau rows, in [f(y) - f(x)]_y orientation."""
    xs = np.array([b[0] for b in batch], dtype=int)
    ks = np.array([b[1] for b in batch], dtype=int)
    logR, U, ok, dts = _geo_arrays(geo)
    if not np.all(ok[ks]):
        bad = int(ks[~ok[ks]][0])
        raise ParameterError(f"batch references failed geodesic interval {bad}")
    rows = np.arange(len(xs))
    L = logR[ks]
    S = L - L[rows, xs][:, None]
    t = dts[ks] if tau is None else np.full(len(xs), float(tau))
    Urows = U[ks, xs] / t[:, None]
    return xs, ks, S, Urows


def loss(params: ModelParams, batch, geo: GeodesicTable,
         tau: float | None = None) -> float:
    """Mean squared first-order-optimality residual over the batch."""
    xs, _, S, U = _batch_targets(batch, geo, tau)
    g, b = _forward_batch(params, xs)
    R = g + b[:, None] * S - U
    return float(np.mean(np.sum(R * R, axis=1)))


def loss_gradient(params: ModelParams, batch, geo: GeodesicTable,
                  tau: float | None = None):
    """Exact gradient of loss() w.r.t. every parameter array."""
    xs, _, S, U = _batch_targets(batch, geo, tau)
    B = len(xs)
    a = params.arrays
    if params.variant == "tabular":
        V = a["V_table"]
        raw = a["raw_beta"][0]
        beta = softplus(raw)
        g = V[None, :] - V[xs][:, None]
        R = g + beta * S - U
        gV = 2.0 / B * R.sum(axis=0)
        np.add.at(gV, xs, -2.0 / B * R.sum(axis=1))
        graw = 2.0 / B * np.sum(R * S) * sigmoid(raw)
        value = float(np.mean(np.sum(R * R, axis=1)))
        return {"V_table": gV, "raw_beta": np.array([graw])}, value

    h1, h2 = _mlp_hidden(params, xs)
    g = h2 @ a["W_out"] + a["b_out"]
    z_b = h2 @ a["w_beta"] + a["b_beta"][0]
    b = softplus(z_b)
    R = g + b[:, None] * S - U
    value = float(np.mean(np.sum(R * R, axis=1)))

    dG = 2.0 / B * R                                   # dL/d(head output)
    db = 2.0 / B * np.sum(R * S, axis=1) * sigmoid(z_b)
    grads = {
        "W_out": h2.T @ dG,
        "b_out": dG.sum(axis=0),
        "w_beta": h2.T @ db,
        "b_beta": np.array([db.sum()]),
    }
    dh2 = dG @ a["W_out"].T + db[:, None] * a["w_beta"][None, :]
    dz2 = dh2 * (1.0 - h2 * h2)
    grads["W2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ a["W2"].T
    dz1 = dh1 * (1.0 - h1 * h1)
    gW1 = np.zeros_like(a["W1"])
    np.add.at(gW1, xs, dz1)
    grads["W1"] = gW1
    grads["b1"] = dz1.sum(axis=0)
    return grads, value


@dataclass
class TrainConfig:
    epochs: int = 2
    batch_size: int = 128
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-6
    tau: float | None = None      # None: per-interval grid spacing
    seed: int = 0
    variant: str = "tabular"
    epsilon: float = 0.5          # density-estimate smoothing
    geodesic_mode: str = "single"
    steps: int | None = None      # overrides epochs * (samples / batch)
    hidden: int = HIDDEN_WIDTH

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.arrays.items()},
                   v={k: np.zeros_like(v) for k, v in params.arrays.items()})


def adam_step(opt_state: AdamState, params: ModelParams, gradient: dict,
              config: TrainConfig):
    """One Adam update with bias correction and decoupled weight decay."""
    t = opt_state.t + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    new_arrays = {}
    new_m, new_v = {}, {}
    for k, p in params.arrays.items():
        gk = gradient[k]
        m = b1 * opt_state.m[k] + (1 - b1) * gk
        v = b2 * opt_state.v[k] + (1 - b2) * gk * gk
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        upd = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_arrays[k] = p - upd - config.learning_rate * config.weight_decay * p
        new_m[k], new_v[k] = m, v
    return (ModelParams(params.variant, new_arrays),
            AdamState(m=new_m, v=new_v, t=t))


@dataclass
class TrainingLog:
    steps: np.ndarray
    losses: np.ndarray
    betas: np.ndarray

    def to_rows(self):
        return [(int(s), float(l), float(b))
                for s, l, b in zip(self.steps, self.losses, self.betas)]


def train(dataset: SnapshotDataset, chain: MarkovChain,
          config: TrainConfig | None = None,
          geo: GeodesicTable | None = None):
    """Fit the model on a snapshot dataset.

    Precomputes the geodesic table once, then runs minibatch Adam on the
    quadratic residual loss.  Batch elements draw (interval, state) pairs
    independently: interval uniform over the non-failed ones, state from
    the estimated probability at the interval's later endpoint.
    """
    config = config or TrainConfig()
    if len(dataset.grid) < 2:
        raise ParameterError("dataset needs at least 2 timesteps")
    if geo is None:
        geo = precompute_geodesics(dataset, chain, epsilon=config.epsilon,
                                   mode=config.geodesic_mode)
    valid = geo.valid_intervals()
    if not valid:
        raise NumericalError("all geodesic intervals failed; cannot train")
    valid = np.asarray(valid, dtype=int)

    n = chain.n
    if config.variant == "tabular":
        params = ModelParams.init_tabular(n, seed=config.seed)
    elif config.variant == "mlp":
        params = ModelParams.init_mlp(n, seed=config.seed, hidden=config.hidden)
    else:
        raise ParameterError(f"unknown variant {config.variant!r}")

    # sampling distributions at the later endpoint of each valid interval
    cdfs = np.stack([
        np.cumsum(geo.densities[k + 1].rho * chain.pi) for k in valid
    ])
    cdfs /= cdfs[:, -1:]

    if config.steps is not None:
        total_steps = config.steps
    else:
        per_epoch = max(1, int(np.ceil(
            dataset.total_per_step * len(valid) / config.batch_size)))
        total_steps = config.epochs * per_epoch

    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(4,)))
    opt = AdamState.init(params)
    log_steps, log_losses, log_betas = [], [], []
    for step in range(total_steps):
        pick = rng.integers(len(valid), size=config.batch_size)
        u = rng.random(config.batch_size)
        xs = (cdfs[pick] < u[:, None]).sum(axis=1)
        batch = list(zip(xs, valid[pick]))
        grads, value = loss_gradient(params, batch, geo, config.tau)
        params, opt = adam_step(opt, params, grads, config)
        log_steps.append(step)
        log_losses.append(value)
        if params.variant == "tabular":
            log_betas.append(float(softplus(params.arrays["raw_beta"][0])))
        else:
            log_betas.append(float(np.mean(_forward_batch(params, xs)[1])))
    log = TrainingLog(steps=np.asarray(log_steps),
                      losses=np.asarray(log_losses),
                      betas=np.asarray(log_betas))
    return params, log


def detect_collapse(pred: DensityTrajectory, pi: np.ndarray,
                    truth: DensityTrajectory | None = None,
                    threshold: float = 0.99) -> bool:
    """Flag degenerate dynamics concentrating mass on a single vertex.

    True iff at some step the predicted max-probability state carries at
    least `threshold` of the mass while the ground truth (when given) does
    not concentrate at that step.
    """
    pred_p = pred.probabilities(pi)
    truth_p = truth.probabilities(pi) if truth is not None else None
    for k, p in enumerate(pred_p):
        if p.max() >= threshold:
            if truth_p is None or truth_p[k].max() < threshold:
                return True
    return False

"""DSVRG with a rotating centre over collection-point shards.

Every round the centre broadcasts the global weights, each CP returns its full
local gradient, the centre averages them and then runs one SVRG pass over its
own shard before rotating the centre role round-robin.  Nothing is sent over a
network; messages and gradient evaluations are counted instead.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .data import LabeledDataset, ShardSet


class DivergenceError(RuntimeError):
    """Weights became non-finite; carries the partial trace."""

    def __init__(self, round_index: int, trace: "TrainingTrace"):
        super().__init__(f"DSVRG diverged in round {round_index}")
        self.round_index = round_index
        self.trace = trace


@dataclass(frozen=True)
class LearnerConfig:
    lam: float = 1e-4
    eta: float = 0.5
    epsilon: float = 1e-2
    max_rounds: int = 500
    omega: int = 54
    tau: float | None = None  # FLOPs per gradient; defaults to omega
    bias: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.flops_per_gradient < 1:
            raise ValueError("tau must be >= 1")

    @property
    def flops_per_gradient(self) -> float:
        return float(self.omega if self.tau is None else self.tau)


@dataclass
class ModelState:
    w_global: np.ndarray
    w_local: np.ndarray  # one row per CP
    h_avg: np.ndarray
    t: int = 0


@dataclass
class TrainingTrace:
    rounds: int = 0
    gradient_evals: int = 0
    messages: int = 0
    tau: float = 1.0
    grad_norm_history: list[float] = field(default_factory=list)
    converged: bool = False
    update_passes: int = 0
    w_global: np.ndarray | None = None

    @property
    def flops(self) -> float:
        return self.gradient_evals * self.tau

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "gradient_evals": self.gradient_evals,
            "flops": self.flops,
            "messages": self.messages,
            "converged": self.converged,
            "update_passes": self.update_passes,
            "grad_norm_history": self.grad_norm_history,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


class GradientCounter:
    """Running tally of per-sample gradient evaluations."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += n


def _check_shard(shard: LabeledDataset):
    if len(shard) == 0:
        raise ValueError("empty shard")


def _loss(X, y, w, lam):
    n = len(y)
    return float(np.logaddexp(0.0, -y * (X @ w)).mean() + lam / n * (w @ w))


def _grad(X, y, w, lam):
    n = len(y)
    coef = -y * expit(-y * (X @ w))
    return X.T @ coef / n + (2.0 * lam / n) * w


def logistic_loss(shard: LabeledDataset, w, lam: float) -> float:
    """Mean logistic loss plus (lam / |shard|) * ||w||^2."""
    _check_shard(shard)
    return _loss(shard.features, shard.labels.astype(float), np.asarray(w, dtype=float), lam)


def logistic_gradient(shard: LabeledDataset, w, lam: float, counter: GradientCounter | None = None):
    _check_shard(shard)
    if counter is not None:
        counter.add(len(shard))
    return _grad(shard.features, shard.labels.astype(float), np.asarray(w, dtype=float), lam)


def sample_gradient(x, y: float, w, lam: float, shard_size: int):
    """Gradient of one sample's share of the shard objective."""
    return -y * expit(-y * (x @ w)) * x + (2.0 * lam / shard_size) * w


def local_update(w_k, w_global, h_avg, x, y: float, eta: float, lam: float = 0.0, shard_size: int = 1):
    """One variance-reduced step: w_k - eta * (g(w_k) - g(w_global) + h_avg)."""
    w_k = np.asarray(w_k, dtype=float)
    w_global = np.asarray(w_global, dtype=float)
    x = np.asarray(x, dtype=float)
    step = sample_gradient(x, y, w_k, lam, shard_size) - sample_gradient(x, y, w_global, lam, shard_size) + h_avg
    return w_k - eta * step


def global_update(w_new, w_global, t: int):
    """Running average of local results: (w_new + t * w_global) / (t + 1)."""
    if t < 0:
        raise ValueError("round index must be >= 0")
    return (np.asarray(w_new, dtype=float) + t * np.asarray(w_global, dtype=float)) / (t + 1)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def svrg_pass(X, y, w_global, h_avg, eta: float, lam: float):
    """Apply the local update once per sample of (X, y), in order, starting at w_global.

    With r = 2*lam/n the step is affine in w apart from the logistic term, so
    it is folded into w <- a*w + b - eta*c_i*x_i.
    """
    n = len(y)
    r = 2.0 * lam / n
    a = 1.0 - eta * r
    b = eta * r * w_global - eta * h_avg
    snap = expit(-y * (X @ w_global))
    w = w_global.copy()
    for i in range(n):
        x = X[i]
        yi = y[i]
        c = -yi * (_sigmoid(-yi * float(x @ w)) - snap[i])
        w *= a
        w += b
        w -= (eta * c) * x
    return w


def run_dsvrg(data: LabeledDataset, cps: ShardSet, cfg: LearnerConfig, seed: int = 0) -> TrainingTrace:
    """Train until ||grad||^2 <= epsilon at the global weights or max_rounds.

    ``seed`` only picks the first centre.  A round whose averaged gradient
    already meets the target ends the run without a local pass; its broadcast
    and gradient collection are still charged.
    """
    m1 = len(cps)
    if m1 < 1:
        raise ValueError("need at least one collection point")
    X = data.features
    if cfg.bias:
        X = np.hstack([X, np.ones((len(X), 1))])
    if X.shape[1] != cfg.omega:
        raise ValueError(f"model size omega={cfg.omega} but data gives {X.shape[1]} weights")
    y = data.labels.astype(float)
    parts = []
    for k, idx in enumerate(cps.shards):
        if len(idx) == 0:
            raise ValueError(f"collection point {k} holds no data")
        parts.append((np.ascontiguousarray(X[idx]), y[idx]))

    state = ModelState(
        w_global=np.zeros(cfg.omega),
        w_local=np.zeros((m1, cfg.omega)),
        h_avg=np.zeros(cfg.omega),
    )
    trace = TrainingTrace(tau=cfg.flops_per_gradient)
    per_round_msgs = 2 * (m1 - 1) * cfg.omega
    center = int(np.random.default_rng(seed).integers(m1))

    for t in range(cfg.max_rounds):
        state.t = t
        trace.rounds += 1
        trace.messages += per_round_msgs
        grads = np.empty((m1, cfg.omega))
        for k, (Xk, yk) in enumerate(parts):
            grads[k] = _grad(Xk, yk, state.w_global, cfg.lam)
            trace.gradient_evals += len(yk)
        state.h_avg = grads.mean(axis=0)
        gnorm = float(state.h_avg @ state.h_avg)
        trace.grad_norm_history.append(gnorm)
        if not math.isfinite(gnorm):
            trace.w_global = state.w_global
            raise DivergenceError(t, trace)
        if gnorm <= cfg.epsilon:
            trace.converged = True
            break

        Xc, yc = parts[center]
        with np.errstate(over="ignore", invalid="ignore"):  # checked just below
            w_k = svrg_pass(Xc, yc, state.w_global, state.h_avg, cfg.eta, cfg.lam)
        trace.gradient_evals += len(yc)
        trace.update_passes += 1
        if not np.all(np.isfinite(w_k)):
            trace.w_global = state.w_global
            raise DivergenceError(t, trace)
        state.w_local[center] = w_k
        state.w_global = global_update(w_k, state.w_global, t)
        center = (center + 1) % m1

    trace.w_global = state.w_global
    return trace

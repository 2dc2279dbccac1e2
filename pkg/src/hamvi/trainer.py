"""Stochastic gradient ascent on a bound, with minibatching and early stopping."""
from __future__ import annotations

import csv
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .data import ConfigurationError, Dataset
from .optim import OptimizerState, apply_step
from .rng import make_rng


class TrainingError(FloatingPointError):
    def __init__(self, epoch, theta, phi, message="non-finite objective"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
        self.theta = np.array(theta)
        self.phi = np.array(phi)


@dataclass
class TrainConfig:
    """Settings of one training run.

    ``patience=None`` disables early stopping. ``tail_average`` is the
    fraction of final epochs whose iterates are averaged into the returned
    parameters (0 returns the last iterate). ``tol`` stops when the relative
    parameter change of an epoch falls below it.
    """

    batch_size: int = 100
    epochs: int = 20000
    patience: int | None = None
    lr: float = 1e-3
    optimizer: str = "rmsprop"
    seed: int = 0
    val_fraction: float = 0.1
    tol: float = 1e-8
    tail_average: float = 0.0
    eval_samples: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be at least 1")
        if self.patience is not None and self.patience < 0:
            raise ConfigurationError("patience must be non-negative")
        if not 0.0 <= self.tail_average < 1.0:
            raise ConfigurationError("tail_average must lie in [0, 1)")


@dataclass
class TraceRow:
    epoch: int
    train_elbo: float
    val_elbo: float
    wall_ms: float


@dataclass
class TrainResult:
    theta: np.ndarray
    phi: np.ndarray
    trace: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    state: OptimizerState | None = None

    @property
    def epochs(self) -> int:
        return len(self.trace)


def early_stop(values, patience) -> bool:
    """True once the best value is ``max(patience, 1)`` or more epochs old.

    ``values`` are per-epoch validation bounds, larger is better.
    """
    if patience is None or len(values) == 0:
        return False
    values = np.asarray(values, dtype=float)
    best = int(np.argmax(values))
    return len(values) - 1 - best >= max(patience, 1)


def split_train_val(data: Dataset, fraction: float, rng):
    if fraction <= 0 or data.n < 2:
        return data, None
    n_val = max(1, int(round(fraction * data.n)))
    perm = rng.permutation(data.n)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def train(model, objective, data: Dataset, cfg: TrainConfig, theta0, phi0, global_latent=None) -> TrainResult:
    """Maximise the objective's bound over ``(theta, phi)``.

    Global-latent models (the conjugate Gaussian) take one full-batch step
    per epoch using the dataset's sufficient statistics; per-datapoint models
    are minibatched over a training split and monitored on a validation split.
    """
    if data.n < 1:
        raise ConfigurationError("training needs a non-empty dataset")
    if global_latent is None:
        global_latent = hasattr(model, "exact_log_marginal")
    rng = make_rng(cfg.seed)
    theta = np.array(theta0, dtype=float)
    phi = np.array(phi0, dtype=float)
    n_theta = theta.size
    params = np.concatenate([theta, phi])
    state = OptimizerState.for_params(cfg.optimizer, params, lr=cfg.lr)

    if global_latent:
        train_set, val_set = data, None
    else:
        train_set, val_set = split_train_val(data, cfg.val_fraction, rng)

    tail_start = cfg.epochs - int(cfg.tail_average * cfg.epochs)
    tail_sum = np.zeros_like(params)
    tail_n = 0
    trace = []
    monitor = []
    best_params = params.copy()
    best_epoch = 0
    stopped = False
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        before = params.copy()
        if global_latent:
            batches = [train_set]
        else:
            order = rng.permutation(train_set.n)
            batches = [train_set.rows[order[i:i + cfg.batch_size]]
                       for i in range(0, train_set.n, cfg.batch_size)]
        total, count = 0.0, 0
        for batch in batches:
            value, d_theta, d_phi = objective.step_grad(params[:n_theta], params[n_theta:], batch, rng)
            grad = np.concatenate([d_theta, d_phi])
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingError(epoch, params[:n_theta], params[n_theta:])
            params, state = apply_step(state, params, grad)
            weight = 1 if global_latent else len(batch)
            total += value * weight
            count += weight
        train_elbo = total / count
        if val_set is not None:
            val_elbo = float(np.mean(objective.evaluate(params[:n_theta], params[n_theta:], val_set.rows, rng,
                                                        cfg.eval_samples)))
        else:
            val_elbo = float("nan")
        trace.append(TraceRow(epoch, train_elbo, val_elbo, 1e3 * (time.perf_counter() - t0)))
        if epoch > tail_start:
            tail_sum += params
            tail_n += 1

        if cfg.patience is not None:
            monitor.append(val_elbo if val_set is not None else train_elbo)
            if monitor[-1] == max(monitor):
                best_params = params.copy()
                best_epoch = epoch
            if early_stop(monitor, cfg.patience):
                stopped = True
                break
        change = np.linalg.norm(params - before)
        if cfg.tol > 0 and change <= cfg.tol * (np.linalg.norm(before) + cfg.tol):
            break

    if stopped:
        final = best_params
    elif tail_n > 0 and cfg.tail_average > 0:
        final = tail_sum / tail_n
        best_epoch = len(trace)
    else:
        final = params
        best_epoch = len(trace)
    return TrainResult(final[:n_theta].copy(), final[n_theta:].copy(), trace, best_epoch, stopped, state)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_elbo", "val_elbo", "wall_ms"])
        for r in trace:
            w.writerow([r.epoch, repr(r.train_elbo), repr(r.val_elbo), f"{r.wall_ms:.3f}"])


CHECKPOINT_MAGIC = b"HVCK1"
_CK_HEADER = struct.Struct("<5sBIIIQd")


def save_checkpoint(path, theta, phi, state: OptimizerState) -> None:
    """Binary checkpoint: header, then theta, phi and the two accumulators as little-endian f64.

    Header fields: magic ``HVCK1``, optimizer tag (0 RMSProp, 1 Adamax),
    ``u32`` lengths of theta and phi, ``u32`` reserved, ``u64`` step, ``f64`` lr.
    """
    theta = np.asarray(theta, dtype="<f8")
    phi = np.asarray(phi, dtype="<f8")
    tag = 0 if state.method == "rmsprop" else 1
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CHECKPOINT_MAGIC, tag, theta.size, phi.size, 0, state.step, state.lr))
        for a in (theta, phi, state.moment, state.inf_norm):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, tag, n_theta, n_phi, _, step, lr = _CK_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not a checkpoint")
    body = np.frombuffer(raw[_CK_HEADER.size:], dtype="<f8")
    n = n_theta + n_phi
    if body.size != 2 * n + n:
        raise ConfigurationError(f"{path}: truncated checkpoint")
    theta, phi = body[:n_theta].copy(), body[n_theta:n].copy()
    state = OptimizerState("rmsprop" if tag == 0 else "adamax", lr=lr, step=int(step))
    state.moment = body[n:2 * n].copy()
    state.inf_norm = body[2 * n:].copy()
    return theta, phi, state

"""Lower-bound and likelihood estimators.

All estimators take their randomness as explicit arrays so that two
estimators can be compared on matched noise. Leading batch axes of the noise
become leading axes of the returned values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import ConfigurationError, DomainError
from .flow import FlowConfig, PhasePoint, forward_flow, hamiltonian
from .models import LOG_2PI
from .priors import MeanFieldParams, MeanFieldPrior


@dataclass(frozen=True)
class HISNoise:
    """Base noise for one or more HIS draws: prior noise and momentum noise ``gamma``."""

    z: np.ndarray
    gamma: np.ndarray


def draw_his_noise(rng: np.random.Generator, latent_dim: int, size=(), noise_dim=None) -> HISNoise:
    size = (size,) if np.isscalar(size) else tuple(size)
    noise_dim = latent_dim if noise_dim is None else noise_dim
    return HISNoise(rng.standard_normal(size + (noise_dim,)), rng.standard_normal(size + (latent_dim,)))


@dataclass(frozen=True)
class ElboEstimate:
    value: np.ndarray
    final_hamiltonian: np.ndarray
    log_jacobian: float
    z_K: np.ndarray

    def __float__(self):
        return float(self.value)


def log_mean_exp(a, axis=0):
    a = np.asarray(a, dtype=float)
    return logsumexp(a, axis=axis) - np.log(a.shape[axis])


def _his_forward(model, x, theta, config: FlowConfig, prior, phi, noise: HISNoise):
    z0 = prior.sample(phi, x, noise.z)
    rho0 = np.asarray(noise.gamma, dtype=float) / np.sqrt(config.beta0)
    z0, rho0 = np.broadcast_arrays(z0, rho0)
    return z0, forward_flow(config, model, theta, x, PhasePoint(z0, rho0))


def his_elbo(model, x, theta, config: FlowConfig, prior, phi, noise: HISNoise) -> ElboEstimate:
    """``log pbar(x, z_K, rho_K) - log qbar(z_0, rho_0)`` for the deterministic flow.

    ``qbar`` is the initial density divided by the accumulated flow Jacobian.
    """
    z0, traj = _his_forward(model, x, theta, config, prior, phi, noise)
    ell = z0.shape[-1]
    zK, rhoK, rho0 = traj.z[-1], traj.rho[-1], traj.rho[0]
    beta0 = config.beta0
    log_p_bar = model.log_joint(theta, x, zK) - 0.5 * np.sum(rhoK**2, axis=-1) - 0.5 * ell * LOG_2PI
    log_q_rho = 0.5 * ell * (np.log(beta0) - LOG_2PI) - 0.5 * beta0 * np.sum(rho0**2, axis=-1)
    log_q_bar = prior.log_density(phi, x, z0) + log_q_rho - traj.log_jacobian
    H = hamiltonian(model, theta, x, traj.final)
    return ElboEstimate(log_p_bar - log_q_bar, H, traj.log_jacobian, zK)


def his_elbo_rao_blackwell(model, x, theta, config: FlowConfig, prior, phi, noise: HISNoise) -> ElboEstimate:
    """HIS bound with the initial momentum energy replaced by its mean ``ell / 2``."""
    z0, traj = _his_forward(model, x, theta, config, prior, phi, noise)
    ell = z0.shape[-1]
    zK, rhoK = traj.z[-1], traj.rho[-1]
    value = (model.log_joint(theta, x, zK) - 0.5 * np.sum(rhoK**2, axis=-1)
             - prior.log_density(phi, x, z0) + 0.5 * ell)
    H = hamiltonian(model, theta, x, traj.final)
    return ElboEstimate(value, H, traj.log_jacobian, zK)


def vanilla_elbo(model, x, theta, mf: MeanFieldParams, noise) -> ElboEstimate:
    """Reparameterised single-sample bound for a diagonal Gaussian posterior."""
    noise = np.asarray(noise, dtype=float)
    z = mf.mu + np.sqrt(mf.var) * noise
    log_q = np.sum(-0.5 * noise**2 - 0.5 * np.log(mf.var) - 0.5 * LOG_2PI, axis=-1)
    log_p = model.log_joint(theta, x, z)
    return ElboEstimate(log_p - log_q, -log_p, 0.0, z)


@dataclass(frozen=True)
class PlanarFlowParams:
    """Planar map ``z + u tanh(w.z + b)`` applied ``T`` times with the same parameters."""

    u: np.ndarray
    w: np.ndarray
    b: float
    T: int

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if u.shape != w.shape:
            raise ConfigurationError("u and w must have the same shape")
        if self.T < 0:
            raise ConfigurationError("T must be non-negative")
        if float(w @ u) < -1.0:
            raise DomainError("planar map is not invertible: w.u < -1")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))


def planar_reproject(u, w):
    """Shift ``u`` along ``w`` so that ``w . u_hat = softplus(w . u) - 1 > -1``."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    wu = float(w @ u)
    ww = float(w @ w)
    if ww == 0.0:
        return u.copy()
    m = -1.0 + np.logaddexp(0.0, wu)
    return u + (m - wu) * w / ww


def planar_forward(nf: PlanarFlowParams, z0):
    """Push ``z0`` through the tied planar flow; returns the states and the summed log-determinants."""
    z = np.asarray(z0, dtype=float)
    states = [z]
    logdet = np.zeros(z.shape[:-1])
    uw = float(nf.u @ nf.w)
    for t in range(nf.T):
        h = np.tanh(z @ nf.w + nf.b)
        s = 1.0 + (1.0 - h * h) * uw
        if np.any(np.abs(s) < 1e-12):
            raise FloatingPointError(f"planar map singular at iteration {t + 1}")
        logdet = logdet + np.log(np.abs(s))
        z = z + h[..., None] * nf.u
        states.append(z)
    return np.stack(states), logdet


def planar_nf_elbo(model, x, theta, nf: PlanarFlowParams, prior, phi, noise) -> ElboEstimate:
    """``log p(x, z_T) - log q0(z_0) + sum_t log|1 + u . psi(z_t)|``."""
    z0 = prior.sample(phi, x, noise)
    states, logdet = planar_forward(nf, z0)
    zT = states[-1]
    log_p = model.log_joint(theta, x, zT)
    return ElboEstimate(log_p - prior.log_density(phi, x, z0) + logdet, -log_p, logdet, zT)


def importance_log_weights(model, x, theta, prior, phi, noise):
    z = prior.sample(phi, x, noise)
    return model.log_joint(theta, x, z) - prior.log_density(phi, x, z)


def iwae_bound(model, x, theta, prior, phi, L: int, noise):
    """Log of the average of ``L`` importance weights; ``noise`` has shape ``(L, ..., noise_dim)``."""
    if L < 1:
        raise ConfigurationError("L must be at least 1")
    noise = np.asarray(noise, dtype=float)
    if noise.shape[0] != L:
        raise ConfigurationError(f"noise carries {noise.shape[0]} samples, expected {L}")
    return log_mean_exp(importance_log_weights(model, x, theta, prior, phi, noise), axis=0)


class PriorProposal:
    """Importance sampling straight from a variational prior."""

    def __init__(self, prior, phi=None):
        self.prior = prior
        self.phi = np.zeros(0) if phi is None else np.asarray(phi, dtype=float)

    def log_weights(self, model, x, theta, n, rng):
        noise = rng.standard_normal((n, self.prior.noise_dim))
        return importance_log_weights(model, x, theta, self.prior, self.phi, noise)


class MeanFieldProposal(PriorProposal):
    def __init__(self, mf: MeanFieldParams):
        super().__init__(MeanFieldPrior(mf.mu.shape[0]), MeanFieldPrior.phi_from(mf))


class HISProposal:
    """Extended-space proposal of the Hamiltonian flow; weights are exponentiated HIS bounds."""

    def __init__(self, config: FlowConfig, prior, phi=None):
        self.config = config
        self.prior = prior
        self.phi = np.zeros(0) if phi is None else np.asarray(phi, dtype=float)

    def log_weights(self, model, x, theta, n, rng):
        noise = draw_his_noise(rng, self.prior.latent_dim, n, self.prior.noise_dim)
        return his_elbo(model, x, theta, self.config, self.prior, self.phi, noise).value


class PlanarProposal:
    def __init__(self, nf: PlanarFlowParams, prior, phi=None):
        self.nf = nf
        self.prior = prior
        self.phi = np.zeros(0) if phi is None else np.asarray(phi, dtype=float)

    def log_weights(self, model, x, theta, n, rng):
        noise = rng.standard_normal((n, self.prior.noise_dim))
        return planar_nf_elbo(model, x, theta, self.nf, self.prior, self.phi, noise).value


def importance_sampled_nll(model, x, theta, proposal, n: int = 1000, rng=None) -> float:
    """``-log((1/n) sum_i w_i)`` with weights drawn from ``proposal``."""
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    rng = np.random.default_rng() if rng is None else rng
    return float(-log_mean_exp(proposal.log_weights(model, x, theta, n, rng)))


def write_replicates(path, values: dict) -> None:
    """Write ``replicate, estimator, value`` rows for each estimator's draws."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "estimator", "value"])
        for name, vals in values.items():
            for i, v in enumerate(np.ravel(vals)):
                w.writerow([i, name, repr(float(v))])

"""Annealed importance sampling along the geometric path from the variational prior to the posterior.

Only used to cross-check the differentiable estimators: the Metropolis
accept/reject step makes the log-weight a discontinuous function of the
noise, so it cannot be differentiated by reparameterisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MCMCConfig:
    kernel: str = "hmc"
    step_size: float = 0.1
    n_leapfrog: int = 5

    def __post_init__(self):
        if self.kernel not in ("hmc", "rwm"):
            raise ValueError(f"unknown kernel {self.kernel!r}")


def _log_bridge(model, x, theta, prior, phi, z, beta):
    return (1.0 - beta) * prior.log_density(phi, x, z) + beta * model.log_joint(theta, x, z)


def _grad_bridge(model, x, theta, prior, phi, z, beta):
    return (1.0 - beta) * prior.grad_log_density_z(phi, x, z) + beta * model.grad_z(theta, x, z)


def _hmc_move(model, x, theta, prior, phi, z, beta, cfg: MCMCConfig, rng):
    eps = np.asarray(cfg.step_size, dtype=float)
    rho = rng.standard_normal(z.shape)
    h0 = -_log_bridge(model, x, theta, prior, phi, z, beta) + 0.5 * np.sum(rho**2, axis=-1)
    zp, rp = z, rho
    g = _grad_bridge(model, x, theta, prior, phi, zp, beta)
    for _ in range(cfg.n_leapfrog):
        rp = rp + 0.5 * eps * g
        zp = zp + eps * rp
        g = _grad_bridge(model, x, theta, prior, phi, zp, beta)
        rp = rp + 0.5 * eps * g
    h1 = -_log_bridge(model, x, theta, prior, phi, zp, beta) + 0.5 * np.sum(rp**2, axis=-1)
    with np.errstate(invalid="ignore", over="ignore"):
        accept = np.log(rng.uniform(size=h0.shape)) < (h0 - h1)
    accept &= np.isfinite(h1)
    return np.where(accept[..., None], zp, z)


def _rwm_move(model, x, theta, prior, phi, z, beta, cfg: MCMCConfig, rng):
    zp = z + cfg.step_size * rng.standard_normal(z.shape)
    lp0 = _log_bridge(model, x, theta, prior, phi, z, beta)
    lp1 = _log_bridge(model, x, theta, prior, phi, zp, beta)
    accept = np.log(rng.uniform(size=lp0.shape)) < (lp1 - lp0)
    return np.where(accept[..., None], zp, z)


def ais_log_likelihood(model, x, theta, prior, phi=None, steps: int = 50,
                       mcmc: MCMCConfig = MCMCConfig(), rng=None, size=()):
    """Log importance weights of AIS chains; ``exp`` of them is unbiased for ``p(x)``.

    ``steps`` counts the intermediate bridge densities, each followed by one
    Metropolis-corrected move. With ``steps=0`` the weight is the plain
    importance weight of a draw from the prior.
    """
    rng = np.random.default_rng() if rng is None else rng
    phi = np.zeros(0) if phi is None else np.asarray(phi, dtype=float)
    size = (size,) if np.isscalar(size) else tuple(size)
    move = _hmc_move if mcmc.kernel == "hmc" else _rwm_move
    z = prior.sample(phi, x, rng.standard_normal(size + (prior.noise_dim,)))
    betas = np.linspace(0.0, 1.0, steps + 2)
    log_w = np.zeros(size)
    for t in range(1, steps + 2):
        log_w = log_w + (betas[t] - betas[t - 1]) * (
            model.log_joint(theta, x, z) - prior.log_density(phi, x, z))
        if t < steps + 1:
            z = move(model, x, theta, prior, phi, z, betas[t], mcmc, rng)
    return float(log_w) if log_w.ndim == 0 else log_w

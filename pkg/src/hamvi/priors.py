"""Variational priors: reparameterisable initial distributions for the flow.

A prior maps parameters ``phi``, an observation ``x`` and base noise to a
latent draw ``z0``. ``backward`` returns the parameter sensitivity of
``a . z0(phi) - log q(z0(phi); phi)`` for a fixed adjoint ``a``, which is
everything the adjoint sweep needs at the start of the trajectory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ConfigurationError, DomainError
from .models import LOG_2PI, std_normal_logpdf


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class MeanFieldParams:
    """Diagonal Gaussian ``N(mu, diag(var))``."""

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if mu.shape != var.shape:
            raise ConfigurationError("mu and var must have the same shape")
        if not np.all(var > 0):
            raise DomainError("variances must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)


class StandardNormalPrior:
    """``N(0, I)`` with no learnable parameters."""

    def __init__(self, latent_dim: int):
        self.latent_dim = latent_dim
        self.noise_dim = latent_dim
        self.n_params = 0

    def sample(self, phi, x, noise):
        return np.asarray(noise, dtype=float)

    def log_density(self, phi, x, z):
        return std_normal_logpdf(z)

    def grad_log_density_z(self, phi, x, z):
        return -np.asarray(z, dtype=float)

    def backward(self, phi, x, noise, a_z):
        return np.zeros(np.shape(a_z)[:-1] + (0,))


class _DiagonalGaussian:
    """Shared algebra for priors of the form ``z0 = mu + s * noise``."""

    def _moments(self, phi, x):
        raise NotImplementedError

    def _pullback(self, phi, x, d_mu, d_s):
        raise NotImplementedError

    def sample(self, phi, x, noise):
        mu, s = self._moments(phi, x)
        return mu + s * np.asarray(noise, dtype=float)

    def log_density(self, phi, x, z):
        mu, s = self._moments(phi, x)
        u = (np.asarray(z, dtype=float) - mu) / s
        return np.sum(-0.5 * u * u - np.log(s) - 0.5 * LOG_2PI, axis=-1)

    def grad_log_density_z(self, phi, x, z):
        mu, s = self._moments(phi, x)
        return -(np.asarray(z, dtype=float) - mu) / s**2

    def backward(self, phi, x, noise, a_z):
        # -log q(z0(phi); phi) = sum log s + |noise|^2 / 2 + const
        mu, s = self._moments(phi, x)
        a_z = np.asarray(a_z, dtype=float)
        d_mu = np.broadcast_to(a_z, np.broadcast_shapes(a_z.shape, np.shape(mu)))
        d_s = a_z * np.asarray(noise, dtype=float) + 1.0 / s
        return self._pullback(phi, x, d_mu, d_s)


class MeanFieldPrior(_DiagonalGaussian):
    """Free diagonal Gaussian, ``phi = (mu, log var)``."""

    def __init__(self, latent_dim: int):
        self.latent_dim = latent_dim
        self.noise_dim = latent_dim
        self.n_params = 2 * latent_dim

    @staticmethod
    def phi_from(params: MeanFieldParams) -> np.ndarray:
        return np.concatenate([params.mu, np.log(params.var)])

    def params(self, phi) -> MeanFieldParams:
        phi = np.asarray(phi, dtype=float)
        ell = self.latent_dim
        return MeanFieldParams(phi[:ell], np.exp(phi[ell:]))

    def _moments(self, phi, x):
        phi = np.asarray(phi, dtype=float)
        ell = self.latent_dim
        return phi[:ell], np.exp(0.5 * phi[ell:])

    def _pullback(self, phi, x, d_mu, d_s):
        _, s = self._moments(phi, x)
        return np.concatenate([d_mu, 0.5 * s * d_s], axis=-1)


class AmortizedGaussianPrior(_DiagonalGaussian):
    """Single affine encoder ``x -> (mu(x), var(x))``.

    ``phi`` packs the ``(2 * latent_dim) x data_dim`` weight matrix row-major,
    then the ``2 * latent_dim`` bias. The first half of the outputs is the
    mean, the second half passes through softplus to give the variances.
    """

    VAR_FLOOR = 1e-10

    def __init__(self, latent_dim: int, data_dim: int):
        self.latent_dim = latent_dim
        self.data_dim = data_dim
        self.noise_dim = latent_dim
        self.n_params = 2 * latent_dim * data_dim + 2 * latent_dim

    def unpack(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n_params,):
            raise ConfigurationError(f"phi must have shape ({self.n_params},)")
        k = 2 * self.latent_dim * self.data_dim
        return phi[:k].reshape(2 * self.latent_dim, self.data_dim), phi[k:]

    def _outputs(self, phi, x):
        A, c = self.unpack(phi)
        return np.asarray(x, dtype=float) @ A.T + c

    def _moments(self, phi, x):
        h = self._outputs(phi, x)
        ell = self.latent_dim
        var = _softplus(h[..., ell:]) + self.VAR_FLOOR
        return h[..., :ell], np.sqrt(var)

    def _pullback(self, phi, x, d_mu, d_s):
        h = self._outputs(phi, x)
        ell = self.latent_dim
        _, s = self._moments(phi, x)
        d_h = np.concatenate([d_mu, d_s * 0.5 / s * expit(h[..., ell:])], axis=-1)
        x = np.asarray(x, dtype=float)
        d_h, xb = np.broadcast_arrays(d_h[..., :, None], x[..., None, :])
        d_A = d_h * xb
        lead = d_A.shape[:-2]
        return np.concatenate([d_A.reshape(lead + (-1,)), d_h[..., 0]], axis=-1)

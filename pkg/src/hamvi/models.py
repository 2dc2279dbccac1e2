"""Generative models with a standard-normal latent prior.

Every model works with a flat parameter vector ``theta`` and exposes the
derivatives the flow and its adjoint need:

    log_joint(theta, x, z)        log p_theta(x, z)
    grad_z(theta, x, z)           d/dz log p
    grad_theta(theta, x, z)       d/dtheta log p
    hvp_z(theta, x, z, v)         (d^2/dz^2 log p) v
    mixed_vjp(theta, x, z, v)     d/dtheta [grad_z(theta, x, z) . v]

``z`` may carry leading batch dimensions; results keep them.
The potential energy used by the flow is ``U = -log p``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import expit, log_expit

from .data import ConfigurationError, Dataset, DomainError

LOG_2PI = np.log(2.0 * np.pi)


def std_normal_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


@dataclass(frozen=True)
class GaussianModelParams:
    """Offset ``delta`` and diagonal variances ``sigma_sq`` of the Gaussian model."""

    delta: np.ndarray
    sigma_sq: np.ndarray

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float))
        sigma_sq = np.atleast_1d(np.asarray(self.sigma_sq, dtype=float))
        if delta.shape != sigma_sq.shape or delta.ndim != 1:
            raise ConfigurationError("delta and sigma_sq must be vectors of equal length")
        if not np.all(sigma_sq > 0):
            raise DomainError("variances must be strictly positive")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "sigma_sq", sigma_sq)

    @property
    def dim(self) -> int:
        return self.delta.shape[0]

    def to_theta(self) -> np.ndarray:
        return np.concatenate([self.delta, np.log(self.sigma_sq)])

    @classmethod
    def from_theta(cls, theta) -> "GaussianModelParams":
        theta = np.asarray(theta, dtype=float)
        d = theta.shape[0] // 2
        return cls(theta[:d], np.exp(theta[d:]))


def _check(params: GaussianModelParams, data: Dataset, z=None):
    if data.dim != params.dim:
        raise ConfigurationError(f"data has dimension {data.dim}, parameters {params.dim}")
    if z is not None and np.shape(z)[-1] != params.dim:
        raise ConfigurationError(f"latent has dimension {np.shape(z)[-1]}, expected {params.dim}")


def gaussian_log_joint(params: GaussianModelParams, data: Dataset, z):
    """``sum_i log N(x_i; z + delta, Sigma) + log N(z; 0, I)``."""
    _check(params, data, z)
    z = np.asarray(z, dtype=float)
    s2 = params.sigma_sq
    resid = z + params.delta - data.mean
    quad = data.scatter + data.n * resid**2
    loglik = -0.5 * np.sum(data.n * (LOG_2PI + np.log(s2)) + quad / s2, axis=-1)
    return loglik + std_normal_logpdf(z)


def gaussian_grad_U(params: GaussianModelParams, data: Dataset, z):
    """Gradient of the potential, ``z + N Sigma^-1 (z + delta - xbar)``."""
    _check(params, data, z)
    z = np.asarray(z, dtype=float)
    return z + data.n * (z + params.delta - data.mean) / params.sigma_sq


def gaussian_exact_log_marginal(params: GaussianModelParams, data: Dataset) -> float:
    """Closed-form ``log p(D)``.

    Per coordinate the observations are jointly normal with mean ``delta``
    and covariance ``s I + 1 1^T``; Sherman-Morrison gives the inverse and the
    matrix determinant lemma the log-determinant.
    """
    _check(params, data)
    n = data.n
    s = params.sigma_sq
    m = data.mean - params.delta
    sum_sq = data.scatter + n * m**2
    quad = (sum_sq - n**2 * m**2 / (s + n)) / s
    logdet = n * np.log(s) + np.log1p(n / s)
    return float(-0.5 * np.sum(n * LOG_2PI + logdet + quad))


def gaussian_exact_posterior(params: GaussianModelParams, data: Dataset):
    """Mean and diagonal covariance of ``z | D``."""
    _check(params, data)
    prec = 1.0 + data.n / params.sigma_sq
    cov = 1.0 / prec
    mean = cov * data.n * (data.mean - params.delta) / params.sigma_sq
    return mean, cov


def gaussian_mle(data: Dataset) -> GaussianModelParams:
    """Maximiser of the exact marginal likelihood over ``(delta, sigma_sq)``.

    ``delta`` is the sample mean; each variance is the positive root of
    ``N s^2 + (N(N-1) - S) s - N S = 0`` with ``S`` the centred sum of squares.
    """
    n = data.n
    if n < 2:
        raise DomainError("need at least two observations")
    S = data.scatter
    b = n * (n - 1) - S
    s = (-b + np.sqrt(b * b + 4.0 * n * n * S)) / (2.0 * n)
    return GaussianModelParams(data.mean.copy(), s)


def make_true_params(d: int) -> GaussianModelParams:
    """Ground-truth parameters of the synthetic Gaussian benchmark.

    Offsets are evenly spaced, ``(j - 1 - (d-1)/2) / 5``. Standard deviations
    follow the parabola with vertex 0.1 at position ``(d+1)/2`` that equals 1
    at both ends; for ``d == 1`` the single deviation is 1.
    """
    if d < 1:
        raise DomainError("dimension must be positive")
    delta = np.array([float(Fraction(2 * j - (d - 1), 10)) for j in range(d)])
    if d == 1:
        sigma = np.ones(1)
    else:
        pos = np.arange(1, d + 1, dtype=float)
        centre = (d + 1) / 2.0
        sigma = 0.1 + 0.9 * ((pos - centre) / (1.0 - centre)) ** 2
    return GaussianModelParams(delta, sigma**2)


class GaussianModel:
    """Conjugate Gaussian model with one global latent and ``theta = (delta, log sigma_sq)``.

    ``x`` is always a :class:`Dataset`; the likelihood is summed over rows.
    """

    def __init__(self, d: int):
        self.latent_dim = d
        self.n_params = 2 * d

    def params(self, theta) -> GaussianModelParams:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(f"theta must have shape ({self.n_params},)")
        return GaussianModelParams.from_theta(theta)

    def theta_from(self, params: GaussianModelParams) -> np.ndarray:
        return params.to_theta()

    def log_joint(self, theta, x: Dataset, z):
        return gaussian_log_joint(self.params(theta), x, z)

    def grad_z(self, theta, x: Dataset, z):
        return -gaussian_grad_U(self.params(theta), x, z)

    def hvp_z(self, theta, x: Dataset, z, v):
        p = self.params(theta)
        return -(1.0 + x.n / p.sigma_sq) * np.asarray(v, dtype=float)

    def grad_theta(self, theta, x: Dataset, z):
        p = self.params(theta)
        _check(p, x, z)
        resid = np.asarray(z, dtype=float) + p.delta - x.mean
        d_delta = -x.n * resid / p.sigma_sq
        d_logvar = -0.5 * x.n + 0.5 * (x.scatter + x.n * resid**2) / p.sigma_sq
        return np.concatenate([d_delta, d_logvar], axis=-1)

    def mixed_vjp(self, theta, x: Dataset, z, v):
        p = self.params(theta)
        resid = np.asarray(z, dtype=float) + p.delta - x.mean
        v = np.asarray(v, dtype=float)
        d_delta = -x.n * v / p.sigma_sq
        d_logvar = x.n * resid * v / p.sigma_sq
        return np.concatenate([d_delta, d_logvar], axis=-1)

    def exact_log_marginal(self, theta, x: Dataset) -> float:
        return gaussian_exact_log_marginal(self.params(theta), x)


def bernoulli_decoder_log_joint(W, b, x, z):
    """``sum_j x_j log pi_j + (1-x_j) log(1-pi_j) + log N(z; 0, I)``, ``pi = sigmoid(W z + b)``.

    Uses ``log sigmoid`` directly, so the result stays finite for any logit.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x != 0.0) & (x != 1.0)):
        raise DomainError("observations must be binary")
    z = np.asarray(z, dtype=float)
    logits = z @ np.asarray(W, dtype=float).T + b
    ll = np.sum(x * log_expit(logits) + (1.0 - x) * log_expit(-logits), axis=-1)
    return ll + std_normal_logpdf(z)


class BernoulliDecoderModel:
    """Per-datapoint latent with an affine-sigmoid Bernoulli decoder.

    ``theta`` packs ``W`` (``data_dim x latent_dim``, row-major) then ``b``.
    ``x`` is one binary vector or a batch aligned with the leading axes of ``z``.
    """

    def __init__(self, latent_dim: int, data_dim: int):
        self.latent_dim = latent_dim
        self.data_dim = data_dim
        self.n_params = data_dim * latent_dim + data_dim

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(f"theta must have shape ({self.n_params},)")
        k = self.data_dim * self.latent_dim
        return theta[:k].reshape(self.data_dim, self.latent_dim), theta[k:]

    def pack(self, W, b):
        return np.concatenate([np.ravel(W), np.ravel(b)])

    def _forward(self, theta, x, z):
        W, b = self.unpack(theta)
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        pi = expit(z @ W.T + b)
        return W, x, z, pi

    def log_joint(self, theta, x, z):
        W, b = self.unpack(theta)
        return bernoulli_decoder_log_joint(W, b, x, z)

    def grad_z(self, theta, x, z):
        W, x, z, pi = self._forward(theta, x, z)
        return (x - pi) @ W - z

    def hvp_z(self, theta, x, z, v):
        W, x, z, pi = self._forward(theta, x, z)
        v = np.asarray(v, dtype=float)
        Wv = v @ W.T
        return -((pi * (1.0 - pi) * Wv) @ W) - v

    def grad_theta(self, theta, x, z):
        W, x, z, pi = self._forward(theta, x, z)
        r = x - pi
        r, z = np.broadcast_arrays(r[..., :, None], z[..., None, :])
        dW = r * z
        db = r[..., 0]
        lead = dW.shape[:-2]
        return np.concatenate([dW.reshape(lead + (-1,)), db], axis=-1)

    def mixed_vjp(self, theta, x, z, v):
        W, x, z, pi = self._forward(theta, x, z)
        v = np.asarray(v, dtype=float)
        r = x - pi
        Wv = v @ W.T
        c = -pi * (1.0 - pi) * Wv
        r, c = np.broadcast_arrays(r, c)
        dW = r[..., :, None] * v[..., None, :] + c[..., :, None] * z[..., None, :]
        lead = dW.shape[:-2]
        return np.concatenate([dW.reshape(lead + (-1,)), c], axis=-1)

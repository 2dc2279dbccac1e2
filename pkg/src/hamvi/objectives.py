"""Training objectives: a bound estimator paired with its gradient.

Each objective owns the layout of its variational parameters ``phi`` and
offers ``step_grad`` (one stochastic gradient of the batch-averaged bound)
and ``evaluate`` (per-observation bound values for monitoring).

For a global-latent model ``x`` is the whole :class:`~hamvi.data.Dataset`;
otherwise ``x`` is an ``(n, d)`` block of observations and noise gets the
shape ``(samples, n, ell)``.
"""
from __future__ import annotations

import numpy as np

from .adjoint import FlowParameterization, PlanarParameterization, backprop_his, backprop_planar, backprop_vanilla
from .data import Dataset
from .estimators import HISNoise, his_elbo, planar_nf_elbo


def _batch_shape(x, samples):
    if isinstance(x, Dataset):
        return (samples,)
    return (samples, np.shape(x)[0])


def _per_obs(values):
    # average over the sample axis, keep one value per observation
    return np.mean(values, axis=0)


class HVAEObjective:
    """Hamiltonian flow bound with ``phi = (flow raw params, prior params)``."""

    name = "hvae"

    def __init__(self, model, prior, flow: FlowParameterization, samples: int = 1):
        self.model = model
        self.prior = prior
        self.flow = flow
        self.samples = samples
        self.n_phi = flow.n_params + prior.n_params

    def split(self, phi):
        return phi[: self.flow.n_params], phi[self.flow.n_params:]

    def config(self, phi):
        return self.flow.config(self.split(phi)[0])

    def _noise(self, x, rng):
        shape = _batch_shape(x, self.samples)
        return HISNoise(rng.standard_normal(shape + (self.prior.noise_dim,)),
                        rng.standard_normal(shape + (self.prior.latent_dim,)))

    def step_grad(self, theta, phi, x, rng):
        raw, pphi = self.split(phi)
        est, g = backprop_his(self.model, x, theta, self.flow.config(raw), self.prior, pphi, self._noise(x, rng))
        return float(np.mean(est.value)), g.d_theta, g.d_phi

    def evaluate(self, theta, phi, x, rng, samples=None):
        raw, pphi = self.split(phi)
        noise = self._noise(x, rng) if samples is None else HISNoise(
            *(rng.standard_normal(_batch_shape(x, samples) + (k,))
              for k in (self.prior.noise_dim, self.prior.latent_dim)))
        est = his_elbo(self.model, x, theta, self.flow.config(raw), self.prior, pphi, noise)
        return _per_obs(est.value)


class VBObjective:
    """Reparameterised bound of a Gaussian variational posterior (mean-field or amortised)."""

    name = "vb"

    def __init__(self, model, prior, samples: int = 1):
        self.model = model
        self.prior = prior
        self.samples = samples
        self.n_phi = prior.n_params

    def _noise(self, x, rng, samples=None):
        return rng.standard_normal(_batch_shape(x, samples or self.samples) + (self.prior.noise_dim,))

    def step_grad(self, theta, phi, x, rng):
        values, d_theta, d_phi = backprop_vanilla(self.model, x, theta, self.prior, phi, self._noise(x, rng))
        return float(np.mean(values)), d_theta, d_phi

    def evaluate(self, theta, phi, x, rng, samples=None):
        z_noise = self._noise(x, rng, samples)
        z = self.prior.sample(phi, x, z_noise)
        values = self.model.log_joint(theta, x, z) - self.prior.log_density(phi, x, z)
        return _per_obs(values)


class PlanarObjective:
    """Tied planar flow from a variational prior; ``phi = (u, w, b, prior params)``."""

    name = "nf"

    def __init__(self, model, prior, planar: PlanarParameterization, samples: int = 1):
        self.model = model
        self.prior = prior
        self.planar = planar
        self.samples = samples
        self.n_phi = planar.n_params + prior.n_params

    def split(self, phi):
        return phi[: self.planar.n_params], phi[self.planar.n_params:]

    def _noise(self, x, rng, samples=None):
        return rng.standard_normal(_batch_shape(x, samples or self.samples) + (self.prior.noise_dim,))

    def step_grad(self, theta, phi, x, rng):
        raw, pphi = self.split(phi)
        values, d_theta, d_raw, d_prior = backprop_planar(
            self.model, x, theta, self.planar, raw, self.prior, pphi, self._noise(x, rng))
        return float(np.mean(values)), d_theta, np.concatenate([d_raw, d_prior])

    def evaluate(self, theta, phi, x, rng, samples=None):
        raw, pphi = self.split(phi)
        est = planar_nf_elbo(self.model, x, theta, self.planar.params(raw), self.prior, pphi,
                             self._noise(x, rng, samples))
        return _per_obs(est.value)

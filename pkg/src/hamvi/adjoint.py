"""Reverse-mode sensitivities of the flow-based bounds, derived by hand.

The Hamiltonian flow is a fixed composition of shears and scalings, so the
backward sweep below walks the stored trajectory once, undoing each stage's
chain rule: the tempering scale, the second half kick, the drift and the
first half kick. Kicks need the Hessian-vector product of ``log p`` in ``z``
and the mixed ``theta``/``z`` product, both supplied by the model.

Constrained flow parameters are optimised through smooth bijections:

    eps   = xi * sigmoid(raw)       each step size in (0, xi)
    beta0 = sigmoid(raw)            fixed tempering
    alpha = sigmoid(raw_k)          free tempering, one per step

Gradients are reported with respect to those raw coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import ConfigurationError
from .estimators import ElboEstimate, PlanarFlowParams, _his_forward, planar_reproject
from .flow import FixedTempering, FlowConfig, FreeTempering, IntegrationError, NoTempering, hamiltonian


def constrain_eps(raw, xi):
    return xi * expit(raw)


def unconstrain_eps(eps, xi):
    return logit(np.asarray(eps, dtype=float) / xi)


def constrain_unit(raw):
    return expit(raw)


def unconstrain_unit(v):
    return logit(v)


def eps_derivative(eps, xi):
    """``d eps / d raw`` expressed through ``eps`` itself."""
    eps = np.asarray(eps, dtype=float)
    return eps * (1.0 - eps / xi)


def unit_derivative(v):
    v = np.asarray(v, dtype=float)
    return v * (1.0 - v)


def _scheme_name(tempering) -> str:
    if isinstance(tempering, NoTempering):
        return "none"
    if isinstance(tempering, FixedTempering):
        return "fixed"
    if isinstance(tempering, FreeTempering):
        return "free"
    raise ConfigurationError(f"unknown tempering scheme {tempering!r}")


@dataclass(frozen=True)
class FlowParameterization:
    """Layout of the unconstrained flow parameters: step sizes, then tempering."""

    latent_dim: int
    K: int
    tempering: str = "fixed"
    xi: float = 0.5

    def __post_init__(self):
        if self.tempering not in ("none", "fixed", "free"):
            raise ConfigurationError(f"unknown tempering {self.tempering!r}")

    @property
    def n_tempering(self) -> int:
        return {"none": 0, "fixed": 1, "free": self.K}[self.tempering]

    @property
    def n_params(self) -> int:
        return self.latent_dim + self.n_tempering

    def config(self, raw) -> FlowConfig:
        raw = np.asarray(raw, dtype=float)
        if raw.shape != (self.n_params,):
            raise ConfigurationError(f"raw flow parameters must have shape ({self.n_params},)")
        eps = constrain_eps(raw[: self.latent_dim], self.xi)
        t = raw[self.latent_dim:]
        if self.tempering == "none":
            scheme = NoTempering()
        elif self.tempering == "fixed":
            scheme = FixedTempering(float(constrain_unit(t[0])))
        else:
            scheme = FreeTempering(tuple(constrain_unit(t)))
        return FlowConfig(self.K, eps, scheme, self.xi)

    def raw(self, config: FlowConfig) -> np.ndarray:
        eps_raw = unconstrain_eps(config.eps, config.xi)
        name = _scheme_name(config.tempering)
        if name == "none":
            t = np.zeros(0)
        elif name == "fixed":
            t = np.array([unconstrain_unit(config.tempering.beta0_value)])
        else:
            t = unconstrain_unit(np.asarray(config.tempering.alpha_values))
        return np.concatenate([eps_raw, t])

    def initial(self, eps, beta0=0.5) -> np.ndarray:
        """Raw vector for step sizes ``eps`` and initial inverse temperature ``beta0``.

        Free tempering spreads ``beta0`` evenly, ``alpha_k = beta0 ** (1 / 2K)``.
        """
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (self.latent_dim,))
        if self.tempering == "none":
            scheme = NoTempering()
        elif self.tempering == "fixed":
            scheme = FixedTempering(beta0)
        else:
            scheme = FreeTempering(tuple(np.full(self.K, beta0 ** (0.5 / max(self.K, 1)))))
        return self.raw(FlowConfig(self.K, eps, scheme, self.xi))


@dataclass(frozen=True)
class GradientBundle:
    """Sensitivities of a batch-averaged bound.

    ``d_eps`` and ``d_tempering`` are with respect to the raw coordinates of
    :class:`FlowParameterization`; ``d_prior`` with respect to the prior's
    own parameter vector (empty for a fixed prior).
    """

    d_theta: np.ndarray
    d_eps: np.ndarray
    d_tempering: np.ndarray
    d_prior: np.ndarray

    @property
    def d_flow(self) -> np.ndarray:
        return np.concatenate([self.d_eps, self.d_tempering])

    @property
    def d_phi(self) -> np.ndarray:
        return np.concatenate([self.d_eps, self.d_tempering, self.d_prior])

    def scaled(self, a: float) -> "GradientBundle":
        return GradientBundle(a * self.d_theta, a * self.d_eps, a * self.d_tempering, a * self.d_prior)


def _batch_sum(a, ndim_event=1):
    a = np.asarray(a, dtype=float)
    event = a.shape[a.ndim - ndim_event:]
    return a.reshape((-1,) + event).sum(axis=0) if a.size else np.zeros(event)


def _check_finite(step, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise IntegrationError("non-finite adjoint", step)


def backprop_his(model, x, theta, config: FlowConfig, prior, phi, noise):
    """Rao-Blackwellised HIS bound and its exact gradient for fixed noise.

    Returns the per-draw :class:`ElboEstimate` and a :class:`GradientBundle`
    for the mean over all draws in ``noise``. The plain HIS bound differs
    from the Rao-Blackwellised one by a noise-only term, so the gradient is
    shared by both.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.zeros(0) if phi is None else np.asarray(phi, dtype=float)
    z0, traj = _his_forward(model, x, theta, config, prior, phi, noise)
    K = config.K
    ell = z0.shape[-1]
    batch = z0.shape[:-1]
    w = 1.0 / max(int(np.prod(batch)), 1)
    eps = config.eps
    alphas = config.alphas

    zK, rhoK = traj.z[-1], traj.rho[-1]
    value = (model.log_joint(theta, x, zK) - 0.5 * np.sum(rhoK**2, axis=-1)
             - prior.log_density(phi, x, z0) + 0.5 * ell)
    estimate = ElboEstimate(value, hamiltonian(model, theta, x, traj.final), traj.log_jacobian, zK)

    a_z = w * -traj.grad_U[K]
    a_rho = -w * rhoK
    d_theta = w * _batch_sum(model.grad_theta(theta, x, zK))
    d_eps = np.zeros(ell)
    d_log_alpha = np.zeros(K)
    for k in range(K, 0, -1):
        # rho_k = alpha_k * rho'
        d_log_alpha[k - 1] = np.sum(a_rho * traj.rho[k])
        a_pre = alphas[k - 1] * a_rho
        # rho' = rho_half - eps/2 * gradU(z_k)
        v = 0.5 * eps * a_pre
        a_z = a_z + model.hvp_z(theta, x, traj.z[k], v)
        d_theta = d_theta + _batch_sum(model.mixed_vjp(theta, x, traj.z[k], v))
        d_eps = d_eps - 0.5 * _batch_sum(traj.grad_U[k] * a_pre)
        # z_k = z_{k-1} + eps * rho_half
        a_half = a_pre + eps * a_z
        d_eps = d_eps + _batch_sum(traj.rho_half[k - 1] * a_z)
        # rho_half = rho_{k-1} - eps/2 * gradU(z_{k-1})
        v = 0.5 * eps * a_half
        a_z = a_z + model.hvp_z(theta, x, traj.z[k - 1], v)
        d_theta = d_theta + _batch_sum(model.mixed_vjp(theta, x, traj.z[k - 1], v))
        d_eps = d_eps - 0.5 * _batch_sum(traj.grad_U[k - 1] * a_half)
        a_rho = a_half
        _check_finite(k, a_z, a_rho, d_theta)

    # rho_0 = gamma / sqrt(beta0)
    d_log_beta0 = -0.5 * np.sum(a_rho * traj.rho[0])
    d_prior = w * _batch_sum(prior.backward(phi, x, noise.z, a_z / w))

    name = _scheme_name(config.tempering)
    if name == "none":
        d_temp = np.zeros(0)
    elif name == "fixed":
        b0 = config.tempering.beta0_value
        d_beta0 = (d_log_beta0 / b0 if K > 0 else 0.0) + np.sum(
            d_log_alpha * config.tempering.dlog_alpha_dbeta0(K))
        d_temp = np.array([d_beta0 * unit_derivative(b0)])
    else:
        # log beta0 = 2 sum_k log alpha_k
        d_temp = (d_log_alpha + 2.0 * d_log_beta0) * (1.0 - alphas)
    bundle = GradientBundle(d_theta, d_eps * eps_derivative(eps, config.xi), d_temp, d_prior)
    _check_finite(0, bundle.d_theta, bundle.d_phi)
    return estimate, bundle


def backprop_vanilla(model, x, theta, prior, phi, noise):
    """Single-sample reparameterised bound ``log p(x, z) - log q(z)`` and its gradient.

    Returns the per-draw values and ``(d_theta, d_phi)`` of their mean.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    z = prior.sample(phi, x, noise)
    w = 1.0 / max(int(np.prod(z.shape[:-1])), 1)
    value = model.log_joint(theta, x, z) - prior.log_density(phi, x, z)
    a_z = model.grad_z(theta, x, z)
    d_theta = w * _batch_sum(model.grad_theta(theta, x, z))
    d_phi = w * _batch_sum(prior.backward(phi, x, noise, a_z))
    return value, d_theta, d_phi


@dataclass(frozen=True)
class PlanarParameterization:
    """Raw planar parameters ``(u, w, b)``; ``u`` is reprojected before use."""

    latent_dim: int
    T: int

    @property
    def n_params(self) -> int:
        return 2 * self.latent_dim + 1

    def split(self, raw):
        raw = np.asarray(raw, dtype=float)
        d = self.latent_dim
        return raw[:d], raw[d:2 * d], float(raw[2 * d])

    def params(self, raw) -> PlanarFlowParams:
        u, w, b = self.split(raw)
        return PlanarFlowParams(planar_reproject(u, w), w, b, self.T)


def _reproject_pullback(u, w, g_uhat):
    """Chain rule through :func:`planar_reproject`; returns ``(dJ/du, dJ/dw)``."""
    wu = float(w @ u)
    ww = float(w @ w)
    if ww == 0.0:
        return g_uhat.copy(), np.zeros_like(w)
    c = np.logaddexp(0.0, wu) - 1.0 - wu
    dc = expit(wu) - 1.0
    gw = float(g_uhat @ w)
    d_u = g_uhat + (gw / ww) * dc * w
    d_w = c * (g_uhat / ww - 2.0 * w * gw / ww**2) + (gw / ww) * dc * u
    return d_u, d_w


def backprop_planar(model, x, theta, param: PlanarParameterization, raw, prior, phi, noise):
    """Planar-flow bound and gradients ``(values, d_theta, d_raw, d_phi)`` of the batch mean."""
    theta = np.asarray(theta, dtype=float)
    phi = np.zeros(0) if phi is None else np.asarray(phi, dtype=float)
    u_raw, wv, b = param.split(raw)
    u = planar_reproject(u_raw, wv)
    z0 = prior.sample(phi, x, noise)
    batch = z0.shape[:-1]
    n_w = 1.0 / max(int(np.prod(batch)), 1)
    uw = float(u @ wv)

    zs = [z0]
    hs, ss = [], []
    z = z0
    logdet = np.zeros(batch)
    for t in range(param.T):
        h = np.tanh(z @ wv + b)
        s = 1.0 + (1.0 - h * h) * uw
        if np.any(np.abs(s) < 1e-12):
            raise FloatingPointError(f"planar map singular at iteration {t + 1}")
        logdet = logdet + np.log(np.abs(s))
        z = z + h[..., None] * u
        zs.append(z)
        hs.append(h)
        ss.append(s)
    value = model.log_joint(theta, x, z) - prior.log_density(phi, x, z0) + logdet

    a_z = n_w * model.grad_z(theta, x, z)
    d_theta = n_w * _batch_sum(model.grad_theta(theta, x, z))
    d_u = np.zeros_like(u)
    d_w = np.zeros_like(wv)
    d_b = 0.0
    for t in range(param.T - 1, -1, -1):
        h, s = hs[t], ss[t]
        sech2 = 1.0 - h * h
        # d logdet / d pre-activation, plus the path through z_{t+1} = z_t + u h
        g_a = (a_z @ u) * sech2 + n_w * (-2.0 * h * sech2 * uw / s)
        coef = n_w * sech2 / s
        d_u = d_u + _batch_sum(h[..., None] * a_z) + np.sum(coef) * wv
        d_w = d_w + _batch_sum(g_a[..., None] * zs[t]) + np.sum(coef) * u
        d_b += float(np.sum(g_a))
        a_z = a_z + g_a[..., None] * wv
    d_phi = n_w * _batch_sum(prior.backward(phi, x, noise, a_z / n_w))
    du_raw, dw_extra = _reproject_pullback(u_raw, wv, d_u)
    d_raw = np.concatenate([du_raw, d_w + dw_extra, [d_b]])
    return value, d_theta, d_raw, d_phi


def finite_diff_gradient(f, params, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``params``."""
    params = np.array(params, dtype=float)
    grad = np.empty_like(params)
    for i in range(params.size):
        hi = params.copy()
        lo = params.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        grad.flat[i] = (f(hi) - f(lo)) / (2.0 * step)
    return grad

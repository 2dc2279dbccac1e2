"""Time-inhomogeneous Hamiltonian flow: leapfrog shears followed by momentum tempering.

One flow step ``k`` maps ``(z, rho)`` to ``(z', alpha_k * rho')`` where
``(z', rho')`` is a leapfrog step of the potential ``U = -log p(x, z)``.
Leapfrog is volume preserving, so the only Jacobian comes from tempering:
``ell * log(alpha_k)`` per step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import ConfigurationError, DomainError


class IntegrationError(FloatingPointError):
    """A non-finite value appeared while integrating; ``step`` is the 1-based flow step."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class PhasePoint:
    z: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if z.shape != rho.shape:
            raise ConfigurationError(f"position {z.shape} and momentum {rho.shape} differ")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "rho", rho)

    @property
    def dim(self) -> int:
        return self.z.shape[-1]


def leapfrog_step(p: PhasePoint, eps, grad_U, step=None) -> PhasePoint:
    """Half kick, drift, half kick with per-dimension step sizes ``eps``."""
    eps = np.asarray(eps, dtype=float)
    g = grad_U(p.z)
    if not np.all(np.isfinite(g)):
        raise IntegrationError("non-finite potential gradient", step)
    rho_half = p.rho - 0.5 * eps * g
    z_new = p.z + eps * rho_half
    g = grad_U(z_new)
    if not np.all(np.isfinite(g)):
        raise IntegrationError("non-finite potential gradient", step)
    return PhasePoint(z_new, rho_half - 0.5 * eps * g)


def quadratic_beta(beta0: float, k, K: int):
    """Inverse temperature after ``k`` of ``K`` steps of the quadratic schedule.

    ``1/sqrt(beta_k)`` interpolates quadratically in ``k/K`` from
    ``1/sqrt(beta0)`` down to 1.
    """
    if not 0.0 < beta0 <= 1.0:
        raise DomainError(f"beta0 must lie in (0, 1], got {beta0}")
    if K < 1:
        raise DomainError("the schedule needs K >= 1")
    k = np.asarray(k)
    if np.any((k < 0) | (k > K)):
        raise DomainError("step index out of range")
    c = 1.0 / np.sqrt(beta0)
    t = (k / K) ** 2
    inv_sqrt = c * (1.0 - t) + t
    out = inv_sqrt**-2
    return float(out) if out.ndim == 0 else out


def temper_momentum(rho, alpha_k: float):
    """Scale momentum by ``alpha_k``; returns the new momentum and the log-Jacobian."""
    if alpha_k <= 0:
        raise DomainError("tempering factor must be positive")
    rho = np.asarray(rho, dtype=float)
    return alpha_k * rho, rho.shape[-1] * np.log(alpha_k)


class NoTempering:
    """Homogeneous dynamics: every ``alpha_k = 1`` and ``beta0 = 1``."""

    @staticmethod
    def n_raw(K: int) -> int:
        return 0

    def alphas(self, K: int) -> np.ndarray:
        return np.ones(K)

    def beta0(self, K: int) -> float:
        return 1.0

    def __repr__(self):
        return "NoTempering()"


@dataclass(frozen=True)
class FixedTempering:
    """Quadratic schedule fixed by the initial inverse temperature ``beta0``."""

    beta0_value: float

    def __post_init__(self):
        if not 0.0 < self.beta0_value < 1.0:
            raise DomainError(f"beta0 must lie in (0, 1), got {self.beta0_value}")

    @staticmethod
    def n_raw(K: int) -> int:
        return 1

    def betas(self, K: int) -> np.ndarray:
        if K == 0:
            return np.ones(1)
        return quadratic_beta(self.beta0_value, np.arange(K + 1), K)

    def alphas(self, K: int) -> np.ndarray:
        b = self.betas(K)
        return np.sqrt(b[:-1] / b[1:])

    def beta0(self, K: int) -> float:
        # with no steps there is nothing to cool, so the start is already at beta = 1
        return self.beta0_value if K > 0 else 1.0

    def dlog_alpha_dbeta0(self, K: int) -> np.ndarray:
        """Derivative of each ``log alpha_k`` with respect to ``beta0``."""
        if K == 0:
            return np.zeros(0)
        c = 1.0 / np.sqrt(self.beta0_value)
        t = (np.arange(K + 1) / K) ** 2
        a = c * (1.0 - t) + t
        dlog_a = (1.0 - t) / a
        dc = -0.5 * self.beta0_value**-1.5
        return (dlog_a[1:] - dlog_a[:-1]) * dc


@dataclass(frozen=True)
class FreeTempering:
    """Independently chosen factors ``alpha_k``; ``beta0`` is the product of their squares."""

    alpha_values: tuple

    def __post_init__(self):
        a = np.asarray(self.alpha_values, dtype=float).ravel()
        if not np.all((a > 0) & (a <= 1)):
            raise DomainError("tempering factors must lie in (0, 1]")
        object.__setattr__(self, "alpha_values", tuple(a))

    @staticmethod
    def n_raw(K: int) -> int:
        return K

    def alphas(self, K: int) -> np.ndarray:
        if len(self.alpha_values) != K:
            raise ConfigurationError(f"free tempering has {len(self.alpha_values)} factors for K={K}")
        return np.asarray(self.alpha_values)

    def beta0(self, K: int) -> float:
        return float(np.prod(self.alphas(K)) ** 2)


@dataclass(frozen=True)
class FlowConfig:
    """Step count ``K``, per-dimension step sizes ``eps`` in ``(0, xi)`` and a tempering scheme."""

    K: int
    eps: np.ndarray
    tempering: object = field(default_factory=NoTempering)
    xi: float = 0.5

    def __post_init__(self):
        eps = np.atleast_1d(np.asarray(self.eps, dtype=float))
        if self.K < 0:
            raise ConfigurationError("K must be non-negative")
        if self.xi <= 0:
            raise DomainError("xi must be positive")
        if not np.all((eps > 0) & (eps < self.xi)):
            raise DomainError(f"step sizes must lie in (0, {self.xi})")
        object.__setattr__(self, "eps", eps)
        self.tempering.alphas(self.K)

    @property
    def alphas(self) -> np.ndarray:
        return self.tempering.alphas(self.K)

    @property
    def beta0(self) -> float:
        return self.tempering.beta0(self.K)

    def betas(self) -> np.ndarray:
        """``beta_0 .. beta_K`` implied by the factors, ending at ``beta_K = 1``."""
        log_a2 = 2.0 * np.log(self.alphas)
        tail = np.concatenate([np.cumsum(log_a2[::-1])[::-1], [0.0]])
        return np.exp(tail)


@dataclass(frozen=True)
class Trajectory:
    """Every state of a forward pass, plus what the adjoint sweep reuses.

    ``z`` and ``rho`` have shape ``(K+1, ..., ell)``; ``rho_half`` holds the
    momentum between the two half kicks and ``rho_pre`` the momentum before
    tempering, each ``(K, ..., ell)``. ``grad_U`` is the potential gradient at
    every stored position.
    """

    z: np.ndarray
    rho: np.ndarray
    rho_half: np.ndarray
    rho_pre: np.ndarray
    grad_U: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    log_jacobian: float

    @property
    def K(self) -> int:
        return self.z.shape[0] - 1

    def __len__(self):
        return self.z.shape[0]

    def __getitem__(self, k) -> PhasePoint:
        return PhasePoint(self.z[k], self.rho[k])

    @property
    def final(self) -> PhasePoint:
        return self[self.K]


def _grad_U(target, theta, x):
    return lambda z: -target.grad_z(theta, x, z)


def forward_flow(config: FlowConfig, target, theta, x, p0: PhasePoint) -> Trajectory:
    """Apply ``K`` leapfrog-then-temper steps from ``p0``."""
    if p0.dim != config.eps.shape[0]:
        raise ConfigurationError("phase point and step sizes differ in dimension")
    if not (np.all(np.isfinite(p0.z)) and np.all(np.isfinite(p0.rho))):
        raise IntegrationError("non-finite initial state", 0)
    eps = config.eps
    alphas = config.alphas
    grad_U = _grad_U(target, theta, x)
    K = config.K
    zs = [p0.z]
    rhos = [p0.rho]
    halves, pres = [], []
    g = grad_U(p0.z)
    if not np.all(np.isfinite(g)):
        raise IntegrationError("non-finite potential gradient", 1)
    grads = [g]
    log_jac = 0.0
    z, rho = p0.z, p0.rho
    for k in range(1, K + 1):
        rho_half = rho - 0.5 * eps * g
        z = z + eps * rho_half
        g = grad_U(z)
        if not np.all(np.isfinite(g)):
            raise IntegrationError("non-finite potential gradient", k)
        rho_pre = rho_half - 0.5 * eps * g
        rho, lj = temper_momentum(rho_pre, alphas[k - 1])
        log_jac += lj
        zs.append(z)
        rhos.append(rho)
        halves.append(rho_half)
        pres.append(rho_pre)
        grads.append(g)
    empty = np.empty((0,) + p0.z.shape)
    return Trajectory(
        z=np.stack(zs),
        rho=np.stack(rhos),
        rho_half=np.stack(halves) if halves else empty,
        rho_pre=np.stack(pres) if pres else empty,
        grad_U=np.stack(grads),
        alphas=alphas,
        betas=config.betas(),
        log_jacobian=float(log_jac),
    )


def inverse_flow(config: FlowConfig, target, theta, x, pK: PhasePoint) -> PhasePoint:
    """Undo :func:`forward_flow`: un-temper, then run each leapfrog step backwards."""
    eps = config.eps
    alphas = config.alphas
    grad_U = _grad_U(target, theta, x)
    z, rho = pK.z, pK.rho
    for k in range(config.K, 0, -1):
        rho = rho / alphas[k - 1]
        g = grad_U(z)
        if not np.all(np.isfinite(g)):
            raise IntegrationError("non-finite potential gradient", k)
        rho_half = rho + 0.5 * eps * g
        z = z - eps * rho_half
        g = grad_U(z)
        if not np.all(np.isfinite(g)):
            raise IntegrationError("non-finite potential gradient", k)
        rho = rho_half + 0.5 * eps * g
    return PhasePoint(z, rho)


def hamiltonian(target, theta, x, p: PhasePoint):
    """``U(z) + |rho|^2 / 2`` with ``U = -log p(x, z)``."""
    return -target.log_joint(theta, x, p.z) + 0.5 * np.sum(p.rho * p.rho, axis=-1)


def write_trajectory_csv(traj: Trajectory, target, theta, x, path) -> None:
    """Dump an unbatched trajectory: ``k, beta_k, z..., rho..., H``."""
    if traj.z.ndim != 2:
        raise ConfigurationError("only single trajectories can be written")
    ell = traj.z.shape[-1]
    H = hamiltonian(target, theta, x, PhasePoint(traj.z, traj.rho))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "beta_k"] + [f"z{j}" for j in range(ell)] + [f"rho{j}" for j in range(ell)] + ["H"])
        for k in range(traj.K + 1):
            w.writerow([k, repr(float(traj.betas[k]))]
                       + [repr(float(v)) for v in traj.z[k]]
                       + [repr(float(v)) for v in traj.rho[k]]
                       + [repr(float(H[k]))])

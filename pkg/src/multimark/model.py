"""Link-Barker-Jolly-Seber cell probabilities with a two-mark event layer,
the latent multinomial density and the hierarchical prior."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, gammaln, logit

from . import _kernels
from .histories import EncounterHistory, Event, _as_history

EVENTS = (Event.L, Event.R, Event.S, Event.B)
RHO_NAMES = ("rho_L", "rho_R", "rho_S", "rho_B")


class Hyper(NamedTuple):
    mu_phi: float = 0.0
    sigma_phi: float = 1.0
    mu_p: float = 0.0
    sigma_p: float = 1.0
    mu_gamma: float = 0.0
    sigma_gamma: float = 1.0

    @property
    def mu(self) -> np.ndarray:
        return np.array([self.mu_phi, self.mu_p, self.mu_gamma])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigma_phi, self.sigma_p, self.sigma_gamma])

    @classmethod
    def from_arrays(cls, mu, sigma) -> "Hyper":
        return cls(float(mu[0]), float(sigma[0]), float(mu[1]), float(sigma[1]), float(mu[2]), float(sigma[2]))


@dataclass(frozen=True, eq=False)
class ThetaState:
    """Demographic, detection and event parameters on the natural scale.

    ``rho`` is None for one-sided (single event) data.
    """

    phi: np.ndarray
    p: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray | None = None
    hyper: Hyper = field(default_factory=Hyper)

    def __post_init__(self):
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if phi.size == 0 and p.size != 1:
            raise ValueError("phi must have T-1 entries")
        if phi.size != p.size - 1 or gamma.size != p.size - 1:
            raise ValueError("phi and gamma need T-1 entries when p has T")
        if np.any((phi <= 0) | (phi >= 1)) or np.any((p <= 0) | (p >= 1)):
            raise ValueError("phi and p must lie strictly inside (0, 1)")
        if np.any(gamma <= 0):
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "gamma", gamma)
        if self.rho is not None:
            rho = np.asarray(self.rho, dtype=float)
            if rho.shape != (4,) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
                raise ValueError("rho must be a probability 4-vector (L, R, S, B)")
            object.__setattr__(self, "rho", rho)
        h = Hyper(*self.hyper)
        if min(h.sigma_phi, h.sigma_p, h.sigma_gamma) <= 0:
            raise ValueError("hyper standard deviations must be positive")
        object.__setattr__(self, "hyper", h)

    @property
    def T(self) -> int:
        return self.p.size

    @property
    def logit_phi(self) -> np.ndarray:
        return logit(self.phi)

    @property
    def logit_p(self) -> np.ndarray:
        return logit(self.p)

    @property
    def log_gamma(self) -> np.ndarray:
        return np.log(self.gamma)

    @classmethod
    def from_transformed(cls, logit_phi, logit_p, log_gamma, rho=None, hyper=Hyper()) -> "ThetaState":
        return cls(expit(np.asarray(logit_phi, float)), expit(np.asarray(logit_p, float)),
                   np.exp(np.asarray(log_gamma, float)), rho, hyper)

    def log_rho5(self) -> np.ndarray:
        """Log event probabilities indexed by event code; zeros without an event layer."""
        out = np.zeros(5)
        if self.rho is not None:
            with np.errstate(divide="ignore"):
                out[1:] = np.log(self.rho)
        return out


@dataclass(frozen=True)
class PriorConfig:
    """Hierarchical prior. Normal second parameters are variances."""

    u_max: int
    mu_var_phi: float = 2.0
    mu_var_p: float = 2.0
    mu_var_gamma: float = 0.25
    sigma_df: float = 3.0
    sigma_scale: float = 0.9

    @classmethod
    def for_data(cls, total_observed: int, **kw) -> "PriorConfig":
        return cls(u_max=int(total_observed), **kw)

    @property
    def mu_var(self) -> np.ndarray:
        return np.array([self.mu_var_phi, self.mu_var_p, self.mu_var_gamma])


def kappa(theta: ThetaState) -> np.ndarray:
    kap, _ = _kernels.kappa_chi(theta.phi, theta.p, theta.gamma)
    return kap


def xi(theta: ThetaState) -> np.ndarray:
    """Probability of first capture on each occasion given at least one capture."""
    kap = kappa(theta)
    return kap / kap.sum()


def chi(theta: ThetaState) -> np.ndarray:
    """Probability of never being seen again after release on each occasion."""
    _, c = _kernels.kappa_chi(theta.phi, theta.p, theta.gamma)
    return c


def cell_prob(omega: EncounterHistory | str, theta: ThetaState) -> tuple[float, float]:
    """Cell probability of a nonzero history, returned as ``(prob, log_prob)``."""
    omega = _as_history(omega)
    if omega.T != theta.T:
        raise ValueError("history length does not match the number of occasions")
    if omega.is_zero:
        raise ValueError("the all-zero history has no cell probability")
    log_rho = theta.log_rho5()
    logxi = np.log(xi(theta))
    logchi = np.log(chi(theta))
    a, b = omega.first, omega.last
    ev = omega.events
    lp = logxi[a] + log_rho[ev[a]]
    for t in range(a + 1, b + 1):
        lp += math.log(theta.phi[t - 1])
        if ev[t] != Event.ZERO:
            lp += math.log(theta.p[t]) + log_rho[ev[t]]
        else:
            lp += math.log1p(-theta.p[t])
    lp += logchi[b]
    return math.exp(lp), lp


def log_cell_probs(codes: np.ndarray, theta: ThetaState) -> np.ndarray:
    """Vectorised log cell probabilities for an int8 (K, T) code matrix."""
    codes = np.ascontiguousarray(codes, dtype=np.int8)
    first, last = first_last(codes)
    out = np.empty(codes.shape[0])
    _kernels.log_cell_probs(codes, first, last, theta.logit_phi, theta.logit_p, theta.log_gamma,
                            theta.log_rho5(), out)
    return out


def first_last(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nz = codes != 0
    if not nz.any(axis=1).all():
        raise ValueError("all-zero rows have no first capture")
    first = nz.argmax(axis=1).astype(np.int64)
    last = (codes.shape[1] - 1 - nz[:, ::-1].argmax(axis=1)).astype(np.int64)
    return first, last


def log_multinomial(x, log_pi, N: int | None = None) -> float:
    """log of N!/prod(x_k!) prod(pi_k^x_k); -inf when an occupied cell has pi = 0."""
    x = np.asarray(x, dtype=np.int64)
    log_pi = np.asarray(log_pi, dtype=float)
    if np.any(x < 0):
        raise ValueError("counts must be nonnegative")
    total = int(x.sum())
    if N is not None and int(N) != total:
        raise ValueError(f"counts sum to {total}, not N={N}")
    occupied = x > 0
    if np.any(np.isneginf(log_pi[occupied])):
        return -math.inf
    return float(gammaln(total + 1) - gammaln(x + 1).sum() + np.dot(x[occupied], log_pi[occupied]))


def log_prior(theta: ThetaState, cfg: PriorConfig, N: int | None = None) -> float:
    """Joint log prior density on the sampling scale (logit/log parameters,
    natural-scale hyper standard deviations), plus the uniform prior on N when given."""
    h = theta.hyper
    has_rho = theta.rho is not None
    v = _kernels.log_prior_theta(theta.logit_phi, theta.logit_p, theta.log_gamma, h.mu, h.sigma,
                                 has_rho, cfg.mu_var, cfg.sigma_df, cfg.sigma_scale)
    if N is not None:
        if not 0 <= N <= cfg.u_max:
            return -math.inf
        v -= math.log(cfg.u_max + 1)
    return float(v)


def growth_rate(theta: ThetaState) -> np.ndarray:
    return theta.phi + theta.gamma


@dataclass(frozen=True, eq=False)
class LatentCounts:
    """Counts of the compatible true histories, aligned with a LatentStructure."""

    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64)
        if np.any(x < 0):
            raise ValueError("latent counts must be nonnegative")
        object.__setattr__(self, "x", x)

    @property
    def N(self) -> int:
        return int(self.x.sum())

    def satisfies(self, f, structure) -> bool:
        A = structure.constraint_matrix()
        return bool(np.array_equal(A.T @ self.x, np.asarray(f)))

"""Metropolis-within-Gibbs sampling of (theta, x) for the latent multinomial model.

Each sweep updates theta given x (random-walk Metropolis on the transformed
demographic parameters and hyper standard deviations, conjugate draws for
the hyper means and the event probabilities), then updates x given theta
with one of two kernels:

``simplified``
    visit every child history once and redraw its count uniformly on
    ``0..min(f_l, f_r)``, moving the difference onto its two parents.
``nullspace``
    step along the basis vector ``e_k - e_l(k) - e_r(k)`` by a nonzero
    integer drawn uniformly from ``-D..D``.

Random streams: the master seed feeds ``numpy.random.SeedSequence`` and
chain ``i`` uses child ``i`` of ``SeedSequence(seed).spawn(n_chains)``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .histories import LatentStructure, ObservedData, build_latent_structure
from .model import RHO_NAMES, Hyper, LatentCounts, PriorConfig, ThetaState

log = logging.getLogger(__name__)

KERNELS = ("simplified", "nullspace")
HYPER_NAMES = ("mu_phi", "sigma_phi", "mu_p", "sigma_p", "mu_gamma", "sigma_gamma")


class SamplerError(RuntimeError):
    """Raised when a chain cannot continue; ``state`` holds a dump of the chain."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 3
    burn_in: int = 10_000
    n_iterations: int = 50_000
    thin: int = 1
    seed: int = 0
    kernel: str = "simplified"
    nullspace_d: int = 1
    step_phi: float = 0.3
    step_p: float = 0.3
    step_gamma: float = 0.3
    step_sigma: float = 0.3
    adapt_window: int = 50
    scale_moves: bool = True
    debug: bool = False

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be at least 1")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown latent kernel {self.kernel!r}; choose from {KERNELS}")
        if self.nullspace_d < 1:
            raise ValueError("nullspace_d must be a positive integer")
        if self.adapt_window < 0:
            raise ValueError("adapt_window must be nonnegative")

    @property
    def n_keep(self) -> int:
        return self.n_iterations // self.thin


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Array form of a dataset ready for the compiled sampler."""

    codes: np.ndarray
    f: np.ndarray
    left_parent: np.ndarray
    right_parent: np.ndarray
    has_rho: bool
    structure: LatentStructure | None = None

    def __post_init__(self):
        from .model import first_last

        codes = np.ascontiguousarray(self.codes, dtype=np.int8)
        first, last = first_last(codes)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "first", first)
        object.__setattr__(self, "last", last)
        object.__setattr__(self, "f", np.ascontiguousarray(self.f, dtype=np.int64))
        object.__setattr__(self, "left_parent", np.ascontiguousarray(self.left_parent, dtype=np.int64))
        object.__setattr__(self, "right_parent", np.ascontiguousarray(self.right_parent, dtype=np.int64))

    @classmethod
    def two_sided(cls, data: ObservedData, structure: LatentStructure | None = None) -> "FitProblem":
        s = structure or build_latent_structure(data)
        return cls(s.code_matrix(), data.f, s.left_parent, s.right_parent, True, s)

    @classmethod
    def one_sided(cls, codes: np.ndarray, counts) -> "FitProblem":
        empty = np.zeros(0, dtype=np.int64)
        return cls(codes, counts, empty, empty, False)

    @classmethod
    def from_data(cls, data) -> "FitProblem":
        if isinstance(data, FitProblem):
            return data
        if isinstance(data, ObservedData):
            return cls.two_sided(data)
        # one-sided data: anything exposing a code matrix and counts
        return cls.one_sided(data.code_matrix(), data.counts)

    @property
    def T(self) -> int:
        return self.codes.shape[1]

    @property
    def n_observed(self) -> int:
        return self.f.size

    @property
    def n_children(self) -> int:
        return self.left_parent.size

    @property
    def u_max(self) -> int:
        return int(self.f.sum())

    def columns(self) -> list[str]:
        return chain_columns(self.T, self.has_rho)


def chain_columns(T: int, has_rho: bool = True) -> list[str]:
    """Column order of a chain: sweep, phi, p, gamma, lambda, [rho], hyper, N, log_posterior."""
    cols = ["sweep"]
    cols += [f"phi_{t}" for t in range(1, T)]
    cols += [f"p_{t}" for t in range(1, T + 1)]
    cols += [f"gamma_{t}" for t in range(1, T)]
    cols += [f"lambda_{t}" for t in range(1, T)]
    if has_rho:
        cols += list(RHO_NAMES)
    cols += list(HYPER_NAMES)
    cols += ["N", "log_posterior"]
    return cols


@dataclass(eq=False)
class Chain:
    """Retained draws of one chain; ``values`` excludes the sweep column."""

    columns: list[str]
    sweeps: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.columns[0] != "sweep":
            self.columns = ["sweep"] + list(self.columns)
        if self.values.shape != (self.sweeps.size, len(self.columns) - 1):
            raise ValueError("chain values do not match sweeps x columns")

    @property
    def params(self) -> list[str]:
        return self.columns[1:]

    def __len__(self) -> int:
        return self.sweeps.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.params.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.params


@dataclass(eq=False)
class NullSpaceBasis:
    """Integer basis ``b_k = e_k - e_l(k) - e_r(k)`` of the constraint null space
    restricted to the compatible histories."""

    vectors: np.ndarray

    @classmethod
    def from_structure(cls, s: LatentStructure) -> "NullSpaceBasis":
        C = s.n_children
        B = np.zeros((C, s.K), dtype=np.int64)
        rows = np.arange(C)
        B[rows, s.n_observed + rows] = 1
        B[rows, s.left_parent] -= 1
        B[rows, s.right_parent] -= 1
        A = s.constraint_matrix()
        if np.any(B @ A != 0):
            raise AssertionError("basis vectors are not in the null space of A'")
        return cls(B)

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(eq=False)
class ChainState:
    theta: ThetaState
    x: LatentCounts
    log_posterior: float


def init_latent(data: ObservedData, structure: LatentStructure) -> LatentCounts:
    """Every observed history is its own individual; all children start at zero."""
    x = np.zeros(structure.K, dtype=np.int64)
    x[: structure.n_observed] = data.f
    return LatentCounts(x)


def chain_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def initial_theta(T: int, has_rho: bool, rng: np.random.Generator) -> ThetaState:
    """Dispersed starting values on the transformed scale."""
    lphi = 1.0 + 0.5 * rng.standard_normal(T - 1)
    lp = 0.5 * rng.standard_normal(T)
    lgam = math.log(0.25) + 0.5 * rng.standard_normal(T - 1)
    mu = np.array([lphi.mean() if T > 1 else 1.0, lp.mean(), lgam.mean() if T > 1 else math.log(0.25)])
    hyper = Hyper.from_arrays(mu, np.full(3, 0.5))
    rho = np.full(4, 0.25) if has_rho else None
    return ThetaState.from_transformed(lphi, lp, lgam, rho, hyper)


def _step_vector(cfg: SamplerConfig, T: int) -> np.ndarray:
    # the optional last three entries drive the joint (sigma, block) scale moves
    return np.log(np.concatenate([
        np.full(T - 1, cfg.step_phi),
        np.full(T, cfg.step_p),
        np.full(T - 1, cfg.step_gamma),
        np.full(6 if cfg.scale_moves else 3, cfg.step_sigma),
    ]))


def _log_posterior(problem: FitProblem, x: np.ndarray, theta: ThetaState, prior: PriorConfig) -> float:
    logpi = np.empty(problem.codes.shape[0])
    _kernels.log_cell_probs(problem.codes, problem.first, problem.last, theta.logit_phi, theta.logit_p,
                            theta.log_gamma, theta.log_rho5(), logpi)
    lgf = _lgf_table(prior.u_max)
    h = theta.hyper
    return float(_kernels.log_posterior_core(x, logpi, lgf, theta.logit_phi, theta.logit_p, theta.log_gamma,
                                             h.mu, h.sigma, problem.has_rho, prior.mu_var, prior.sigma_df,
                                             prior.sigma_scale, prior.u_max))


def _lgf_table(u_max: int) -> np.ndarray:
    from scipy.special import gammaln

    return gammaln(np.arange(u_max + 2) + 1.0)


def log_posterior(data, x: LatentCounts, theta: ThetaState, prior: PriorConfig | None = None) -> float:
    """Log joint density of (x, N, theta) up to the constraint indicator."""
    problem = FitProblem.from_data(data)
    prior = prior or PriorConfig.for_data(problem.u_max)
    return _log_posterior(problem, x.x, theta, prior)


def _latent_step(state: ChainState, problem: FitProblem, prior: PriorConfig, rng, kernel: str, D=None):
    x = state.x.x.copy()
    theta = state.theta
    logpi = np.empty(problem.codes.shape[0])
    _kernels.log_cell_probs(problem.codes, problem.first, problem.last, theta.logit_phi, theta.logit_p,
                            theta.log_gamma, theta.log_rho5(), logpi)
    lgf = _lgf_table(prior.u_max)
    N = int(x.sum())
    if kernel == "simplified":
        N, dlp, nsub, nacc = _kernels.latent_sweep_simplified(
            x, N, logpi, problem.f, problem.left_parent, problem.right_parent, problem.n_observed, lgf,
            prior.u_max, rng)
    else:
        D = np.full(problem.n_children, 1, dtype=np.int64) if D is None else np.asarray(D, dtype=np.int64)
        N, dlp, nsub, nacc = _kernels.latent_sweep_nullspace(
            x, N, logpi, problem.left_parent, problem.right_parent, problem.n_observed, D, lgf,
            prior.u_max, rng)
    new = ChainState(theta, LatentCounts(x), state.log_posterior + dlp)
    return new, nsub, nacc


def update_latent_simplified(state: ChainState, data: ObservedData, structure: LatentStructure | None,
                             rng: np.random.Generator, prior: PriorConfig | None = None):
    """One simplified-kernel sweep over the children at fixed theta.

    Returns ``(new_state, n_substeps, n_accepted)``.
    """
    problem = FitProblem.two_sided(data, structure)
    prior = prior or PriorConfig.for_data(problem.u_max)
    return _latent_step(state, problem, prior, rng, "simplified")


def update_latent_nullspace(state: ChainState, data: ObservedData, structure: LatentStructure | None,
                            rng: np.random.Generator, D=None, prior: PriorConfig | None = None):
    problem = FitProblem.two_sided(data, structure)
    prior = prior or PriorConfig.for_data(problem.u_max)
    return _latent_step(state, problem, prior, rng, "nullspace", D)


def update_theta(state: ChainState, data, rng: np.random.Generator, prior: PriorConfig | None = None,
                 steps: np.ndarray | None = None) -> tuple[ChainState, np.ndarray]:
    """One sweep of parameter updates given the latent counts.

    Returns the new state and the per-scalar acceptance indicators
    (phi, p, gamma, the three hyper standard deviations, then the three
    scale moves when ``steps`` includes them, as it does by default).
    """
    problem = FitProblem.from_data(data)
    prior = prior or PriorConfig.for_data(problem.u_max)
    th = state.theta
    T = problem.T
    lphi, lp, lgam = th.logit_phi.copy(), th.logit_p.copy(), th.log_gamma.copy()
    rho4 = th.rho.copy() if problem.has_rho else np.zeros(4)
    logrho5 = th.log_rho5()
    mu, sig = th.hyper.mu, th.hyper.sigma
    logstep = _step_vector(SamplerConfig(), T) if steps is None else np.log(np.asarray(steps, float))
    acc = np.zeros(logstep.size)
    S = _kernels.suff_stats(problem.codes, problem.first, problem.last, state.x.x)
    _kernels.theta_sweep(S, lphi, lp, lgam, logrho5, rho4, mu, sig, problem.has_rho, logstep, acc,
                         prior.mu_var, prior.sigma_df, prior.sigma_scale, rng)
    theta = ThetaState.from_transformed(lphi, lp, lgam, rho4 if problem.has_rho else None,
                                        Hyper.from_arrays(mu, sig))
    lp_ = _log_posterior(problem, state.x.x, theta, prior)
    return ChainState(theta, state.x, lp_), acc


def run_chain(data, cfg: SamplerConfig, chain: int = 0, rng: np.random.Generator | None = None, *,
              theta0: ThetaState | None = None, x0: LatentCounts | None = None,
              update_theta: bool = True, record_latent: bool = False,
              prior: PriorConfig | None = None) -> Chain:
    """Run one chain. Without ``rng`` the stream for ``chain`` is derived from ``cfg.seed``.

    ``update_theta=False`` freezes theta at ``theta0`` and samples only the
    latent counts (used to check the kernels against exact enumeration).
    """
    problem = FitProblem.from_data(data)
    prior = prior or PriorConfig.for_data(problem.u_max)
    if rng is None:
        rng = chain_rngs(cfg.seed, chain + 1)[chain]
    T = problem.T
    theta = theta0 if theta0 is not None else initial_theta(T, problem.has_rho, rng)
    if (theta.rho is not None) != problem.has_rho:
        raise ValueError("theta0 event layer does not match the data")
    if x0 is None:
        x = np.zeros(problem.codes.shape[0], dtype=np.int64)
        x[: problem.n_observed] = problem.f
    else:
        x = x0.x.copy()
    if not _kernels.constraints_hold(x, problem.f, problem.left_parent, problem.right_parent, problem.n_observed):
        raise ValueError("initial latent counts violate the constraints")
    lp0 = _log_posterior(problem, x, theta, prior)
    if not math.isfinite(lp0):
        raise SamplerError("non-finite log posterior at initialisation",
                           {"theta": theta, "x": x, "log_posterior": lp0})

    lphi, lp, lgam = theta.logit_phi.copy(), theta.logit_p.copy(), theta.log_gamma.copy()
    rho4 = theta.rho.copy() if problem.has_rho else np.zeros(4)
    mu, sig = theta.hyper.mu, theta.hyper.sigma
    logstep = _step_vector(cfg, T)
    columns = problem.columns()
    out = np.zeros((cfg.n_keep, len(columns) - 1))
    out_lat = np.zeros((cfg.n_keep if record_latent else 0, problem.n_children), dtype=np.int64)
    acc = np.zeros(logstep.size)
    lat_counts = np.zeros(2, dtype=np.int64)
    fail = np.zeros(1, dtype=np.int64)
    D = np.full(problem.n_children, cfg.nullspace_d, dtype=np.int64)
    status = _kernels.run_core(
        problem.codes, problem.first, problem.last, problem.f, problem.left_parent, problem.right_parent,
        x, lphi, lp, lgam, rho4, mu, sig, problem.has_rho, KERNELS.index(cfg.kernel), D,
        update_theta, True, logstep, cfg.adapt_window, cfg.burn_in, cfg.n_iterations, cfg.thin,
        prior.mu_var, prior.sigma_df, prior.sigma_scale, prior.u_max, rng, cfg.debug,
        out, out_lat, acc, lat_counts, fail)
    if status != _kernels.STATUS_OK:
        reason = {
            _kernels.STATUS_NONFINITE: "non-finite log posterior",
            _kernels.STATUS_CACHE_MISMATCH: "cached log posterior disagrees with recomputation",
            _kernels.STATUS_CONSTRAINT: "latent counts violate the constraints",
        }[status]
        raise SamplerError(f"chain {chain} stopped at sweep {int(fail[0])}: {reason}", {
            "logit_phi": lphi, "logit_p": lp, "log_gamma": lgam, "rho": rho4, "mu": mu,
            "sigma": sig, "x": x, "sweep": int(fail[0]),
        })
    sweeps = cfg.burn_in + cfg.thin * np.arange(1, cfg.n_keep + 1)
    n_sweeps = cfg.burn_in + cfg.n_iterations
    meta = {
        "chain": chain,
        "kernel": cfg.kernel,
        "theta_acceptance": (acc / cfg.n_iterations).tolist(),
        "latent_substeps_per_sweep": int(lat_counts[0] // n_sweeps) if n_sweeps else 0,
        "latent_acceptance": float(lat_counts[1] / lat_counts[0]) if lat_counts[0] else float("nan"),
        "final_step_sizes": np.exp(logstep).tolist(),
    }
    if record_latent:
        meta["latent"] = out_lat
    return Chain(columns, sweeps.astype(np.int64), out, meta)


def _run_one(args):
    data, cfg, chain, seed_seq = args
    return run_chain(data, cfg, chain, np.random.default_rng(seed_seq))


def run_chains(data, cfg: SamplerConfig, workers: int = 1) -> list[Chain]:
    """Run ``cfg.n_chains`` independent chains; results do not depend on ``workers``."""
    problem = FitProblem.from_data(data)
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    jobs = [(problem, cfg, i, s) for i, s in enumerate(seqs)]
    if workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def with_seed(cfg: SamplerConfig, seed: int) -> SamplerConfig:
    return replace(cfg, seed=seed)

"""Forward simulation of two-mark open-population capture data.

Individuals enter the study area on occasion ``e`` with probability
proportional to ``w_1 = 1``, ``w_{t+1} = gamma_t * prod_{k<t}(phi_k + gamma_k)``,
the expected number of recruits per founder. With this choice the first-capture
distribution of captured individuals is exactly ``xi(a)`` of the fitted model.
"""
from __future__ import annotations

import configparser
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .histories import EncounterHistory, Event, ObservedClass, ObservedData, classify, split_unobservable
from .model import Hyper, PriorConfig, ThetaState, xi


@dataclass(frozen=True)
class SimScenario:
    """Simulation settings. Transformed-scale parameters are drawn
    independently per occasion from normals given as (mean, variance)."""

    T: int = 10
    target_observed: int = 200
    rho: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    logit_phi: tuple[float, float] = (math.log(0.8 / 0.2), 0.30)
    logit_p: tuple[float, float] = (math.log(0.8 / 0.2), 0.30)
    log_gamma: tuple[float, float] = (math.log(0.25), 0.30)
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.target_observed < 1:
            raise ValueError("target_observed must be at least 1")
        rho = np.asarray(self.rho, float)
        if rho.shape != (4,) or np.any(rho < 0) or abs(rho.sum() - 1) > 1e-12:
            raise ValueError("rho must be a probability 4-vector (L, R, S, B)")
        for name in ("logit_phi", "logit_p", "log_gamma"):
            if getattr(self, name)[1] < 0:
                raise ValueError(f"{name} variance must be nonnegative")

    # flat key = value representation used by scenario files
    KEYS = ("name", "T", "target_observed", "rho_L", "rho_R", "rho_S", "rho_B",
            "logit_phi_mean", "logit_phi_var", "logit_p_mean", "logit_p_var",
            "log_gamma_mean", "log_gamma_var", "seed")

    def to_config(self) -> dict[str, str]:
        vals = [self.name, self.T, self.target_observed, *self.rho, *self.logit_phi, *self.logit_p,
                *self.log_gamma, self.seed]
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in zip(self.KEYS, vals)}

    @classmethod
    def from_config(cls, cfg: dict[str, str]) -> "SimScenario":
        unknown = set(cfg) - set(cls.KEYS)
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        base = cls()
        g = lambda k, d: float(cfg[k]) if k in cfg else d
        return cls(
            T=int(cfg.get("T", base.T)),
            target_observed=int(cfg.get("target_observed", base.target_observed)),
            rho=tuple(g(k, v) for k, v in zip(("rho_L", "rho_R", "rho_S", "rho_B"), base.rho)),
            logit_phi=(g("logit_phi_mean", base.logit_phi[0]), g("logit_phi_var", base.logit_phi[1])),
            logit_p=(g("logit_p_mean", base.logit_p[0]), g("logit_p_var", base.logit_p[1])),
            log_gamma=(g("log_gamma_mean", base.log_gamma[0]), g("log_gamma_var", base.log_gamma[1])),
            seed=int(cfg.get("seed", base.seed)),
            name=cfg.get("name", base.name),
        )


SIMULATION_1 = SimScenario(name="sim1")
SIMULATION_2 = SimScenario(name="sim2", rho=(0.0, 0.0, 1.0, 0.0))
SCENARIOS = {"sim1": SIMULATION_1, "sim2": SIMULATION_2}


def read_key_values(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    parser.read_string("[top]\n" + Path(path).read_text())
    return dict(parser["top"])


def load_scenario(spec: str | Path) -> SimScenario:
    if str(spec) in SCENARIOS:
        return SCENARIOS[str(spec)]
    return SimScenario.from_config(read_key_values(spec))


@dataclass(eq=False)
class SimResult:
    observed: ObservedData
    true_histories: Counter
    individual_histories: list[EncounterHistory]
    observed_records: list[EncounterHistory]
    theta: ThetaState
    n_true_simulated: int
    n_captured: int
    overshoot: bool
    captures_per_individual: dict = field(default_factory=dict)

    @property
    def true_N(self) -> int:
        """Number of distinct individuals captured at least once."""
        return self.n_captured


def draw_scenario_params(sc: SimScenario, rng: np.random.Generator) -> ThetaState:
    T = sc.T

    def draw(spec, n):
        mean, var = spec
        return mean + math.sqrt(var) * rng.standard_normal(n)

    lphi = draw(sc.logit_phi, T - 1)
    lp = draw(sc.logit_p, T)
    lgam = draw(sc.log_gamma, T - 1)
    return ThetaState(expit(lphi), expit(lp), np.exp(lgam), np.asarray(sc.rho, float))


def entry_probabilities(theta: ThetaState) -> np.ndarray:
    T = theta.T
    w = np.empty(T)
    w[0] = 1.0
    prod = 1.0
    for t in range(1, T):
        w[t] = theta.gamma[t - 1] * prod
        prod *= theta.phi[t - 1] + theta.gamma[t - 1]
    return w / w.sum()


def _event(rho: np.ndarray, rng) -> Event:
    return Event(1 + rng.choice(4, p=rho))


def simulate_individual(theta: ThetaState, rng: np.random.Generator,
                        entry: np.ndarray | None = None) -> EncounterHistory:
    """True history of one recruit; may be all zero."""
    T = theta.T
    rho = theta.rho if theta.rho is not None else np.array([1.0, 0, 0, 0])
    if entry is None:
        entry = entry_probabilities(theta)
    t = rng.choice(T, p=entry)
    events = [Event.ZERO] * T
    while True:
        if rng.random() < theta.p[t]:
            events[t] = _event(rho, rng)
        if t == T - 1 or rng.random() >= theta.phi[t]:
            break
        t += 1
    return EncounterHistory(tuple(events))


def simulate_captured(theta: ThetaState, rng: np.random.Generator) -> EncounterHistory:
    """Draw a history directly from the cell probabilities (conditional on capture)."""
    T = theta.T
    rho = theta.rho if theta.rho is not None else np.array([1.0, 0, 0, 0])
    a = rng.choice(T, p=xi(theta))
    events = [Event.ZERO] * T
    events[a] = _event(rho, rng)
    t = a
    while t < T - 1 and rng.random() < theta.phi[t]:
        t += 1
        if rng.random() < theta.p[t]:
            events[t] = _event(rho, rng)
    return EncounterHistory(tuple(events))


def observed_views(h: EncounterHistory) -> list[EncounterHistory]:
    """The 0, 1 or 2 observed histories an individual contributes."""
    if h.is_zero:
        return []
    if classify(h) is ObservedClass.UNOBSERVABLE:
        return list(split_unobservable(h))
    return [h]


def collect(draw, target: int, max_individuals: int = 1_000_000):
    """Draw individuals until at least ``target`` observed histories exist.

    An individual contributing two histories that crosses the target is kept,
    so the total may end at ``target + 1``.
    """
    individuals, records = [], []
    n = 0
    while len(records) < target:
        if n >= max_individuals:
            raise RuntimeError(f"fewer than {target} observed histories after {n} individuals")
        h = draw()
        n += 1
        individuals.append(h)
        records.extend(observed_views(h))
    return individuals, records, n


def simulate_dataset(sc: SimScenario, rng: np.random.Generator | None = None,
                     theta: ThetaState | None = None) -> SimResult:
    rng = rng if rng is not None else np.random.default_rng(sc.seed)
    theta = theta if theta is not None else draw_scenario_params(sc, rng)
    entry = entry_probabilities(theta)
    individuals, records, n = collect(lambda: simulate_individual(theta, rng, entry), sc.target_observed)
    captured = [h for h in individuals if not h.is_zero]
    caps = [sum(e != Event.ZERO for e in h.events) for h in captured]
    return SimResult(
        observed=ObservedData.from_records((h, 1) for h in records),
        true_histories=Counter(str(h) for h in individuals),
        individual_histories=individuals,
        observed_records=records,
        theta=theta,
        n_true_simulated=n,
        n_captured=len(captured),
        overshoot=len(records) > sc.target_observed,
        captures_per_individual={"median": float(np.median(caps)), "min": int(min(caps)), "max": int(max(caps))},
    )


def truth_values(theta: ThetaState, N: int | None = None) -> dict[str, float]:
    """Parameter values keyed by chain column name."""
    T = theta.T
    out = {f"phi_{t}": float(theta.phi[t - 1]) for t in range(1, T)}
    out |= {f"p_{t}": float(theta.p[t - 1]) for t in range(1, T + 1)}
    out |= {f"gamma_{t}": float(theta.gamma[t - 1]) for t in range(1, T)}
    out |= {f"lambda_{t}": float(theta.phi[t - 1] + theta.gamma[t - 1]) for t in range(1, T)}
    if theta.rho is not None:
        out |= dict(zip(("rho_L", "rho_R", "rho_S", "rho_B"), map(float, theta.rho)))
    if N is not None:
        out["N"] = float(N)
    return out


def draw_prior_theta(T: int, prior: PriorConfig, rng: np.random.Generator,
                     rho: np.ndarray | None = None) -> ThetaState:
    """One draw of theta from the hierarchical prior; ``rho`` fixes the event layer.

    Transformed values are clipped to +-30 so probabilities stay inside (0, 1).
    """
    mu = rng.standard_normal(3) * np.sqrt(prior.mu_var)
    sig = prior.sigma_scale * np.abs(rng.standard_t(prior.sigma_df, 3))
    lphi = np.clip(mu[0] + sig[0] * rng.standard_normal(T - 1), -30, 30)
    lp = np.clip(mu[1] + sig[1] * rng.standard_normal(T), -30, 30)
    lgam = np.clip(mu[2] + sig[2] * rng.standard_normal(T - 1), -30, 30)
    if rho is None:
        rho = rng.dirichlet(np.ones(4))
    theta = ThetaState.from_transformed(lphi, lp, lgam, np.asarray(rho, float), Hyper.from_arrays(mu, sig))
    return theta

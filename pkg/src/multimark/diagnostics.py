"""Posterior summaries, convergence diagnostics and simulation-study scoring."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import PriorConfig
from .sampler import Chain
from .simulator import collect, draw_prior_theta, simulate_captured

log = logging.getLogger(__name__)

QUANTILES = (0.025, 0.975)
FAMILIES = {"phi": "phi_", "f": "gamma_", "lambda": "lambda_"}


def quantile_interval(draws, probs=QUANTILES) -> tuple[float, float]:
    """Equal-tailed interval: the order statistic nearest the position
    ``(n - 1) q`` (0-based), so 40 draws give the 2nd and 39th values."""
    lo, hi = np.quantile(np.asarray(draws, float), probs, method="nearest")
    return float(lo), float(hi)


def psrf(chains) -> tuple[float, bool]:
    """Brooks-Gelman corrected potential scale reduction factor.

    ``chains`` is an (m, n) array. Returns ``(psrf, degenerate)``; when the
    within-chain variance is zero the factor is undefined and reported as 1.0
    with ``degenerate`` set.
    """
    x = np.asarray(chains, float)
    m, n = x.shape
    if m < 2:
        raise ValueError("the PSRF needs at least two chains")
    if n < 2:
        raise ValueError("the PSRF needs at least two draws per chain")
    xbar = x.mean(axis=1)
    s2 = x.var(axis=1, ddof=1)
    W = s2.mean()
    if W <= 0:
        return 1.0, True
    B = n * xbar.var(ddof=1)
    muhat = xbar.mean()
    var_w = s2.var(ddof=1) / m
    var_b = 2.0 * B**2 / (m - 1)
    cov_wb = (n / m) * (np.cov(s2, xbar**2)[0, 1] - 2.0 * muhat * np.cov(s2, xbar)[0, 1])
    V = (n - 1) * W / n + (1 + 1 / m) * B / n
    var_V = ((n - 1) ** 2 * var_w + (1 + 1 / m) ** 2 * var_b + 2 * (n - 1) * (1 + 1 / m) * cov_wb) / n**2
    R2 = (n - 1) / n + (1 + 1 / m) * B / (n * W)
    if var_V <= 0:
        return float(math.sqrt(R2)), False
    df = 2.0 * V**2 / var_V
    return float(math.sqrt((df + 3) / (df + 1) * R2)), False


def batch_means(chains) -> tuple[float, float]:
    """Monte Carlo standard error and effective sample size by batch means.

    Each chain is cut into floor(sqrt(n)) batches of floor(sqrt(n)) draws;
    batch means from all chains are pooled.
    """
    chains = [np.asarray(c, float) for c in chains]
    n_total = sum(c.size for c in chains)
    allx = np.concatenate(chains)
    mean = allx.mean()
    bmeans, b = [], None
    for c in chains:
        b = max(1, int(math.isqrt(c.size)))
        a = c.size // b
        bmeans.append(c[: a * b].reshape(a, b).mean(axis=1))
    bm = np.concatenate(bmeans)
    if bm.size < 2:
        return float("nan"), float("nan")
    sigma2 = b * np.sum((bm - mean) ** 2) / (bm.size - 1)
    var = allx.var(ddof=1)
    if sigma2 <= 0:
        return 0.0, float(n_total)
    return float(math.sqrt(sigma2 / n_total)), float(n_total * var / sigma2)


@dataclass(frozen=True)
class ParamSummary:
    name: str
    mean: float
    sd: float
    lower: float
    upper: float
    psrf: float
    psrf_degenerate: bool
    mcse: float
    ess: float

    FIELDS = ("parameter", "mean", "sd", "lower", "upper", "psrf", "psrf_degenerate", "mcse", "ess")

    def row(self) -> list:
        return [self.name, self.mean, self.sd, self.lower, self.upper, self.psrf,
                int(self.psrf_degenerate), self.mcse, self.ess]


@dataclass
class PosteriorSummary:
    params: dict[str, ParamSummary] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ParamSummary:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def names(self) -> list[str]:
        return list(self.params)


def summarize(chains: list[Chain], params: list[str] | None = None) -> PosteriorSummary:
    """Pooled mean, SD, 95% interval, PSRF (NaN for a single chain), MC error and ESS."""
    if not chains or any(len(c) == 0 for c in chains):
        raise ValueError("need at least one non-empty chain")
    params = params or chains[0].params
    out = PosteriorSummary()
    for p in params:
        draws = [c[p] for c in chains]
        pooled = np.concatenate(draws)
        lo, hi = quantile_interval(pooled)
        if len(chains) >= 2:
            n = min(d.size for d in draws)
            r, degenerate = psrf(np.stack([d[:n] for d in draws]))
        else:
            r, degenerate = float("nan"), False
        se, ess = batch_means(draws)
        out.params[p] = ParamSummary(p, float(pooled.mean()), float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
                                     lo, hi, r, degenerate, se, ess)
    return out


@dataclass
class StudyScore:
    """Per-family metrics for one model: relative MSE, median width, coverage."""

    model: str
    mse: dict[str, float]
    relative_mse: dict[str, float]
    width: dict[str, float]
    coverage: dict[str, float]
    n_replicates: int


def _family_params(summary: PosteriorSummary, family: str) -> list[str]:
    prefix = FAMILIES[family]
    return [n for n in summary.names() if n.startswith(prefix)]


def score_study(replicates: list[tuple[dict, PosteriorSummary]], model: str = "",
                reference_mse: dict[str, float] | None = None) -> StudyScore:
    """Score posterior summaries against known truth over replicates and occasions.

    ``relative_mse`` divides by ``reference_mse`` (the one-sided model in the
    simulation study); without a reference it equals 1 where defined.
    """
    if not replicates:
        raise ValueError("no replicates to score")
    mse, width, cover, rel = {}, {}, {}, {}
    for fam in FAMILIES:
        err, w, hit = [], [], []
        for truth, summ in replicates:
            for name in _family_params(summ, fam):
                s = summ[name]
                t = truth[name]
                err.append((s.mean - t) ** 2)
                w.append(s.upper - s.lower)
                hit.append(s.lower <= t <= s.upper)
        if not err:
            continue
        mse[fam] = float(np.mean(err))
        width[fam] = float(np.median(w))
        cover[fam] = float(np.mean(hit))
        ref = (reference_mse or mse)[fam]
        rel[fam] = mse[fam] / ref if ref > 0 else float("nan")
    return StudyScore(model, mse, rel, width, cover, len(replicates))


def score_models(results: dict[str, list[tuple[dict, PosteriorSummary]]], reference: str) -> dict[str, StudyScore]:
    """Score several models on the same replicates, MSE relative to ``reference``."""
    ref = score_study(results[reference], reference)
    return {m: score_study(r, m, ref.mse) for m, r in results.items()}


@dataclass
class PriorPredictiveN:
    N: np.ndarray
    n_attempts: int
    acceptance_rate: float


def prior_predictive_N(n_observed: int, min_n: int, T: int, rng: np.random.Generator,
                       prior: PriorConfig | None = None, n_samples: int = 1000,
                       max_attempts: int = 200_000, rho=None, batch: int = 1000) -> PriorPredictiveN:
    """Prior distribution of N given ``n_observed`` observed histories and N >= ``min_n``.

    Rejection sampler: draw theta from the prior, simulate captured individuals
    until at least ``n_observed`` histories exist, keep N when the total is
    exactly ``n_observed`` and N >= ``min_n``. ``rho`` fixes the event layer.
    """
    prior = prior or PriorConfig(u_max=n_observed)
    kept, attempts, batch_acc = [], 0, 0
    while len(kept) < n_samples and attempts < max_attempts:
        theta = draw_prior_theta(T, prior, rng, rho)
        inds, records, _ = collect(lambda: simulate_captured(theta, rng), n_observed)
        attempts += 1
        if len(records) == n_observed and len(inds) >= min_n:
            kept.append(len(inds))
            batch_acc += 1
        if attempts % batch == 0:
            log.info("prior predictive: %d/%d accepted in last batch (%d kept)", batch_acc, batch, len(kept))
            batch_acc = 0
    if not kept:
        raise RuntimeError(f"no prior-predictive draws matched after {attempts} attempts (acceptance rate 0)")
    return PriorPredictiveN(np.asarray(kept), attempts, len(kept) / attempts)


def minimum_n_from_counts(n_observed: int, n_left_total: int, n_right_total: int) -> int:
    return n_observed - min(n_left_total, n_right_total)

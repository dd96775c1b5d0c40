"""Replicated simulation study comparing the two-sided, one-sided and
combined-inference estimators."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import Side, collapse_one_sided, combine_chain_sets, fit_one_sided, fit_two_sided
from .diagnostics import PosteriorSummary, StudyScore, score_models, summarize
from .sampler import SamplerConfig
from .simulator import SimScenario, simulate_dataset, truth_values

log = logging.getLogger(__name__)

MODELS = ("one-sided", "two-sided", "combined")


def derive_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def replicate_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Replicate r uses child r; its children are (data, two-sided, left, right)."""
    return np.random.SeedSequence(seed).spawn(n)


@dataclass
class ReplicateResult:
    index: int
    truth: dict[str, float]
    summaries: dict[str, PosteriorSummary]
    n_observed: int
    n_children: int


def run_replicate(scenario: SimScenario, cfg: SamplerConfig, seq: np.random.SeedSequence,
                  index: int = 0) -> ReplicateResult:
    data_seq, ts_seq, left_seq, right_seq = seq.spawn(4)
    sim = simulate_dataset(scenario, np.random.default_rng(data_seq))
    truth = truth_values(sim.theta, sim.true_N)
    two = fit_two_sided(sim.observed, replace(cfg, seed=derive_seed(ts_seq)))
    left = fit_one_sided(collapse_one_sided(sim.observed, Side.LEFT), replace(cfg, seed=derive_seed(left_seq)))
    right = fit_one_sided(collapse_one_sided(sim.observed, Side.RIGHT), replace(cfg, seed=derive_seed(right_seq)))
    combined = combine_chain_sets(left, right)
    summaries = {
        "two-sided": summarize(two),
        "one-sided": summarize(left),
        "one-sided-right": summarize(right),
        "combined": summarize(combined),
    }
    n_children = sim.observed.n_left * sim.observed.n_right
    return ReplicateResult(index, truth, summaries, sim.observed.total, n_children)


def _job(args):
    return run_replicate(*args)


@dataclass
class StudyResult:
    replicates: list[ReplicateResult]
    scores: dict[str, StudyScore] = field(default_factory=dict)

    def pairs(self, model: str) -> list[tuple[dict, PosteriorSummary]]:
        return [(r.truth, r.summaries[model]) for r in self.replicates]


def run_study(scenario: SimScenario, cfg: SamplerConfig, n_replicates: int, seed: int,
              workers: int = 1, reference: str = "one-sided") -> StudyResult:
    seqs = replicate_seeds(seed, n_replicates)
    jobs = [(scenario, cfg, s, i) for i, s in enumerate(seqs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(_job, jobs))
    else:
        reps = []
        for j in jobs:
            reps.append(_job(j))
            log.info("replicate %d/%d done", len(reps), n_replicates)
    result = StudyResult(reps)
    result.scores = score_models({m: result.pairs(m) for m in MODELS}, reference)
    return result

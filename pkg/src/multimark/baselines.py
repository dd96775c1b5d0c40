"""Comparison estimators: one-sided fits and inverse-variance combined inference."""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .histories import EncounterHistory, Event, ObservedData, _as_history
from .sampler import Chain, FitProblem, SamplerConfig, run_chains


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"


_SEEN = {
    Side.LEFT: frozenset({Event.L, Event.S, Event.B}),
    Side.RIGHT: frozenset({Event.R, Event.S, Event.B}),
}


@dataclass(frozen=True)
class BinaryData:
    """Unique 0/1 capture histories with counts."""

    histories: tuple[str, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if not self.histories:
            raise ValueError("no capture histories")
        T = len(self.histories[0])
        for h, c in zip(self.histories, self.counts):
            if len(h) != T or set(h) - {"0", "1"} or "1" not in h:
                raise ValueError(f"invalid binary history {h!r}")
            if c < 1:
                raise ValueError("counts must be positive")

    @property
    def T(self) -> int:
        return len(self.histories[0])

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def code_matrix(self) -> np.ndarray:
        return np.array([[int(ch) for ch in h] for h in self.histories], dtype=np.int8)


def collapse_one_sided(data, side: Side | str) -> BinaryData:
    """Keep the occasions on which ``side`` was photographed.

    ``data`` is an ObservedData, or an iterable of histories (one per record),
    or of (history, count) pairs. Histories that never show ``side`` are dropped.
    """
    side = Side(side)
    seen = _SEEN[side]
    if isinstance(data, ObservedData):
        records = zip(data.histories, data.counts)
    elif isinstance(data, BinaryData):
        records = zip(data.histories, data.counts)
    else:
        records = (r if isinstance(r, tuple) else (r, 1) for r in data)
    merged: OrderedDict[str, int] = OrderedDict()
    for h, c in records:
        if isinstance(h, str) and set(h) <= {"0", "1"}:
            b = h  # already binary
        else:
            b = "".join("1" if e in seen else "0" for e in _as_history(h).events)
        if "1" in b:
            merged[b] = merged.get(b, 0) + int(c)
    return BinaryData(tuple(merged), tuple(merged.values()))


def fit_one_sided(binary: BinaryData, cfg: SamplerConfig, workers: int = 1) -> list[Chain]:
    """LBJS fit without an event layer; the latent update has no children."""
    return run_chains(FitProblem.one_sided(binary.code_matrix(), binary.counts), cfg, workers)


def fit_two_sided(data: ObservedData, cfg: SamplerConfig, workers: int = 1) -> list[Chain]:
    return run_chains(FitProblem.two_sided(data), cfg, workers)


def pooled_variance(chains: Iterable[Chain], param: str) -> float:
    return float(np.var(np.concatenate([c[param] for c in chains]), ddof=1))


def combine_draws(left: np.ndarray, right: np.ndarray, var_left: float, var_right: float) -> np.ndarray:
    """Per-iteration inverse-variance weighted average of two chains."""
    left, right = np.asarray(left, float), np.asarray(right, float)
    if left.shape != right.shape:
        raise ValueError("chains to combine must have equal retained lengths")
    total = var_left + var_right
    if total <= 0:
        raise ValueError("both chains have zero variance; weights are undefined")
    # written as a step from the left draw so a zero-variance side is reproduced exactly
    return left + (var_left / total) * (right - left)


def combine_chains(left: Chain | list[Chain], right: Chain | list[Chain], param: str) -> list[np.ndarray]:
    """Combined draws of one parameter, chain i of the left paired with chain i of the right.

    Variances are estimated from all retained draws of each side.
    """
    left = [left] if isinstance(left, Chain) else list(left)
    right = [right] if isinstance(right, Chain) else list(right)
    if len(left) != len(right):
        raise ValueError("need the same number of left and right chains")
    for c in left + right:
        if param not in c:
            raise KeyError(f"parameter {param!r} missing from a chain")
    vl, vr = pooled_variance(left, param), pooled_variance(right, param)
    return [combine_draws(a[param], b[param], vl, vr) for a, b in zip(left, right)]


COMBINED_EXCLUDE = ("N", "log_posterior")


def combine_chain_sets(left: list[Chain], right: list[Chain]) -> list[Chain]:
    """Combined-inference chains for every parameter shared by both sides
    (N and the log posterior are side-specific and dropped)."""
    params = [p for p in left[0].params if p in right[0] and p not in COMBINED_EXCLUDE]
    per_param = {p: combine_chains(left, right, p) for p in params}
    out = []
    for i, (a, b) in enumerate(zip(left, right)):
        if not np.array_equal(a.sweeps, b.sweeps):
            raise ValueError("left and right chains record different sweeps")
        values = np.column_stack([per_param[p][i] for p in params])
        out.append(Chain(["sweep"] + params, a.sweeps.copy(), values, {"chain": i, "model": "combined"}))
    return out

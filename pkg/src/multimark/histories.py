"""Encounter-history algebra for two-mark (left/right) photo-identification data.

Each capture occasion records one of five events:

    0  not encountered
    L  photographed from the left only
    R  photographed from the right only
    S  photographed from both sides simultaneously at least once
    B  photographed from both sides, never simultaneously

A history without any S that shows both sides cannot be linked in the field
and is observed as two separate histories (its left and right views).
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

INT64_MAX = np.iinfo(np.int64).max


class Event(enum.IntEnum):
    ZERO = 0
    L = 1
    R = 2
    S = 3
    B = 4

    @property
    def symbol(self) -> str:
        return "0LRSB"[self]

    @classmethod
    def from_symbol(cls, ch: str) -> "Event":
        try:
            return cls("0LRSB".index(ch))
        except ValueError:
            raise ValueError(f"invalid event character {ch!r}") from None


class ObservedClass(enum.Enum):
    LEFT_ONLY = "left-only"
    RIGHT_ONLY = "right-only"
    SIMULTANEOUS = "simultaneous"
    UNOBSERVABLE = "unobservable"


@dataclass(frozen=True, order=True)
class EncounterHistory:
    """Immutable per-occasion event sequence for one individual."""

    events: tuple[Event, ...]

    def __post_init__(self):
        if len(self.events) == 0:
            raise ValueError("an encounter history needs at least one occasion")
        object.__setattr__(self, "events", tuple(Event(e) for e in self.events))

    @classmethod
    def from_string(cls, text: str) -> "EncounterHistory":
        return cls(tuple(Event.from_symbol(ch) for ch in text))

    def __str__(self) -> str:
        return "".join(e.symbol for e in self.events)

    def __repr__(self) -> str:
        return f"EncounterHistory('{self}')"

    def __len__(self) -> int:
        return len(self.events)

    @property
    def T(self) -> int:
        return len(self.events)

    @property
    def is_zero(self) -> bool:
        return all(e == Event.ZERO for e in self.events)

    @property
    def first(self) -> int:
        """0-based index of the first non-zero occasion."""
        for t, e in enumerate(self.events):
            if e != Event.ZERO:
                return t
        raise ValueError("all-zero history has no first capture")

    @property
    def last(self) -> int:
        """0-based index of the last non-zero occasion."""
        for t in range(self.T - 1, -1, -1):
            if self.events[t] != Event.ZERO:
                return t
        raise ValueError("all-zero history has no last capture")

    def codes(self) -> np.ndarray:
        return np.array([int(e) for e in self.events], dtype=np.int8)


def parse_history(text: str, T: int | None = None) -> EncounterHistory:
    text = text.strip()
    if T is not None and len(text) != T:
        raise ValueError(f"history {text!r} has length {len(text)}, expected {T}")
    return EncounterHistory.from_string(text)


def _as_history(h) -> EncounterHistory:
    return h if isinstance(h, EncounterHistory) else EncounterHistory.from_string(str(h))


def classify(h: EncounterHistory | str) -> ObservedClass:
    h = _as_history(h)
    if h.is_zero:
        raise ValueError("the all-zero history cannot be classified")
    present = set(h.events)
    if Event.S in present:
        return ObservedClass.SIMULTANEOUS
    if Event.B in present or (Event.L in present and Event.R in present):
        return ObservedClass.UNOBSERVABLE
    if Event.L in present:
        return ObservedClass.LEFT_ONLY
    return ObservedClass.RIGHT_ONLY


def split_unobservable(h: EncounterHistory | str) -> tuple[EncounterHistory, EncounterHistory]:
    """Return the (left view, right view) an unlinkable history is observed as."""
    h = _as_history(h)
    if classify(h) is not ObservedClass.UNOBSERVABLE:
        raise ValueError(f"{h} is observable and does not split")
    left = tuple(Event.L if e in (Event.L, Event.B) else Event.ZERO for e in h.events)
    right = tuple(Event.R if e in (Event.R, Event.B) else Event.ZERO for e in h.events)
    return EncounterHistory(left), EncounterHistory(right)


_COMBINE = {
    (Event.ZERO, Event.ZERO): Event.ZERO,
    (Event.L, Event.ZERO): Event.L,
    (Event.ZERO, Event.R): Event.R,
    (Event.L, Event.R): Event.B,
}


def combine(left: EncounterHistory | str, right: EncounterHistory | str) -> EncounterHistory:
    """Child true history produced by a left-only and a right-only parent."""
    left, right = _as_history(left), _as_history(right)
    if left.T != right.T:
        raise ValueError("parents must have the same number of occasions")
    if classify(left) is not ObservedClass.LEFT_ONLY:
        raise ValueError(f"{left} is not a left-only history")
    if classify(right) is not ObservedClass.RIGHT_ONLY:
        raise ValueError(f"{right} is not a right-only history")
    return EncounterHistory(tuple(_COMBINE[pair] for pair in zip(left.events, right.events)))


def count_history_spaces(T: int) -> tuple[int, int, int]:
    """Sizes of the true, observable and unobservable history spaces for T occasions.

    Returns ``(K, L, null_dim)`` with ``K = 5**T - 1`` nonzero true histories,
    ``L`` observable histories and ``null_dim = K - L`` unobservable ones.
    Raises OverflowError when K does not fit in a signed 64-bit count.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    K = 5**T - 1
    L = (5**T - 1) - (4**T - 1) + 2 * (2**T - 1)
    null_dim = (4**T - 1) - 2 * (2**T - 1)
    if K > INT64_MAX:
        raise OverflowError(f"5**{T} - 1 exceeds the 64-bit count range")
    return K, L, null_dim


@dataclass(frozen=True)
class ObservedData:
    """Unique observed histories with their counts, ordered left-only,
    right-only, then simultaneous."""

    histories: tuple[EncounterHistory, ...]
    counts: tuple[int, ...]
    n_left: int
    n_right: int
    n_simultaneous: int

    def __post_init__(self):
        if len(self.histories) != len(self.counts):
            raise ValueError("histories and counts differ in length")
        if not self.histories:
            raise ValueError("no observed histories")
        if len(set(self.histories)) != len(self.histories):
            raise ValueError("observed histories must be unique")
        T = self.histories[0].T
        expected = (
            [ObservedClass.LEFT_ONLY] * self.n_left
            + [ObservedClass.RIGHT_ONLY] * self.n_right
            + [ObservedClass.SIMULTANEOUS] * self.n_simultaneous
        )
        if len(expected) != len(self.histories):
            raise ValueError("class sizes do not add up to the number of histories")
        for h, c, cls in zip(self.histories, self.counts, expected):
            if h.T != T:
                raise ValueError(f"history {h} has {h.T} occasions, expected {T}")
            if h.is_zero:
                raise ValueError("the all-zero history cannot be observed")
            if classify(h) is not cls:
                raise ValueError(f"history {h} is {classify(h).value}, expected {cls.value}")
            if int(c) < 1:
                raise ValueError(f"count for {h} must be positive")

    @classmethod
    def from_records(cls, records: Iterable[tuple[EncounterHistory | str, int]]) -> "ObservedData":
        """Build from (history, count) pairs; duplicates are merged by summing
        counts and classes keep first-appearance order."""
        merged: OrderedDict[EncounterHistory, int] = OrderedDict()
        T = None
        for h, c in records:
            h = _as_history(h)
            if T is None:
                T = h.T
            elif h.T != T:
                raise ValueError(f"history {h} has {h.T} occasions, expected {T}")
            if h.is_zero:
                raise ValueError("the all-zero history cannot be observed")
            if classify(h) is ObservedClass.UNOBSERVABLE:
                raise ValueError(f"history {h} is unobservable and cannot appear in data")
            if int(c) < 1:
                raise ValueError(f"count for {h} must be positive")
            merged[h] = merged.get(h, 0) + int(c)
        groups = {k: [] for k in (ObservedClass.LEFT_ONLY, ObservedClass.RIGHT_ONLY, ObservedClass.SIMULTANEOUS)}
        for h, c in merged.items():
            groups[classify(h)].append((h, c))
        ordered = (
            groups[ObservedClass.LEFT_ONLY]
            + groups[ObservedClass.RIGHT_ONLY]
            + groups[ObservedClass.SIMULTANEOUS]
        )
        return cls(
            histories=tuple(h for h, _ in ordered),
            counts=tuple(c for _, c in ordered),
            n_left=len(groups[ObservedClass.LEFT_ONLY]),
            n_right=len(groups[ObservedClass.RIGHT_ONLY]),
            n_simultaneous=len(groups[ObservedClass.SIMULTANEOUS]),
        )

    @classmethod
    def from_strings(cls, histories: Sequence[str], counts: Sequence[int] | None = None) -> "ObservedData":
        if counts is None:
            counts = [1] * len(histories)
        return cls.from_records(zip(histories, counts))

    @property
    def T(self) -> int:
        return self.histories[0].T

    @property
    def n_unique(self) -> int:
        return len(self.histories)

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def f(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=np.int64)

    def minimum_n(self) -> int:
        """Smallest number of distinct individuals consistent with the data.

        Every left-only capture can be linked to at most one right-only
        capture, so at most ``min(left total, right total)`` pairs merge.
        """
        f = self.f
        left = int(f[: self.n_left].sum())
        right = int(f[self.n_left : self.n_left + self.n_right].sum())
        return self.total - min(left, right)


@dataclass(frozen=True, eq=False)
class LatentStructure:
    """Compatible true histories: the observed ones followed by every
    left-only x right-only child, right parent outer and left parent inner."""

    histories: tuple[EncounterHistory, ...]
    n_observed: int
    left_parent: np.ndarray = field(repr=False)
    right_parent: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.histories)

    @property
    def n_children(self) -> int:
        return self.K - self.n_observed

    def code_matrix(self) -> np.ndarray:
        return np.array([h.codes() for h in self.histories], dtype=np.int8)

    def constraint_matrix(self) -> np.ndarray:
        """The K' x L' 0/1 matrix A with f = A'x."""
        A = np.zeros((self.K, self.n_observed), dtype=np.int64)
        A[np.arange(self.n_observed), np.arange(self.n_observed)] = 1
        kids = np.arange(self.n_observed, self.K)
        A[kids, self.left_parent] = 1
        A[kids, self.right_parent] = 1
        return A

    def constraint_strings(self) -> list[str]:
        """Human-readable constraints with 1-based indices, e.g. ``f_1 = x_1 + x_7 + x_9``."""
        A = self.constraint_matrix()
        out = []
        for j in range(self.n_observed):
            terms = " + ".join(f"x_{k + 1}" for k in np.flatnonzero(A[:, j]))
            out.append(f"f_{j + 1} = {terms}")
        return out

    def child_bounds(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        return np.minimum(f[self.left_parent], f[self.right_parent])


def build_latent_structure(data: ObservedData) -> LatentStructure:
    n_obs = data.n_unique
    lefts = range(data.n_left)
    rights = range(data.n_left, data.n_left + data.n_right)
    children, lpar, rpar = [], [], []
    for j in rights:
        for i in lefts:
            children.append(combine(data.histories[i], data.histories[j]))
            lpar.append(i)
            rpar.append(j)
    return LatentStructure(
        histories=tuple(data.histories) + tuple(children),
        n_observed=n_obs,
        left_parent=np.asarray(lpar, dtype=np.int64),
        right_parent=np.asarray(rpar, dtype=np.int64),
    )


def history_codes(histories: Sequence[EncounterHistory]) -> np.ndarray:
    return np.array([h.codes() for h in histories], dtype=np.int8)

"""Lazy best-first enumeration of the beam x V1 x ... x Vn extension grid.

Each model's sorted candidate list forms one grid dimension per beam item;
a stalled model contributes the single empty transition, shrinking its
dimension to size one. A max-heap walks cells in score order, moving to
neighbors by incrementing exactly one vocabulary rank at a time (never the
beam index), and an agreement filter decides which popped cells survive.

Cell scores are the weighted sum of length-normalized per-model totals.
Because every dimension is sorted and weights are nonnegative, a neighbor
never outscores its parent, so the popped-score sequence is non-increasing;
this is asserted on every run.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agreement import HypothesisString, agrees


def combined_score(
    weights: Sequence[float], scores_and_lengths: Sequence[tuple[float, int]]
) -> float:
    """Weighted sum of length-normalized model scores.

    Length is the token count of the model's local hypothesis including the
    proposed token (EOS counts, the empty transition adds nothing). Zero-
    weight models vanish entirely, so their scores may be anything. Length
    0 only occurs before the first step and is normalized as 1.
    """
    total = 0.0
    for lam, (cum, length) in zip(weights, scores_and_lengths, strict=True):
        if lam == 0.0:
            continue
        if length < 0:
            raise ValueError("negative hypothesis length")
        total += lam * (cum / max(length, 1))
    return total


@dataclass(frozen=True)
class Candidate:
    """One grid cell: a beam item plus one sorted-list rank per model."""

    beam: int
    ranks: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class GridDim:
    """One model's dimension within one beam item.

    ``ids``/``totals`` hold only the finite-score prefix of the model's
    sorted step result: a zero-probability extension can never be part of
    a real hypothesis, so those cells are excluded from the search space.
    ``weighted`` caches weight * (total / length) for fast cell scoring.
    """

    ids: np.ndarray
    totals: np.ndarray
    weighted: np.ndarray | None  # None for zero-weight models
    length_after: int
    base_bytes: bytes
    base_terminated: bool
    stalled: bool
    piece_bytes: Sequence[bytes]
    eos_id: int

    def __len__(self) -> int:
        return len(self.ids)

    def hypothesis_at(self, rank: int) -> HypothesisString:
        if self.stalled:
            return HypothesisString(self.base_bytes, self.base_terminated)
        tok = int(self.ids[rank])
        return HypothesisString(
            self.base_bytes + self.piece_bytes[tok], tok == self.eos_id
        )


@dataclass
class Grid:
    """All dimensions for the current timestep: items[beam][model]."""

    items: list[list[GridDim]]

    @property
    def num_models(self) -> int:
        return len(self.items[0]) if self.items else 0

    def seedable(self, beam: int) -> bool:
        return all(len(dim) > 0 for dim in self.items[beam])

    def cell_score(self, beam: int, ranks: Sequence[int]) -> float:
        total = 0.0
        for dim, rank in zip(self.items[beam], ranks):
            if dim.weighted is not None:
                total += float(dim.weighted[rank])
        return total

    def hypotheses(self, beam: int, ranks: Sequence[int]) -> list[HypothesisString]:
        return [
            dim.hypothesis_at(rank) for dim, rank in zip(self.items[beam], ranks)
        ]

    def agrees_at(self, beam: int, ranks: Sequence[int]) -> bool:
        return agrees(self.hypotheses(beam, ranks))


def make_grid_dim(
    ids: np.ndarray,
    totals: np.ndarray,
    *,
    weight: float,
    length_after: int,
    base_bytes: bytes,
    base_terminated: bool,
    stalled: bool,
    piece_bytes: Sequence[bytes],
    eos_id: int,
) -> GridDim:
    """Trim zero-probability entries and precompute weighted-normalized totals.

    Totals are sorted descending, so the non-finite entries form a suffix.
    The weighted cache repeats combined_score's per-term arithmetic exactly
    (weight * (total / length)) to keep scores bit-identical either way.
    """
    finite = int(np.isfinite(totals).sum())
    ids = ids[:finite]
    totals = totals[:finite]
    weighted = None
    if weight != 0.0:
        weighted = weight * (totals / float(max(length_after, 1)))
    return GridDim(
        ids=ids,
        totals=totals,
        weighted=weighted,
        length_after=length_after,
        base_bytes=base_bytes,
        base_terminated=base_terminated,
        stalled=stalled,
        piece_bytes=piece_bytes,
        eos_id=eos_id,
    )


@dataclass
class Frontier:
    """Max-priority queue over candidates plus the visited set.

    Ties break lexicographically on (beam, ranks). A cell is marked visited
    when pushed, so no (beam, ranks) ever enters the heap twice. The pop
    counter and popped-score log persist across next_agreeing calls within
    a timestep, which is what the per-timestep pop cap is measured against.
    """

    _heap: list[tuple[float, int, tuple[int, ...]]] = field(default_factory=list)
    visited: set[tuple[int, tuple[int, ...]]] = field(default_factory=set)
    pops: int = 0
    popped_scores: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, beam: int, ranks: tuple[int, ...], score: float) -> bool:
        key = (beam, ranks)
        if key in self.visited:
            return False
        self.visited.add(key)
        heapq.heappush(self._heap, (-score, beam, ranks))
        return True

    def pop(self) -> Candidate | None:
        if not self._heap:
            return None
        neg, beam, ranks = heapq.heappop(self._heap)
        score = -neg
        if self.popped_scores:
            assert score <= self.popped_scores[-1], (
                f"monotone-pop violation: {score} after {self.popped_scores[-1]}"
            )
        self.popped_scores.append(score)
        self.pops += 1
        return Candidate(beam, ranks, score)


def seed(frontier: Frontier, grid: Grid) -> None:
    """Push the all-ranks-0 corner of every seedable beam item."""
    if len(frontier) or frontier.pops:
        raise ValueError("seed expects an empty frontier")
    for b in range(len(grid.items)):
        if not grid.seedable(b):
            continue
        ranks = (0,) * grid.num_models
        frontier.push(b, ranks, grid.cell_score(b, ranks))


def neighbors(candidate: Candidate, grid: Grid) -> list[Candidate]:
    """Increment exactly one vocabulary rank; the beam index never changes."""
    out = []
    dims = grid.items[candidate.beam]
    for i, dim in enumerate(dims):
        nxt = candidate.ranks[i] + 1
        if nxt >= len(dim):
            continue
        ranks = candidate.ranks[:i] + (nxt,) + candidate.ranks[i + 1 :]
        out.append(Candidate(candidate.beam, ranks, grid.cell_score(candidate.beam, ranks)))
    return out


def next_agreeing(
    frontier: Frontier,
    grid: Grid,
    needed: int,
    pop_cap: int | None = None,
) -> list[Candidate]:
    """Pop best-first until ``needed`` agreeing cells are found.

    Every popped cell pushes its unvisited neighbors before the next pop,
    whether or not it agrees; this keeps the enumeration complete when the
    caller comes back for more. Returns fewer than ``needed`` candidates
    when the heap runs dry or the pop budget is spent -- an empty result is
    the search-exhausted signal, and the caller decides the fallback.
    """
    found: list[Candidate] = []
    while len(found) < needed:
        if pop_cap is not None and frontier.pops >= pop_cap:
            break
        candidate = frontier.pop()
        if candidate is None:
            break
        for nb in neighbors(candidate, grid):
            frontier.push(nb.beam, nb.ranks, nb.score)
        if grid.agrees_at(candidate.beam, candidate.ranks):
            found.append(candidate)
    return found

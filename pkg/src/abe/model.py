"""Model adapters, immutable decoding state, and in-process toy models.

An adapter exposes one thing: the next-token log distribution given a
token prefix (plus opaque conditioning it may ignore). Everything else --
sorting, stalling, scoring -- happens here, uniformly for every adapter.
Scores are natural-log probabilities everywhere.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import InvalidTokenError
from .vocab import Vocabulary, vocabulary_from_dict, vocabulary_to_dict, file_surface

#: Reserved dummy id for the empty transition of a stalled model.
#: Never present in any vocabulary.
EPSILON_ID = -1


@dataclass(frozen=True)
class ModelState:
    """One model's local hypothesis: token ids plus running log-probability."""

    token_ids: tuple[int, ...] = ()
    cum_logprob: float = 0.0
    stalled: bool = False
    terminated: bool = False

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class StepResult:
    """Full next-step candidate list, sorted by total score descending.

    ``totals[i]`` is the state's cumulative log-probability plus the token
    log-probability of ``ids[i]``. Ties are broken by ascending token id so
    results are reproducible across runs and platforms. A stalled step is
    the single entry (EPSILON_ID, unchanged cumulative score).
    """

    ids: np.ndarray
    totals: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def entry(self, rank: int) -> tuple[int, float]:
        return int(self.ids[rank]), float(self.totals[rank])


class ModelAdapter(abc.ABC):
    """Anything that can report next-token log-probabilities."""

    @property
    @abc.abstractmethod
    def vocabulary(self) -> Vocabulary: ...

    @property
    @abc.abstractmethod
    def identity(self) -> str: ...

    @abc.abstractmethod
    def next_logprobs(self, prefix: Sequence[int], conditioning: Any = None) -> np.ndarray:
        """Dense log-distribution over the full vocabulary, logsumexp ~ 0."""

    def score_sequence(self, ids: Sequence[int], conditioning: Any = None) -> float:
        """Sum of stepwise log-probabilities; adapters may override."""
        total = 0.0
        prefix: list[int] = []
        for tok in ids:
            lp = self.next_logprobs(prefix, conditioning)
            if not 0 <= tok < len(lp):
                raise InvalidTokenError(
                    f"token id {tok} out of range for {self.identity}"
                )
            total += float(lp[tok])
            prefix.append(tok)
        return total


def step(adapter: ModelAdapter, state: ModelState, conditioning: Any = None) -> StepResult:
    """One forward step: totals = cum_logprob + log p(token | prefix), sorted."""
    if state.terminated:
        raise ValueError("cannot step a terminated state")
    logprobs = np.asarray(
        adapter.next_logprobs(state.token_ids, conditioning), dtype=np.float64
    )
    totals = state.cum_logprob + logprobs
    ids = np.arange(len(totals), dtype=np.int64)
    order = np.lexsort((ids, -totals))
    return StepResult(ids=ids[order], totals=totals[order])


def stalled_distribution(state: ModelState) -> StepResult:
    """The stalled model's whole search dimension: a single empty transition.

    No forward step is taken and the hypothesis score is unaltered; the
    dummy id stands in for the empty string.
    """
    if not state.stalled:
        raise ValueError("stalled_distribution called on an unstalled state")
    return StepResult(
        ids=np.array([EPSILON_ID], dtype=np.int64),
        totals=np.array([state.cum_logprob], dtype=np.float64),
    )


def sequence_score(adapter: ModelAdapter, ids: Sequence[int], conditioning: Any = None) -> float:
    """Log-probability of a full token sequence under the adapter (nats)."""
    return adapter.score_sequence(ids, conditioning)


def extend(state: ModelState, token: int, logprob: float, eos_id: int | None = None) -> ModelState:
    """Append one token to an immutable state; EOS terminates it."""
    if state.terminated:
        raise ValueError("cannot extend a terminated state")
    if token == EPSILON_ID:
        raise ValueError("EPSILON is not a real token; stalled states are left unchanged")
    return ModelState(
        token_ids=state.token_ids + (token,),
        cum_logprob=state.cum_logprob + logprob,
        stalled=False,
        terminated=eos_id is not None and token == eos_id,
    )


# -- toy models ---------------------------------------------------------------


def _log(probs: np.ndarray) -> np.ndarray:
    out = np.full(len(probs), -np.inf, dtype=np.float64)
    np.log(probs, out=out, where=probs > 0)
    return out


class ScenarioModel(ModelAdapter):
    """Table-driven test model: explicit distribution per token-id context.

    Rows map a context (the exact local token-id sequence) to a dense
    probability row over the vocabulary; unseen contexts use the default
    row. Each row must sum to 1 within 1e-9.
    """

    def __init__(
        self,
        vocabulary: Vocabulary,
        rows: Mapping[tuple[int, ...], np.ndarray],
        default: np.ndarray | None = None,
        identity: str = "scenario",
    ) -> None:
        self._vocab = vocabulary
        self._rows = {
            tuple(ctx): self._check_row(np.asarray(row, dtype=np.float64))
            for ctx, row in rows.items()
        }
        self._default = (
            self._check_row(np.asarray(default, dtype=np.float64))
            if default is not None
            else None
        )
        self._identity = identity

    def _check_row(self, row: np.ndarray) -> np.ndarray:
        if len(row) != self._vocab.size:
            raise ValueError(f"row length {len(row)} != vocabulary size {self._vocab.size}")
        if abs(float(row.sum()) - 1.0) > 1e-9:
            raise ValueError(f"row sums to {row.sum()!r}, expected 1")
        if (row < 0).any():
            raise ValueError("negative probability in row")
        row.setflags(write=False)
        return row

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def identity(self) -> str:
        return self._identity

    def next_logprobs(self, prefix: Sequence[int], conditioning: Any = None) -> np.ndarray:
        row = self._rows.get(tuple(prefix))
        if row is None:
            if self._default is None:
                raise KeyError(f"no row for context {tuple(prefix)} and no default row")
            row = self._default
        return _log(row)


class ByteNgramModel(ModelAdapter):
    """Add-alpha smoothed byte n-gram toy model.

    The vocabulary is one normal piece per alphabet byte plus EOS. Counts
    come from training strings (each contributes its byte transitions and
    one final EOS event); smoothing keeps every distribution strictly
    positive so fuzzing never meets log(0).
    """

    def __init__(
        self,
        alphabet: bytes,
        training: Sequence[bytes] = (),
        order: int = 2,
        alpha: float = 0.1,
        identity: str | None = None,
    ) -> None:
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet bytes must be unique")
        from .vocab import build_vocabulary

        self._vocab = build_vocabulary([bytes([b]) for b in alphabet])
        self._order = order
        self._alpha = float(alpha)
        self._byte_to_id = {b: i for i, b in enumerate(alphabet)}
        self._counts: dict[tuple[int, ...], np.ndarray] = {}
        for text in training:
            ids = [self._byte_to_id[b] for b in text] + [self._vocab.eos_id]
            for t, tok in enumerate(ids):
                ctx = tuple(ids[max(0, t - order + 1) : t])
                row = self._counts.setdefault(ctx, np.zeros(self._vocab.size))
                row[tok] += 1.0
        self._identity = identity or f"ngram{order}"

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def identity(self) -> str:
        return self._identity

    def next_logprobs(self, prefix: Sequence[int], conditioning: Any = None) -> np.ndarray:
        ctx = tuple(prefix[max(0, len(prefix) - self._order + 1) :])
        counts = self._counts.get(ctx)
        if counts is None:
            counts = np.zeros(self._vocab.size)
        smoothed = counts + self._alpha
        return _log(smoothed / smoothed.sum())


# -- scenario file schema -------------------------------------------------------
#
#   {"vocabulary": {...vocabulary schema...},
#    "rows": [{"context": [ids...], "dist": {"surface": prob, ...}}, ...],
#    "default": {"surface": prob, ...} | null}
#
# Distribution keys are piece surfaces exactly as written in the vocabulary
# file; they must resolve to a unique piece.


def _dist_to_row(vocab: Vocabulary, dist: Mapping[str, float]) -> np.ndarray:
    by_surface: dict[str, int] = {}
    ambiguous: set[str] = set()
    for p in vocab.pieces:
        s = file_surface(p)
        if s in by_surface:
            ambiguous.add(s)
        else:
            by_surface[s] = p.id
    row = np.zeros(vocab.size)
    for surface, prob in dist.items():
        if surface in ambiguous:
            raise ValueError(f"distribution key {surface!r} is ambiguous in this vocabulary")
        if surface not in by_surface:
            raise ValueError(f"distribution key {surface!r} not in vocabulary")
        row[by_surface[surface]] = float(prob)
    return row


def _row_to_dist(vocab: Vocabulary, row: np.ndarray) -> dict[str, float]:
    return {
        file_surface(vocab.pieces[i]): float(p) for i, p in enumerate(row) if p > 0
    }


def scenario_to_dict(model: ScenarioModel) -> dict:
    return {
        "vocabulary": vocabulary_to_dict(model.vocabulary),
        "rows": [
            {"context": list(ctx), "dist": _row_to_dist(model.vocabulary, row)}
            for ctx, row in sorted(model._rows.items())
        ],
        "default": (
            _row_to_dist(model.vocabulary, model._default)
            if model._default is not None
            else None
        ),
    }


def scenario_from_dict(doc: dict, identity: str = "scenario") -> ScenarioModel:
    vocab = vocabulary_from_dict(doc["vocabulary"])
    rows = {
        tuple(entry["context"]): _dist_to_row(vocab, entry["dist"])
        for entry in doc.get("rows", [])
    }
    default = doc.get("default")
    return ScenarioModel(
        vocab,
        rows,
        default=_dist_to_row(vocab, default) if default else None,
        identity=identity,
    )


def load_scenario(path: str) -> ScenarioModel:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh), identity=f"scenario:{path}")


def save_scenario(model: ScenarioModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(model), fh, ensure_ascii=False)
        fh.write("\n")

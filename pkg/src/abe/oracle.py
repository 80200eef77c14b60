"""Brute-force reference decoder for small instances.

Exhaustively enumerates joint token sequences, pruning any partial state
whose local strings already disagree (disagreement on emitted bytes is
permanent, so pruning is sound). Shares only the vocabulary, agreement,
and scoring primitives with the real decoder -- none of the search or
beam machinery -- so it can serve as independent ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .agreement import HypothesisString, agrees
from .model import ModelAdapter
from .search import combined_score

MAX_VOCAB = 64
MAX_LEN = 8


@dataclass(frozen=True)
class JointHypothesis:
    """One completed joint hypothesis: all models terminated on one string."""

    text: bytes
    score: float
    token_ids: tuple[tuple[int, ...], ...]
    model_scores: tuple[float, ...]


@dataclass(frozen=True)
class OracleResult:
    ranked: tuple[JointHypothesis, ...]


@dataclass(frozen=True)
class _Local:
    ids: tuple[int, ...]
    cum: float
    bytes: bytes
    terminated: bool


def enumerate_joint(
    models: Sequence[ModelAdapter],
    conditioning: Any = None,
    weights: Sequence[float] | None = None,
    max_len: int = MAX_LEN,
    top: int | None = None,
) -> OracleResult:
    """Depth-first enumeration of every agreeing, terminated joint hypothesis.

    Interleaving order: always advance the unterminated model whose local
    string is currently shortest (ties: lowest model index). Any completion
    is reachable under this order and branching stays bounded. Instances
    must be small by contract: vocabulary sizes <= 64, max_len <= 8.
    """
    if not models:
        raise ValueError("enumerate_joint needs at least one model")
    for m in models:
        if m.vocabulary.size > MAX_VOCAB:
            raise ValueError(
                f"vocabulary of {m.identity} has {m.vocabulary.size} pieces; "
                f"oracle bound is {MAX_VOCAB}"
            )
    if max_len > MAX_LEN:
        raise ValueError(f"max_len {max_len} exceeds oracle bound {MAX_LEN}")
    n = len(models)
    if weights is None:
        weights = [1.0 / n] * n
    if conditioning is None:
        conds: list[Any] = [None] * n
    else:
        conds = list(conditioning)
    piece_bytes = [m.vocabulary.all_piece_bytes for m in models]
    eos_ids = [m.vocabulary.eos_id for m in models]

    completions: list[JointHypothesis] = []

    def recurse(locals_: list[_Local]) -> None:
        open_models = [i for i in range(n) if not locals_[i].terminated]
        if not open_models:
            score = combined_score(
                weights, [(l.cum, len(l.ids)) for l in locals_]
            )
            completions.append(
                JointHypothesis(
                    text=locals_[0].bytes,
                    score=score,
                    token_ids=tuple(l.ids for l in locals_),
                    model_scores=tuple(l.cum for l in locals_),
                )
            )
            return
        i = min(open_models, key=lambda j: (len(locals_[j].bytes), j))
        cur = locals_[i]
        if len(cur.ids) >= max_len:
            return  # this model can never terminate within the budget
        logprobs = np.asarray(models[i].next_logprobs(cur.ids, conds[i]))
        for tok in range(len(logprobs)):
            lp = float(logprobs[tok])
            if not np.isfinite(lp):
                continue  # zero-probability extensions are not generable
            nxt = _Local(
                ids=cur.ids + (tok,),
                cum=cur.cum + lp,
                bytes=cur.bytes + piece_bytes[i][tok],
                terminated=tok == eos_ids[i],
            )
            trial = locals_[:i] + [nxt] + locals_[i + 1 :]
            if agrees(
                HypothesisString(l.bytes, l.terminated) for l in trial
            ):
                recurse(trial)

    recurse([_Local((), 0.0, b"", False) for _ in range(n)])
    completions.sort(key=lambda h: (-h.score, h.text, h.token_ids))
    if top is not None:
        completions = completions[:top]
    return OracleResult(tuple(completions))

"""Comparison baselines: single-model beam search and classical interpolation.

Interpolation mixes distributions in probability space (a weighted
arithmetic mixture -- a log-space weighted sum would be a geometric
mixture, a different estimator) and only applies when all component
vocabularies are byte-identical. The resulting distribution behaves as if
it came from a single model, so interpolated decoding is just single-model
decoding of the mixture adapter.

decode_single uses the same length normalization and finished-hypothesis
policy as the ensemble decoder so that decoding a one-model ensemble and
decoding the model directly give identical strings and scores.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from .decoder import Hypothesis, empty_fallback
from .model import ModelAdapter, ModelState, StepResult, extend, step
from .vocab import Vocabulary


class InterpolationEnsemble(ModelAdapter):
    """Weighted probability-space mixture of same-vocabulary adapters."""

    def __init__(
        self, adapters: Sequence[ModelAdapter], weights: Sequence[float] | None = None
    ) -> None:
        if not adapters:
            raise ValueError("interpolation needs at least one adapter")
        vocab = adapters[0].vocabulary
        for a in adapters[1:]:
            if a.vocabulary != vocab:
                raise ValueError(
                    f"vocabulary mismatch: {a.identity} differs from {adapters[0].identity}"
                )
        if weights is None:
            weights = [1.0 / len(adapters)] * len(adapters)
        if len(weights) != len(adapters):
            raise ValueError(f"{len(weights)} weights for {len(adapters)} adapters")
        w = np.asarray(weights, dtype=np.float64)
        if (w < 0).any():
            raise ValueError("weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        # Zero-weight components are dropped outright so degenerate weights
        # reproduce the surviving model bit-for-bit.
        self._components = [
            (float(lam), a) for lam, a in zip(w, adapters) if lam > 0.0
        ]
        self._vocab = vocab
        self._identity = "interp(" + ",".join(a.identity for a in adapters) + ")"

    @property
    def vocabulary(self) -> Vocabulary:
        return self._vocab

    @property
    def identity(self) -> str:
        return self._identity

    def next_logprobs(self, prefix: Sequence[int], conditioning: Any = None) -> np.ndarray:
        if len(self._components) == 1 and self._components[0][0] == 1.0:
            return self._components[0][1].next_logprobs(prefix, conditioning)
        # log(sum_i lam_i * p_i) computed stably as logsumexp(log lam_i + lp_i).
        stacked = np.stack(
            [
                np.log(lam) + np.asarray(a.next_logprobs(prefix, conditioning))
                for lam, a in self._components
            ]
        )
        return np.logaddexp.reduce(stacked, axis=0)


def interpolate_step(
    ensemble: InterpolationEnsemble,
    states: ModelState | Sequence[ModelState],
    conditioning: Any = None,
) -> StepResult:
    """Sorted mixture step.

    Accepts either the ensemble's own running state or the per-model states
    of the shared hypothesis (which must all carry identical token ids; the
    mixture's cumulative score is not derivable from them, so totals are
    then plain mixture log-probabilities).
    """
    if isinstance(states, ModelState):
        state = states
    else:
        seq = list(states)
        if not seq:
            raise ValueError("interpolate_step needs at least one state")
        ids = seq[0].token_ids
        if any(s.token_ids != ids for s in seq):
            raise ValueError("per-model states disagree on token ids")
        state = ModelState(token_ids=ids, cum_logprob=0.0)
    return step(ensemble, state, conditioning)


def decode_single(
    model: ModelAdapter,
    conditioning: Any = None,
    beam_size: int = 5,
    max_len: int = 256,
) -> list[Hypothesis]:
    """Standard beam search with length-normalized scoring.

    Candidate order is (normalized score desc, beam item, vocabulary rank),
    zero-probability extensions are never taken, finished hypotheses retire
    from the beam and are backfilled, and running out of candidates with an
    empty finished pool yields the empty-string fallback.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    vocab = model.vocabulary
    beam: list[ModelState] = [ModelState()]
    finished: list[ModelState] = []
    while beam and len(finished) < beam_size:
        beam = [s for s in beam if len(s.token_ids) < max_len]
        if not beam:
            break
        candidates: list[tuple[float, int, int, int, float]] = []
        for item_idx, state in enumerate(beam):
            sr = step(model, state, conditioning)
            length = len(state.token_ids) + 1
            for rank in range(len(sr)):
                total = float(sr.totals[rank])
                if not np.isfinite(total):
                    break  # sorted: the rest of this row is -inf too
                candidates.append(
                    (total / length, item_idx, rank, int(sr.ids[rank]), total)
                )
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_beam: list[ModelState] = []
        for norm, item_idx, _rank, tok, total in candidates:
            if len(new_beam) >= beam_size or len(finished) >= beam_size:
                break
            state = beam[item_idx]
            nxt = extend(state, tok, total - state.cum_logprob, eos_id=vocab.eos_id)
            if nxt.terminated:
                finished.append(nxt)
            else:
                new_beam.append(nxt)
        beam = new_beam

    if not finished:
        return [empty_fallback(1)]
    results = [
        Hypothesis(
            text=vocab.detokenize(s.token_ids),
            score=s.cum_logprob / max(len(s.token_ids), 1),
            token_ids=(s.token_ids,),
            model_scores=(s.cum_logprob,),
        )
        for s in finished
    ]
    results.sort(key=lambda h: (-h.score, h.text, h.token_ids))
    return results[:beam_size]

"""Ensemble decoding driver: stall flags, grid assembly, beam loop, sampling.

The inductive guarantee throughout: after every timestep, every live beam
item's per-model detokenized strings agree with the item's shared global
hypothesis. Models whose string has caught up to the global hypothesis
(while another model is behind) are stalled for the step and contribute
only the empty transition, with token ids and score untouched.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, replace
from typing import Any, Callable, Sequence

import numpy as np

from .agreement import GlobalHypothesis, HypothesisString, agrees, global_hypothesis
from .model import ModelAdapter, ModelState, extend, stalled_distribution, step
from .search import (
    Candidate,
    Frontier,
    Grid,
    combined_score,
    make_grid_dim,
    next_agreeing,
    seed,
)

logger = logging.getLogger(__name__)

#: Environment variable enabling per-step agreement-invariant instrumentation.
DEBUG_ENV_VAR = "ABE_LOG"


@dataclass(frozen=True)
class EnsembleConfig:
    """Decoding knobs. Defaults: even weights, beam 5, 256 tokens.

    ``weights`` of None means uniform. ``pop_cap`` bounds heap pops per
    timestep so decoding terminates even when models cannot agree; None
    removes the bound. ``max_len`` caps every model's local token count
    independently.
    """

    weights: tuple[float, ...] | None = None
    beam_size: int = 5
    max_len: int = 256
    pop_cap: int | None = 65536
    mode: str = "beam"  # greedy | beam | sample
    rng_seed: int | None = None
    debug_agreement: bool | None = None  # None: read ABE_LOG from the environment

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.mode not in ("greedy", "beam", "sample"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if (w < 0).any():
                raise ValueError("weights must be nonnegative")
            if abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError(f"weights sum to {w.sum()!r}, expected 1")

    def resolved_weights(self, n_models: int) -> tuple[float, ...]:
        if self.weights is None:
            return tuple([1.0 / n_models] * n_models)
        if len(self.weights) != n_models:
            raise ValueError(
                f"{len(self.weights)} weights for {n_models} models"
            )
        return tuple(float(w) for w in self.weights)

    def debug_enabled(self) -> bool:
        if self.debug_agreement is not None:
            return self.debug_agreement
        return bool(os.environ.get(DEBUG_ENV_VAR))


@dataclass(frozen=True)
class BeamItem:
    """One joint hypothesis: per-model states plus the shared global string."""

    states: tuple[ModelState, ...]
    local_bytes: tuple[bytes, ...]
    global_hyp: GlobalHypothesis
    score: float

    @property
    def complete(self) -> bool:
        return all(s.terminated for s in self.states) and (
            len(set(self.local_bytes)) == 1
        )

    def hypothesis_strings(self) -> list[HypothesisString]:
        return [
            HypothesisString(b, s.terminated)
            for b, s in zip(self.local_bytes, self.states)
        ]


@dataclass(frozen=True)
class Hypothesis:
    """A finished decode output."""

    text: bytes
    score: float
    token_ids: tuple[tuple[int, ...], ...]
    model_scores: tuple[float, ...]
    fallback: bool = False


@dataclass(frozen=True)
class StepTrace:
    """Per-timestep snapshot handed to an optional decode hook."""

    index: int
    items_before: tuple[BeamItem, ...]  # live items with fresh stall flags
    items_after: tuple[BeamItem, ...]
    finished: tuple[BeamItem, ...]  # cumulative finished pool
    popped_scores: tuple[float, ...]


StepHook = Callable[[StepTrace], None]


def initial_item(n_models: int) -> BeamItem:
    return BeamItem(
        states=tuple(ModelState() for _ in range(n_models)),
        local_bytes=tuple(b"" for _ in range(n_models)),
        global_hyp=GlobalHypothesis(b"", False),
        score=0.0,
    )


def update_stall_flags(item: BeamItem) -> BeamItem:
    """Stall every model whose string equals g while some other model lags.

    Terminated models are treated as stalled for grid purposes: they only
    ever contribute the empty transition.
    """
    g = global_hypothesis(item.hypothesis_strings())
    behind = any(b != g.bytes for b in item.local_bytes)
    states = tuple(
        replace(s, stalled=s.terminated or (b == g.bytes and behind))
        for s, b in zip(item.states, item.local_bytes)
    )
    return BeamItem(states, item.local_bytes, g, item.score)


def _resolve_conditioning(conditioning: Any, n_models: int) -> list[Any]:
    if conditioning is None:
        return [None] * n_models
    conds = list(conditioning)
    if len(conds) != n_models:
        raise ValueError(f"{len(conds)} conditioning entries for {n_models} models")
    return conds


def _exhausted_budget(item: BeamItem, max_len: int) -> bool:
    # A model at max_len without EOS can never terminate; the item is dead.
    return any(
        not s.terminated and len(s.token_ids) >= max_len for s in item.states
    )


def _build_grid(
    live: Sequence[BeamItem],
    models: Sequence[ModelAdapter],
    conds: Sequence[Any],
    weights: Sequence[float],
) -> Grid:
    items = []
    for item in live:
        dims = []
        for i, (model, state) in enumerate(zip(models, item.states)):
            vocab = model.vocabulary
            if state.stalled:
                sr = stalled_distribution(state)
                length_after = len(state.token_ids)
            else:
                sr = step(model, state, conds[i])
                length_after = len(state.token_ids) + 1
            dims.append(
                make_grid_dim(
                    sr.ids,
                    sr.totals,
                    weight=weights[i],
                    length_after=length_after,
                    base_bytes=item.local_bytes[i],
                    base_terminated=state.terminated,
                    stalled=state.stalled,
                    piece_bytes=vocab.all_piece_bytes,
                    eos_id=vocab.eos_id,
                )
            )
        items.append(dims)
    return Grid(items)


def _instantiate(item: BeamItem, cand: Candidate, grid: Grid) -> BeamItem:
    dims = grid.items[cand.beam]
    states = []
    local_bytes = []
    for i, (dim, rank) in enumerate(zip(dims, cand.ranks)):
        state = item.states[i]
        if dim.stalled:
            states.append(state)
            local_bytes.append(item.local_bytes[i])
        else:
            tok = int(dim.ids[rank])
            total = float(dim.totals[rank])
            states.append(extend(state, tok, total - state.cum_logprob, eos_id=dim.eos_id))
            local_bytes.append(item.local_bytes[i] + dim.piece_bytes[tok])
    g = global_hypothesis(
        [HypothesisString(b, s.terminated) for b, s in zip(local_bytes, states)]
    )
    return BeamItem(tuple(states), tuple(local_bytes), g, cand.score)


def _dedup_key(item: BeamItem) -> tuple:
    # Identical strings with different tokenizations stay distinct.
    return (item.global_hyp.bytes, tuple(s.token_ids for s in item.states))


def _check_invariants(items: Sequence[BeamItem], models: Sequence[ModelAdapter], t: int) -> None:
    for item in items:
        if not agrees(item.hypothesis_strings()):
            raise AssertionError(
                f"agreement invariant violated at step {t}: {item.local_bytes!r}"
            )
        for state, cached, model in zip(item.states, item.local_bytes, models):
            if model.vocabulary.detokenize(state.token_ids) != cached:
                raise AssertionError(f"stale byte cache at step {t}")
    logger.debug("step %d: %d live items agree", t, len(items))


def _finished_sort_key(item: BeamItem) -> tuple:
    return (-item.score, item.global_hyp.bytes, tuple(s.token_ids for s in item.states))


def _to_hypothesis(item: BeamItem) -> Hypothesis:
    return Hypothesis(
        text=item.global_hyp.bytes,
        score=item.score,
        token_ids=tuple(s.token_ids for s in item.states),
        model_scores=tuple(s.cum_logprob for s in item.states),
    )


def empty_fallback(n_models: int) -> Hypothesis:
    """Returned when decoding ends with no agreed, finished hypothesis."""
    return Hypothesis(
        text=b"",
        score=float("-inf"),
        token_ids=tuple(() for _ in range(n_models)),
        model_scores=tuple(float("-inf") for _ in range(n_models)),
        fallback=True,
    )


def decode(
    models: Sequence[ModelAdapter],
    conditioning: Any = None,
    config: EnsembleConfig | None = None,
    step_hook: StepHook | None = None,
) -> list[Hypothesis]:
    """Agreement-based ensemble decoding (greedy or beam).

    Per timestep: refresh stall flags for every live beam item, build the
    extension grid from step / empty-transition results, and run the lazy
    agreeing search jointly across beam items. Completed candidates retire
    into a finished pool and are replaced by the next-best agreeing
    candidates from the same search. Decoding stops once ``beam_size``
    finished items exist, the beam empties, or items run out of per-model
    token budget. With nothing finished the output is a single empty
    string rather than an error.
    """
    if not models:
        raise ValueError("decode needs at least one model")
    cfg = config or EnsembleConfig()
    if cfg.mode == "sample":
        raise ValueError("use sample_decode for mode='sample'")
    n = len(models)
    weights = cfg.resolved_weights(n)
    conds = _resolve_conditioning(conditioning, n)
    k = 1 if cfg.mode == "greedy" else cfg.beam_size
    debug = cfg.debug_enabled()

    beam: list[BeamItem] = [initial_item(n)]
    finished: list[BeamItem] = []
    t = 0
    while beam and len(finished) < k:
        beam = [item for item in beam if not _exhausted_budget(item, cfg.max_len)]
        if not beam:
            break
        live = [update_stall_flags(item) for item in beam]
        grid = _build_grid(live, models, conds, weights)
        frontier = Frontier()
        seed(frontier, grid)

        new_beam: list[BeamItem] = []
        seen: set[tuple] = set()
        while len(new_beam) < k and len(finished) < k:
            got = next_agreeing(frontier, grid, k - len(new_beam), cfg.pop_cap)
            if not got:
                break
            for cand in got:
                item = _instantiate(live[cand.beam], cand, grid)
                key = _dedup_key(item)
                if key in seen:
                    continue
                seen.add(key)
                if item.complete:
                    finished.append(item)
                    if len(finished) >= k:
                        break
                else:
                    new_beam.append(item)
                    if len(new_beam) >= k:
                        break

        if debug:
            _check_invariants(new_beam, models, t)
        if step_hook is not None:
            step_hook(
                StepTrace(
                    index=t,
                    items_before=tuple(live),
                    items_after=tuple(new_beam),
                    finished=tuple(finished),
                    popped_scores=tuple(frontier.popped_scores),
                )
            )
        beam = new_beam
        t += 1

    if not finished:
        return [empty_fallback(n)]
    finished.sort(key=_finished_sort_key)
    return [_to_hypothesis(item) for item in finished[:k]]


# -- sampling variant ---------------------------------------------------------


def agreeing_support(
    probs: np.ndarray,
    own_bytes: bytes,
    others: Sequence[HypothesisString],
    piece_bytes: Sequence[bytes],
    eos_id: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Restrict a probability row to agreeing tokens and renormalize.

    Returns (token ids, renormalized probabilities); both empty when no
    positive-probability token keeps agreement.
    """
    keep_ids: list[int] = []
    keep_p: list[float] = []
    others = list(others)
    for tok, p in enumerate(probs):
        if p <= 0.0:
            continue
        tentative = HypothesisString(own_bytes + piece_bytes[tok], tok == eos_id)
        if agrees(others + [tentative]):
            keep_ids.append(tok)
            keep_p.append(float(p))
    if not keep_ids:
        return np.array([], dtype=np.int64), np.array([], dtype=np.float64)
    arr = np.asarray(keep_p, dtype=np.float64)
    return np.asarray(keep_ids, dtype=np.int64), arr / arr.sum()


def sample_step(
    models: Sequence[ModelAdapter],
    item: BeamItem,
    conds: Sequence[Any],
    weights: Sequence[float],
    rng: np.random.Generator,
) -> BeamItem | None:
    """One sampling timestep: each unstalled model in fixed order draws one
    token from its distribution renormalized to agreeing tokens only.

    Returns None when some model has no agreeing support left.
    """
    item = update_stall_flags(item)
    states = list(item.states)
    local_bytes = list(item.local_bytes)
    for i, model in enumerate(models):
        state = states[i]
        if state.stalled:
            continue
        vocab = model.vocabulary
        probs = np.exp(model.next_logprobs(state.token_ids, conds[i]))
        others = [
            HypothesisString(b, s.terminated)
            for j, (b, s) in enumerate(zip(local_bytes, states))
            if j != i
        ]
        ids, renorm = agreeing_support(
            probs, local_bytes[i], others, vocab.all_piece_bytes, vocab.eos_id
        )
        if len(ids) == 0:
            return None
        tok = int(rng.choice(ids, p=renorm))
        lp = float(np.log(probs[tok]))
        states[i] = extend(state, tok, lp, eos_id=vocab.eos_id)
        local_bytes[i] = local_bytes[i] + vocab.piece_bytes(tok)
    g = global_hypothesis(
        [HypothesisString(b, s.terminated) for b, s in zip(local_bytes, states)]
    )
    score = combined_score(
        weights,
        [(s.cum_logprob, len(s.token_ids)) for s in states],
    )
    return BeamItem(tuple(states), tuple(local_bytes), g, score)


def sample_decode(
    models: Sequence[ModelAdapter],
    conditioning: Any = None,
    config: EnsembleConfig | None = None,
) -> bytes:
    """Ensemble sampling. Falls back to the empty string whenever agreement
    cannot be kept or the token budget runs out; known to be unstable, kept
    for completeness.
    """
    cfg = config or EnsembleConfig(mode="sample")
    if cfg.rng_seed is None:
        raise ValueError("sample_decode requires rng_seed")
    n = len(models)
    weights = cfg.resolved_weights(n)
    conds = _resolve_conditioning(conditioning, n)
    rng = np.random.default_rng(cfg.rng_seed)
    debug = cfg.debug_enabled()

    item = initial_item(n)
    while not item.complete:
        if _exhausted_budget(item, cfg.max_len):
            return b""
        nxt = sample_step(models, item, conds, weights, rng)
        if nxt is None:
            return b""
        item = nxt
        if debug:
            _check_invariants([item], models, -1)
    return item.global_hyp.bytes

"""Randomized toy-model factories for property tests and oracle checks.

The ensemble scenarios built here are random but structured so that beam
search is provably lossless on them, which is what makes exact comparison
against exhaustive enumeration meaningful:

* every model's positive-probability pieces either continue one shared
  target string, or are junk drawn from per-model disjoint byte alphabets
  (so junk never agrees across models and dies within one step);
* the target has no repeated bytes, so a piece matches it at exactly one
  position and the only agreeing joint states are prefixes of the target;
* tokenization ambiguity and early-EOS boundaries are budgeted so that the
  number of live agreeing prefixes and the number of completed hypotheses
  both stay within the beam size -- nothing the oracle finds can be pruned.

Randomness then lives in the target, segmentations, marker conventions,
byte-fallback usage, junk vocabulary, interpolation weights, and all row
probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decoder import EnsembleConfig, Hypothesis, decode
from .model import ByteNgramModel, ScenarioModel
from .oracle import enumerate_joint
from .vocab import BYTE_FALLBACK, CONTROL, EOS, NORMAL, Piece, Vocabulary

_TARGET_ALPHABET = b"abcdefghijklmnopqrstuvwxyz"
_JUNK_POOL = b"0123456789,.;:!?"  # disjoint from target bytes and from "<"
_MARKER = "▁".encode("utf-8")


@dataclass(frozen=True)
class ToyEnsembleScenario:
    """A randomized ensemble instance plus the search budget it was built for."""

    models: tuple[ScenarioModel, ...]
    weights: tuple[float, ...]
    beam: int
    max_len: int
    target: bytes


def _draw_segmentation(
    rng: np.random.Generator, length: int, forced_cuts: frozenset[int]
) -> tuple[bytes, ...] | None:
    """Random cut of [0, length) into <= 7 segments honoring forced cuts."""
    cuts = set(forced_cuts)
    for pos in range(1, length):
        if rng.random() < 0.45:
            cuts.add(pos)
    ordered = sorted(cuts | {0, length})
    if len(ordered) - 1 > 7:
        return None
    return tuple((ordered[i], ordered[i + 1]) for i in range(len(ordered) - 1))


def _spans_to_pieces(target: bytes, spans: tuple) -> tuple[bytes, ...]:
    return tuple(target[a:b] for a, b in spans)


def _paths(target: bytes, pieces: set[bytes]) -> list[tuple[bytes, ...]]:
    """All tokenizations of target using the given piece byte-forms."""
    out: list[tuple[bytes, ...]] = []

    def rec(pos: int, acc: list[bytes]) -> None:
        if pos == len(target):
            out.append(tuple(acc))
            return
        for p in pieces:
            if target.startswith(p, pos):
                acc.append(p)
                rec(pos + len(p), acc)
                acc.pop()

    rec(0, [])
    return out


def _junk_surfaces(rng: np.random.Generator, alphabet: bytes, count: int) -> list[bytes]:
    pool: list[bytes] = []
    for length in (1, 2, 3):
        for _ in range(count * 4):
            pool.append(bytes(rng.choice(list(alphabet), size=length).tolist()))
    uniq = sorted(set(pool))
    rng.shuffle(uniq)
    if len(uniq) < count:
        raise ValueError("junk alphabet too small")
    return uniq[:count]


def _build_model(
    rng: np.random.Generator,
    target: bytes,
    seg_pieces: list[bytes],
    paths: list[tuple[bytes, ...]],
    junk_alphabet: bytes,
    exit_positions: list[int],
    identity: str,
) -> ScenarioModel:
    marker = _MARKER if rng.random() < 0.5 else None
    use_control = rng.random() < 0.3

    pieces: list[Piece] = []
    id_of: dict[bytes, int] = {}
    fallback_segs = {
        s for s in seg_pieces if len(s) == 1 and s[0] != 0x20 and rng.random() < 0.3
    }
    for s in seg_pieces:
        if s in fallback_segs:
            continue
        surface = (marker + s[1:]) if (marker and s.startswith(b" ")) else s
        id_of[s] = len(pieces)
        pieces.append(Piece(len(pieces), surface, NORMAL))

    n_fixed = len(pieces) + len(fallback_segs) + 1 + (1 if use_control else 0)
    target_size = int(rng.integers(max(8, n_fixed + 2), 41))
    junk = _junk_surfaces(rng, junk_alphabet, target_size - n_fixed)
    junk_ids = []
    for s in junk:
        junk_ids.append(len(pieces))
        pieces.append(Piece(len(pieces), s, NORMAL))
    if use_control:
        pieces.append(Piece(len(pieces), b"<pad>", CONTROL))
    eos_id = len(pieces)
    pieces.append(Piece(eos_id, b"</s>", EOS))
    for s in sorted(fallback_segs):
        id_of[s] = len(pieces)
        pieces.append(Piece(len(pieces), b"<0x%02X>" % s[0], BYTE_FALLBACK))

    vocab = Vocabulary(pieces, marker=marker)

    # Contexts along the tokenization lattice: which pieces may continue,
    # and the byte position reached, per token-id prefix.
    continuing: dict[tuple[int, ...], set[int]] = {}
    position: dict[tuple[int, ...], int] = {}
    finals: set[tuple[int, ...]] = set()
    for path in paths:
        ids = [id_of[p] for p in path]
        pos = 0
        for t, piece in enumerate(path):
            ctx = tuple(ids[:t])
            continuing.setdefault(ctx, set()).add(ids[t])
            position[ctx] = pos
            pos += len(piece)
        finals.add(tuple(ids))

    def junk_part(mass: float) -> dict[int, float]:
        chosen = rng.choice(junk_ids, size=min(3, len(junk_ids)), replace=False)
        split = rng.dirichlet(np.ones(len(chosen)))
        return {int(j): mass * float(w) for j, w in zip(chosen, split)}

    rows: dict[tuple[int, ...], np.ndarray] = {}
    for ctx, conts in continuing.items():
        mu = float(rng.uniform(0.05, 0.3))
        eos_mass = 0.0
        if position[ctx] in exit_positions:
            eos_mass = float(rng.uniform(0.1, 0.4))
        row = np.zeros(vocab.size)
        split = rng.dirichlet(np.ones(len(conts)))
        for tok, w in zip(sorted(conts), split):
            row[tok] = (1.0 - mu - eos_mass) * float(w)
        for tok, p in junk_part(mu).items():
            row[tok] += p
        row[eos_id] = eos_mass
        rows[ctx] = row / row.sum()
    for ctx in finals:
        mu = float(rng.uniform(0.02, 0.2))
        row = np.zeros(vocab.size)
        for tok, p in junk_part(mu).items():
            row[tok] += p
        row[eos_id] = 1.0 - mu
        rows[ctx] = row / row.sum()

    default = np.zeros(vocab.size)
    default[junk_ids] = 1.0 / len(junk_ids)
    return ScenarioModel(vocab, rows, default=default, identity=identity)


def make_agreement_scenario(
    rng: np.random.Generator,
    n_models: int | None = None,
    beam: int | None = None,
) -> ToyEnsembleScenario:
    """One randomized instance where beam search is exhaustive by construction."""
    n = n_models if n_models is not None else int(rng.integers(2, 4))
    k = beam if beam is not None else int(rng.choice([1, 2, 5]))

    length = int(rng.integers(3, 7))
    content = rng.choice(len(_TARGET_ALPHABET), size=length, replace=False)
    target = b" " + bytes(_TARGET_ALPHABET[i] for i in content)

    # Budget: live prefixes (= tokenization combos) and total completions
    # (= combos * (exit boundaries + 1)) must both fit within the beam.
    forced_cuts: frozenset[int] = frozenset()
    exit_positions: list[int] = []
    if k >= 2 and rng.random() < 0.5:
        pos = int(rng.integers(1, len(target)))
        forced_cuts = frozenset({pos})
        exit_positions = [pos]
        if k >= 3 and rng.random() < 0.15:
            exit_positions.append(0)  # allow the empty-string completion
    ambiguous_budget = k // (len(exit_positions) + 1)

    models = []
    combos = 1
    for i in range(n):
        seg_sets: list[tuple[bytes, ...]] = []
        while not seg_sets:
            spans = _draw_segmentation(rng, len(target), forced_cuts)
            if spans is not None:
                seg_sets.append(_spans_to_pieces(target, spans))
        if combos < ambiguous_budget and rng.random() < 0.6:
            spans = _draw_segmentation(rng, len(target), forced_cuts)
            if spans is not None:
                alt = _spans_to_pieces(target, spans)
                if alt != seg_sets[0]:
                    seg_sets.append(alt)
        pieces = sorted({p for seg in seg_sets for p in seg})
        paths = _paths(target, set(pieces))
        if combos * len(paths) > ambiguous_budget:
            # Recombination across the two cuts overshot the budget; fall
            # back to the unambiguous single segmentation.
            pieces = sorted(set(seg_sets[0]))
            paths = _paths(target, set(pieces))
            assert len(paths) == 1
        combos *= len(paths)
        junk_alphabet = _JUNK_POOL[5 * i : 5 * i + 5]
        models.append(
            _build_model(
                rng, target, pieces, paths, junk_alphabet, exit_positions, f"toy{i}"
            )
        )

    if rng.random() < 0.5:
        weights = tuple([1.0 / n] * n)
    else:
        raw = rng.uniform(0.2, 1.0, size=n)
        weights = tuple(float(w) for w in raw / raw.sum())
    return ToyEnsembleScenario(
        models=tuple(models), weights=weights, beam=k, max_len=8, target=target
    )


# -- unconstrained toys --------------------------------------------------------


def make_random_ngram(rng: np.random.Generator, identity: str = "ngram") -> ByteNgramModel:
    """Small smoothed n-gram model: positive everywhere, fully random."""
    alphabet = bytes(_TARGET_ALPHABET[: int(rng.integers(2, 5))])
    order = int(rng.integers(1, 4))
    n_train = int(rng.integers(2, 8))
    training = [
        bytes(rng.choice(list(alphabet), size=int(rng.integers(1, 7))).tolist())
        for _ in range(n_train)
    ]
    return ByteNgramModel(alphabet, training, order=order, alpha=0.1, identity=identity)


def make_tree_model(
    rng: np.random.Generator, max_leaves: int, identity: str = "tree"
) -> ScenarioModel:
    """Random {a, b, eos} model whose support is a tree with <= max_leaves
    leaves; EOS is forced exactly at the leaves, so a beam of max_leaves
    explores the whole support."""
    from .vocab import build_vocabulary

    vocab = build_vocabulary([b"a", b"b"])
    eos = vocab.eos_id
    leaves = int(rng.integers(2, max_leaves + 1))
    rows: dict[tuple[int, ...], np.ndarray] = {}

    def grow(ctx: tuple[int, ...], budget: int) -> None:
        row = np.zeros(vocab.size)
        if budget == 1 or len(ctx) >= 6:
            row[eos] = 1.0
            rows[ctx] = row
            return
        p = float(rng.uniform(0.05, 0.95))
        row[0], row[1] = p, 1.0 - p
        rows[ctx] = row
        left = int(rng.integers(1, budget))
        grow(ctx + (0,), left)
        grow(ctx + (1,), budget - left)

    grow((), leaves)
    return ScenarioModel(vocab, rows, identity=identity)


# -- handmade pairs -------------------------------------------------------------


def make_chain_model(
    text: bytes,
    pieces: list[bytes],
    *,
    marker: bytes | None = None,
    identity: str = "chain",
) -> ScenarioModel:
    """Deterministic model emitting exactly ``pieces`` (spelling ``text``)
    and then EOS, each step with probability 1."""
    assert b"".join(pieces) == text
    vocab_pieces = []
    for s in pieces:
        surface = (marker + s[1:]) if (marker and s.startswith(b" ")) else s
        vocab_pieces.append(Piece(len(vocab_pieces), surface, NORMAL))
    eos_id = len(vocab_pieces)
    vocab_pieces.append(Piece(eos_id, b"</s>", EOS))
    vocab = Vocabulary(vocab_pieces, marker=marker)
    rows = {}
    for t in range(len(pieces)):
        row = np.zeros(vocab.size)
        row[t] = 1.0
        rows[tuple(range(t))] = row
    final = np.zeros(vocab.size)
    final[eos_id] = 1.0
    rows[tuple(range(len(pieces)))] = final
    return ScenarioModel(vocab, rows, identity=identity)


def make_never_agreeing_pair() -> tuple[ScenarioModel, ScenarioModel]:
    """Two models sharing a byte prefix but no terminated string: one wants
    to stop early, the other refuses to stop."""
    stopper = make_chain_model(b" ab", [b" ab"], identity="stopper")
    # Rambler repeats " ab" + "ab"*n and never emits EOS with mass.
    vocab = Vocabulary(
        [Piece(0, b" ab"), Piece(1, b"ab"), Piece(2, b"</s>", EOS)]
    )
    first = np.array([1.0, 0.0, 0.0])
    later = np.array([0.0, 1.0, 0.0])
    rambler = ScenarioModel(
        vocab, {(): first}, default=later, identity="rambler"
    )
    return stopper, rambler


def make_endless_pair(depth: int = 24) -> tuple[ScenarioModel, ScenarioModel]:
    """Two models that agree on " abab..." forever but never terminate, so
    decoding dies at the token budget with no finished hypothesis."""
    vocab1 = Vocabulary([Piece(0, b" ab"), Piece(1, b"ab"), Piece(2, b"</s>", EOS)])
    first = np.array([1.0, 0.0, 0.0])
    later = np.array([0.0, 1.0, 0.0])
    coarse = ScenarioModel(vocab1, {(): first}, default=later, identity="endless-coarse")

    vocab2 = Vocabulary(
        [Piece(0, b" a"), Piece(1, b"b"), Piece(2, b"a"), Piece(3, b"</s>", EOS)]
    )
    seq = [0] + [1, 2] * depth
    rows = {}
    for t, tok in enumerate(seq):
        row = np.zeros(vocab2.size)
        row[tok] = 1.0
        rows[tuple(seq[:t])] = row
    fine = ScenarioModel(vocab2, rows, identity="endless-fine")
    return coarse, fine


# -- decode vs oracle ------------------------------------------------------------


def check_decode_vs_oracle(
    scenario: ToyEnsembleScenario, atol: float = 1e-9
) -> tuple[bool, str]:
    """Run the decoder and the brute-force oracle; compare exactly."""
    cfg = EnsembleConfig(
        weights=scenario.weights,
        beam_size=scenario.beam,
        max_len=scenario.max_len,
        pop_cap=None,
    )
    got: list[Hypothesis] = decode(scenario.models, config=cfg)
    want = enumerate_joint(
        scenario.models,
        weights=scenario.weights,
        max_len=scenario.max_len,
        top=scenario.beam,
    ).ranked
    if not want:
        if len(got) == 1 and got[0].fallback:
            return True, "both empty"
        return False, f"oracle empty but decoder returned {got!r}"
    if len(got) != len(want):
        return False, f"{len(got)} hypotheses vs oracle {len(want)}"
    for g, w in zip(got, want):
        if g.text != w.text:
            return False, f"text {g.text!r} != {w.text!r}"
        if g.token_ids != w.token_ids:
            return False, f"tokenizations differ on {g.text!r}"
        if abs(g.score - w.score) > atol:
            return False, f"score {g.score} vs {w.score} on {g.text!r}"
        for a, b in zip(g.model_scores, w.model_scores):
            if abs(a - b) > atol:
                return False, f"model score {a} vs {b} on {g.text!r}"
    return True, "ok"

"""Global hypothesis and the agreement predicate over byte strings.

A set of per-model strings agrees when every one of them is a byte prefix
of the set's global hypothesis. Comparison is byte-wise throughout: no
Unicode awareness, no whitespace normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class HypothesisString:
    """One model's detokenized local hypothesis."""

    bytes: bytes
    terminated: bool = False


@dataclass(frozen=True)
class GlobalHypothesis:
    """The string the whole ensemble is coordinating on."""

    bytes: bytes
    terminated: bool = False


def global_hypothesis(strings: Iterable[HypothesisString]) -> GlobalHypothesis:
    """Pick the global hypothesis of a nonempty set of local strings.

    Terminated strings take precedence: a terminated string can never grow
    to meet a longer candidate, so the shortest terminated member wins
    (ties broken lexicographically). With no terminated member the longest
    string wins; if the set agrees the longest members are byte-identical,
    and for determinism ties are again broken lexicographically.
    """
    members = list(strings)
    if not members:
        raise ValueError("global_hypothesis needs a nonempty set of strings")
    terminated = [m for m in members if m.terminated]
    if terminated:
        best = min(terminated, key=lambda m: (len(m.bytes), m.bytes))
        return GlobalHypothesis(best.bytes, True)
    best = min(members, key=lambda m: (-len(m.bytes), m.bytes))
    return GlobalHypothesis(best.bytes, False)


def agrees(strings: Iterable[HypothesisString]) -> bool:
    """True iff every member is a byte prefix of the global hypothesis.

    When the global hypothesis is terminated, terminated members must
    equal it exactly (two different terminated strings can never be
    reconciled) and unterminated members must be prefixes of it.
    """
    members = list(strings)
    g = global_hypothesis(members)
    for m in members:
        if not g.bytes.startswith(m.bytes):
            return False
        if g.terminated and m.terminated and m.bytes != g.bytes:
            return False
    return True

"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from abe.model import ScenarioModel
from abe.vocab import EOS, NORMAL, Piece, Vocabulary, build_vocabulary

MARKER = "▁".encode("utf-8")


def vocab_from_surfaces(surfaces, marker=None, eos=b"</s>"):
    """Normal pieces in order, then EOS."""
    pieces = []
    for s in surfaces:
        s = s.encode("utf-8") if isinstance(s, str) else s
        pieces.append(Piece(len(pieces), s, NORMAL))
    pieces.append(Piece(len(pieces), eos, EOS))
    return Vocabulary(pieces, marker=marker)


def scenario(surfaces, rows, default=None, marker=None, identity="scenario"):
    """ScenarioModel from surface-keyed rows.

    ``rows`` maps context id tuples to {surface: prob}; the EOS surface is
    "</s>". Unlisted surfaces get probability zero.
    """
    vocab = vocab_from_surfaces(surfaces, marker=marker)
    index = {}
    for p in vocab.pieces:
        key = p.surface.decode("utf-8")
        index[key] = p.id

    def to_row(dist):
        row = np.zeros(vocab.size)
        for surface, prob in dist.items():
            row[index[surface]] = prob
        return row

    return ScenarioModel(
        vocab,
        {ctx: to_row(dist) for ctx, dist in rows.items()},
        default=to_row(default) if default is not None else None,
        identity=identity,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)

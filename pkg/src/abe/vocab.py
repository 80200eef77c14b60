"""Token pieces, vocabularies, and id-sequence <-> byte-string mapping.

Everything downstream compares hypotheses as raw byte strings, so the
vocabulary layer is the only place that knows about word-boundary markers
and byte-fallback pieces. Detokenized bytes retain the leading space; it
is stripped once, at final output time, never during decoding.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidTokenError

NORMAL = "normal"
BYTE_FALLBACK = "byte_fallback"
EOS = "eos"
CONTROL = "control"

_KINDS = (NORMAL, BYTE_FALLBACK, EOS, CONTROL)
_BYTE_PIECE_RE = re.compile(rb"^<0x([0-9A-Fa-f]{2})>$")

#: Whitespace byte that word-boundary markers stand for.
SPACE = b" "


@dataclass(frozen=True)
class Piece:
    """One vocabulary entry: surface bytes as stored, plus its kind."""

    id: int
    surface: bytes
    kind: str = NORMAL

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown piece kind {self.kind!r}")
        if self.kind == BYTE_FALLBACK and not _BYTE_PIECE_RE.match(self.surface):
            raise ValueError(
                f"byte_fallback surface must look like <0xNN>, got {self.surface!r}"
            )


def _piece_bytes(piece: Piece, marker: bytes | None) -> bytes:
    """Byte contribution of one piece to the detokenized string."""
    if piece.kind == BYTE_FALLBACK:
        m = _BYTE_PIECE_RE.match(piece.surface)
        assert m is not None
        return bytes([int(m.group(1), 16)])
    if piece.kind in (EOS, CONTROL):
        return b""
    if marker:
        return piece.surface.replace(marker, SPACE)
    return piece.surface


class Vocabulary:
    """Ordered, immutable piece table with detokenization semantics.

    ``marker`` is the word-boundary convention: a byte sequence (for
    example the sentencepiece-style "▁"), each occurrence of which
    detokenizes to a single 0x20 byte. ``None`` means surfaces are taken
    literally. Ids are dense 0..size-1 by construction.
    """

    def __init__(self, pieces: Iterable[Piece], marker: bytes | None = None) -> None:
        self._pieces = tuple(pieces)
        self._marker = marker or None
        for i, piece in enumerate(self._pieces):
            if piece.id != i:
                raise ValueError(f"piece ids must be dense 0..n-1, got {piece.id} at {i}")
        eos_ids = [p.id for p in self._pieces if p.kind == EOS]
        if len(eos_ids) != 1:
            raise ValueError(f"vocabulary needs exactly one eos piece, found {len(eos_ids)}")
        self._eos_id = eos_ids[0]
        self._piece_bytes = tuple(_piece_bytes(p, self._marker) for p in self._pieces)
        # Longest-match table: detokenized surface -> lowest matching id.
        table: dict[bytes, int] = {}
        for p in self._pieces:
            if p.kind in (EOS, CONTROL):
                continue
            b = self._piece_bytes[p.id]
            if b and b not in table:
                table[b] = p.id
        self._match_table = table
        self._max_match = max((len(b) for b in table), default=0)

    # -- basic accessors ---------------------------------------------------

    @property
    def pieces(self) -> tuple[Piece, ...]:
        return self._pieces

    @property
    def marker(self) -> bytes | None:
        return self._marker

    @property
    def size(self) -> int:
        return len(self._pieces)

    @property
    def eos_id(self) -> int:
        return self._eos_id

    def __len__(self) -> int:
        return len(self._pieces)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self._marker == other._marker and tuple(
            (p.surface, p.kind) for p in self._pieces
        ) == tuple((p.surface, p.kind) for p in other._pieces)

    def __hash__(self) -> int:
        return hash((self._marker, tuple((p.surface, p.kind) for p in self._pieces)))

    def piece_bytes(self, token_id: int) -> bytes:
        """Detokenized byte contribution of one token id."""
        if not 0 <= token_id < len(self._pieces):
            raise InvalidTokenError(f"token id {token_id} out of range for size {self.size}")
        return self._piece_bytes[token_id]

    @property
    def all_piece_bytes(self) -> tuple[bytes, ...]:
        return self._piece_bytes

    def covers_all_bytes(self) -> bool:
        """True when every byte 0x00-0xFF is generable by a single piece."""
        return all(bytes([b]) in self._match_table for b in range(256))

    # -- detokenization ----------------------------------------------------

    def detokenize(self, ids: Sequence[int]) -> bytes:
        """Concatenate piece byte contributions; markers become 0x20.

        The leading space, when present, is retained: prefix comparison
        during decoding must not depend on position-sensitive stripping.
        """
        out = []
        for i in ids:
            out.append(self.piece_bytes(i))
        return b"".join(out)

    # -- greedy tokenization ------------------------------------------------

    def tokenize_greedy(self, text: bytes) -> list[int]:
        """Left-to-right longest-match segmentation of ``text``.

        Pieces are matched by their detokenized byte form, so marker
        normalization is implicit; single-byte pieces (byte-fallback or
        normal) provide the fallback path. Round-trips with detokenize.
        """
        ids: list[int] = []
        pos = 0
        n = len(text)
        while pos < n:
            hit = None
            for length in range(min(self._max_match, n - pos), 0, -1):
                hit = self._match_table.get(text[pos : pos + length])
                if hit is not None:
                    ids.append(hit)
                    pos += length
                    break
            if hit is None:
                raise ValueError(
                    f"byte 0x{text[pos]:02X} at offset {pos} is not representable; "
                    "vocabulary is not open"
                )
        return ids


# -- construction helpers ---------------------------------------------------


def build_vocabulary(
    surfaces: Sequence[bytes | str],
    *,
    marker: bytes | str | None = None,
    eos_surface: bytes | str = b"</s>",
    byte_fallback: bool = False,
    control_surfaces: Sequence[bytes | str] = (),
) -> Vocabulary:
    """Assemble a vocabulary from plain surfaces, in the given order.

    Order is: normal pieces, eos, control pieces, then the 256 fallback
    pieces when ``byte_fallback`` is set.
    """

    def as_bytes(s: bytes | str) -> bytes:
        return s.encode("utf-8") if isinstance(s, str) else s

    pieces: list[Piece] = []
    for s in surfaces:
        pieces.append(Piece(len(pieces), as_bytes(s), NORMAL))
    pieces.append(Piece(len(pieces), as_bytes(eos_surface), EOS))
    for s in control_surfaces:
        pieces.append(Piece(len(pieces), as_bytes(s), CONTROL))
    if byte_fallback:
        for b in range(256):
            pieces.append(Piece(len(pieces), b"<0x%02X>" % b, BYTE_FALLBACK))
    m = as_bytes(marker) if marker is not None else None
    return Vocabulary(pieces, marker=m)


# -- file schema --------------------------------------------------------------
#
# One JSON document:
#   {"marker": "▁" | null,
#    "pieces": [{"surface": "...", "kind": "normal|byte_fallback|eos|control"}, ...]}
# Ids are implied by order. Surfaces are UTF-8 text; byte-fallback surfaces
# are written in the "<0xNN>" form.


def vocabulary_to_dict(vocab: Vocabulary) -> dict:
    return {
        "marker": vocab.marker.decode("utf-8") if vocab.marker else None,
        "pieces": [
            {"surface": p.surface.decode("utf-8"), "kind": p.kind} for p in vocab.pieces
        ],
    }


def vocabulary_from_dict(doc: dict) -> Vocabulary:
    marker = doc.get("marker")
    pieces = [
        Piece(i, entry["surface"].encode("utf-8"), entry.get("kind", NORMAL))
        for i, entry in enumerate(doc["pieces"])
    ]
    return Vocabulary(pieces, marker=marker.encode("utf-8") if marker else None)


def load_vocabulary(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        return vocabulary_from_dict(json.load(fh))


def save_vocabulary(vocab: Vocabulary, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocabulary_to_dict(vocab), fh, ensure_ascii=False)
        fh.write("\n")


def file_surface(piece: Piece) -> str:
    """Surface exactly as written in the vocabulary file."""
    return piece.surface.decode("utf-8")

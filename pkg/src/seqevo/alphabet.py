"""Token alphabets for observed sequences and latent alignments.

Residues get ids 0..K-1, the mask placeholder gets id K, and the gap
(empty latent slot) gets id K+1.  Observed sequences live over residues
plus mask; the gap token only ever appears inside latent alignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CANONICAL_AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
MASK_CHAR = "X"
GAP_CHAR = "-"


@dataclass(frozen=True)
class Alphabet:
    """Residue alphabet plus the two special tokens (mask, gap)."""

    amino_acids: str = CANONICAL_AMINO_ACIDS
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.amino_acids) < 2:
            raise ValueError("alphabet needs at least 2 residues")
        if len(set(self.amino_acids)) != len(self.amino_acids):
            raise ValueError("duplicate residue letters")
        if MASK_CHAR in self.amino_acids or GAP_CHAR in self.amino_acids:
            raise ValueError(f"{MASK_CHAR!r} and {GAP_CHAR!r} are reserved")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.amino_acids)})

    @classmethod
    def of_size(cls, k: int) -> "Alphabet":
        """Reduced alphabet over the first k canonical residues (for tests)."""
        if not 2 <= k <= len(CANONICAL_AMINO_ACIDS):
            raise ValueError(f"k must be in [2, {len(CANONICAL_AMINO_ACIDS)}]")
        return cls(CANONICAL_AMINO_ACIDS[:k])

    @property
    def K(self) -> int:
        return len(self.amino_acids)

    @property
    def mask_id(self) -> int:
        return self.K

    @property
    def gap_id(self) -> int:
        return self.K + 1

    @property
    def n_tokens(self) -> int:
        """Full latent vocabulary size: K residues + mask + gap."""
        return self.K + 2

    def is_residue(self, tok: int) -> bool:
        return 0 <= tok < self.K

    def encode(self, text: str) -> np.ndarray:
        """Letters -> token ids. Accepts residues, mask and gap characters."""
        out = np.empty(len(text), dtype=np.int64)
        for i, c in enumerate(text):
            if c in self._index:
                out[i] = self._index[c]
            elif c == MASK_CHAR:
                out[i] = self.mask_id
            elif c == GAP_CHAR:
                out[i] = self.gap_id
            else:
                raise ValueError(f"illegal character {c!r} at position {i + 1}")
        return out

    def decode(self, tokens) -> str:
        chars = []
        for tok in np.asarray(tokens, dtype=np.int64):
            if 0 <= tok < self.K:
                chars.append(self.amino_acids[tok])
            elif tok == self.mask_id:
                chars.append(MASK_CHAR)
            elif tok == self.gap_id:
                chars.append(GAP_CHAR)
            else:
                raise ValueError(f"token id {tok} outside alphabet")
        return "".join(chars)


def validate_observed(tokens: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Check an observed-space sequence: residues/mask only, length >= 1."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ValueError("observed sequence must be a non-empty 1-d token array")
    if tokens.min() < 0 or tokens.max() > alphabet.mask_id:
        raise ValueError("observed sequence may contain residues and mask only")
    return tokens


def validate_latent(tokens: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1:
        raise ValueError("latent alignment must be a 1-d token array")
    if tokens.size and (tokens.min() < 0 or tokens.max() > alphabet.gap_id):
        raise ValueError("latent alignment contains out-of-vocabulary ids")
    return tokens

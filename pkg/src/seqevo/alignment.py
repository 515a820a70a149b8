"""Latent alignments: gap-interleaved canvases on which indels are defined.

An observed sequence of length L maps to latent alignments of length 2L
(L residues + L gaps).  Collapsing removes gaps; expanding inserts them,
either canonically (one slot after each residue) or uniformly at random
over all interleavings.
"""

from __future__ import annotations

import numpy as np

from .alphabet import Alphabet


class EmptyCollapseError(ValueError):
    """Raised when a latent alignment contains nothing but gaps."""


def collapse(z: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Drop all gap tokens. Errors if nothing is left."""
    z = np.asarray(z, dtype=np.int64)
    x = z[z != alphabet.gap_id]
    if x.size == 0:
        raise EmptyCollapseError("alignment collapses to an empty sequence")
    return x


def canonical_expand(x: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Interleave one gap slot after each token: [A,B] -> [A,-,B,-]."""
    x = np.asarray(x, dtype=np.int64)
    if x.size == 0:
        raise ValueError("cannot expand an empty sequence")
    z = np.full(2 * x.size, alphabet.gap_id, dtype=np.int64)
    z[0::2] = x
    return z


def random_alignment(x: np.ndarray, alphabet: Alphabet, rng: np.random.Generator) -> np.ndarray:
    """Insert exactly L gaps at positions chosen uniformly over interleavings.

    Every one of the C(2L, L) gap placements is equally likely, which makes
    downstream expectations over alignments unbiased.
    """
    x = np.asarray(x, dtype=np.int64)
    L = x.size
    if L == 0:
        raise ValueError("cannot align an empty sequence")
    slots = rng.permutation(2 * L)[:L]  # latent indices that hold the residues
    slots.sort()
    z = np.full(2 * L, alphabet.gap_id, dtype=np.int64)
    z[slots] = x
    return z


def index_map(z: np.ndarray, alphabet: Alphabet) -> np.ndarray:
    """Latent indices of the non-gap tokens, in order (0-based)."""
    z = np.asarray(z, dtype=np.int64)
    return np.flatnonzero(z != alphabet.gap_id)


def next_nongap(z0: np.ndarray, imap_t: np.ndarray, k: int, alphabet: Alphabet):
    """First non-gap token of z0 strictly between imap_t[k] and imap_t[k+1].

    For the last observed position the scan runs to the end of z0.  Returns
    the token id, or None when only gaps intervene (no insertion needed
    there).  k is 0-based.
    """
    if not 0 <= k < len(imap_t):
        raise IndexError(f"observed index {k} out of range for map of size {len(imap_t)}")
    lo = imap_t[k] + 1
    hi = imap_t[k + 1] if k + 1 < len(imap_t) else len(z0)
    for j in range(lo, hi):
        if z0[j] != alphabet.gap_id:
            return int(z0[j])
    return None

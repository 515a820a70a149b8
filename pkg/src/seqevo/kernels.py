"""Noise schedules, substitution kernels and the forward corruption process.

The transition matrix Q is (K+2) x (K+2) and column-stochastic with
Q[target, source].  Sources split three ways: a residue is deleted
(-> gap) with rate omega_del, masked with (1 - omega_del) * rho_mask, or
substituted through the K x K kernel; a mask is absorbing; a gap turns
into a uniformly drawn residue (insertion) with rate omega_ins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alphabet import Alphabet

# Raw BLOSUM62 scores (standard published matrix, NCBI residue order).
# Loadable from file via load_blosum_file; this copy is the built-in default.
BLOSUM62_TEXT = """\
   A  R  N  D  C  Q  E  G  H  I  L  K  M  F  P  S  T  W  Y  V
A  4 -1 -2 -2  0 -1 -1  0 -2 -1 -1 -1 -1 -2 -1  1  0 -3 -2  0
R -1  5  0 -2 -3  1  0 -2  0 -3 -2  2 -1 -3 -2 -1 -1 -3 -2 -3
N -2  0  6  1 -3  0  0  0  1 -3 -3  0 -2 -3 -2  1  0 -4 -2 -3
D -2 -2  1  6 -3  0  2 -1 -1 -3 -4 -1 -3 -3 -1  0 -1 -4 -3 -3
C  0 -3 -3 -3  9 -3 -4 -3 -3 -1 -1 -3 -1 -2 -3 -1 -1 -2 -2 -1
Q -1  1  0  0 -3  5  2 -2  0 -3 -2  1  0 -3 -1  0 -1 -2 -1 -2
E -1  0  0  2 -4  2  5 -2  0 -3 -3  1 -2 -3 -1  0 -1 -3 -2 -2
G  0 -2  0 -1 -3 -2 -2  6 -2 -4 -4 -2 -3 -3 -2  0 -2 -2 -3 -3
H -2  0  1 -1 -3  0  0 -2  8 -3 -3 -1 -2 -1 -2 -1 -2 -2  2 -3
I -1 -3 -3 -3 -1 -3 -3 -4 -3  4  2 -3  1  0 -3 -2 -1 -3 -1  3
L -1 -2 -3 -4 -1 -2 -3 -4 -3  2  4 -2  2  0 -3 -2 -1 -2 -1  1
K -1  2  0 -1 -3  1  1 -2 -1 -3 -2  5 -1 -3 -1  0 -1 -3 -2 -2
M -1 -1 -2 -3 -1  0 -2 -3 -2  1  2 -1  5  0 -2 -1 -1 -1 -1  1
F -2 -3 -3 -3 -2 -3 -3 -3 -1  0  0 -3  0  6 -4 -2 -2  1  3 -1
P -1 -2 -2 -1 -3 -1 -1 -2 -2 -3 -3 -1 -2 -4  7 -1 -1 -4 -3 -2
S  1 -1  1  0 -1  0  0  0 -1 -2 -2  0 -1 -2 -1  4  1 -3 -2 -2
T  0 -1  0 -1 -1 -1 -1 -2 -2 -1 -1 -1 -1 -2 -1  1  5 -2 -2  0
W -3 -3 -4 -4 -2 -2 -3 -2 -2 -3 -2 -3 -1  1 -4 -3 -2 11  2 -3
Y -2 -2 -2 -3 -2 -1 -2 -3  2 -1 -1 -2 -1  3 -3 -2 -2  2  7 -1
V  0 -3 -3 -3 -1 -2 -2 -3 -3  3  1 -2  1 -1 -2 -2  0 -3 -1  4
"""


def parse_blosum_text(text: str, alphabet: Alphabet) -> np.ndarray:
    """Parse a whitespace-delimited score table with a residue header row.

    Rows may repeat the residue letter in the first column.  The result is
    reordered to the alphabet's residue order.
    """
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("empty substitution matrix file")
    header = lines[0].split()
    k = len(header)
    if sorted(header) != sorted(alphabet.amino_acids):
        raise ValueError("matrix header letters do not match the alphabet")
    scores = {}
    for ln in lines[1:]:
        fields = ln.split()
        if len(fields) == k + 1:
            row_letter, values = fields[0], fields[1:]
        elif len(fields) == k:
            row_letter, values = header[len(scores)], fields
        else:
            raise ValueError(f"matrix row has {len(fields)} fields, expected {k} or {k + 1}")
        scores[row_letter] = [float(v) for v in values]
    if len(scores) != k:
        raise ValueError(f"matrix has {len(scores)} rows, expected {k}")
    B = np.zeros((alphabet.K, alphabet.K))
    for i, a in enumerate(alphabet.amino_acids):
        for j, b in enumerate(alphabet.amino_acids):
            B[i, j] = scores[a][header.index(b)]
    return B


def load_blosum_file(path, alphabet: Alphabet) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_blosum_text(fh.read(), alphabet)


def blosum62_scores(alphabet: Alphabet | None = None) -> np.ndarray:
    """Built-in BLOSUM62 in alphabet residue order (requires K=20)."""
    alphabet = alphabet or Alphabet()
    if alphabet.K != 20:
        raise ValueError("BLOSUM62 is defined for the 20-residue alphabet")
    return parse_blosum_text(BLOSUM62_TEXT, alphabet)


# --------------------------- schedules ---------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """alpha_bar[t] = probability that a position is still uncorrupted at step t."""

    T: int
    alpha_bar: np.ndarray  # shape (T+1,), alpha_bar[0] = 1, alpha_bar[T] = 0

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.shape != (self.T + 1,):
            raise ValueError("alpha_bar must have T+1 entries")
        if not (math.isclose(ab[0], 1.0) and math.isclose(ab[-1], 0.0, abs_tol=1e-12)):
            raise ValueError("schedule must run from alpha_bar=1 down to 0")
        if np.any(np.diff(ab) > 1e-12):
            raise ValueError("alpha_bar must be non-increasing")


def linear_schedule(T: int) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    return NoiseSchedule(T, 1.0 - np.arange(T + 1) / T)


def cosine_schedule(T: int) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    return NoiseSchedule(T, np.cos(0.5 * np.pi * np.arange(T + 1) / T) ** 2)


def make_schedule(name: str, T: int) -> NoiseSchedule:
    if name == "linear":
        return linear_schedule(T)
    if name == "cosine":
        return cosine_schedule(T)
    raise ValueError(f"unknown schedule {name!r}")


# --------------------------- kernels ---------------------------


@dataclass(frozen=True)
class KernelParams:
    omega_del: float = 0.1
    omega_ins: float = 0.1
    rho_mask: float = 0.5

    def __post_init__(self):
        for name in ("omega_del", "omega_ins", "rho_mask"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def uniform_substitution_kernel(K: int) -> np.ndarray:
    if K < 2:
        raise ValueError("K must be >= 2")
    return np.full((K, K), 1.0 / K)


def blosum_substitution_kernel(B: np.ndarray, tau_B: float) -> np.ndarray:
    """Row-wise softmax of B / tau_B.

    Rows are source-residue indexed and sum to 1.  Callers that need a
    column-stochastic matrix (build_transition_matrix) take the transpose;
    column j of the stored kernel is then the softmaxed row j.
    """
    if tau_B <= 0:
        raise ValueError("tau_B must be positive")
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("score matrix must be square")
    z = B / tau_B
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def build_transition_matrix(params: KernelParams, sub: np.ndarray) -> np.ndarray:
    """Assemble the (K+2)^2 column-stochastic transition matrix.

    `sub` is the K x K column-stochastic substitution kernel (pass the
    transpose of a row-stochastic kernel).
    """
    sub = np.asarray(sub, dtype=np.float64)
    K = sub.shape[0]
    if sub.shape != (K, K):
        raise ValueError("substitution kernel must be square")
    if np.any(sub < 0) or not np.allclose(sub.sum(axis=0), 1.0, atol=1e-9):
        raise ValueError("substitution kernel columns must sum to 1")
    wd, wi, rho = params.omega_del, params.omega_ins, params.rho_mask
    Q = np.zeros((K + 2, K + 2))
    mask, gap = K, K + 1
    Q[:K, :K] = (1.0 - wd) * (1.0 - rho) * sub
    Q[mask, :K] = (1.0 - wd) * rho
    Q[gap, :K] = wd
    Q[mask, mask] = 1.0
    Q[:K, gap] = wi / K
    Q[gap, gap] = 1.0 - wi
    return Q


def validate_transition_matrix(Q: np.ndarray) -> None:
    if np.any(Q < 0):
        raise ValueError("negative transition probability")
    if not np.allclose(Q.sum(axis=0), 1.0, atol=1e-9):
        raise ValueError("transition matrix columns must sum to 1")


# --------------------------- forward corruption ---------------------------


def sample_categorical_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index per row of a (n, m) probability array."""
    probs = np.asarray(probs, dtype=np.float64)
    cum = np.cumsum(probs, axis=1)
    cum /= cum[:, -1:]
    u = rng.random((probs.shape[0], 1))
    return np.minimum((u >= cum).sum(axis=1), probs.shape[1] - 1)


def corruption_flags(n: int, alpha_bar_t: float, rng: np.random.Generator) -> np.ndarray:
    """Per-position indicator: True where the forward process corrupts."""
    return rng.random(n) >= alpha_bar_t


def apply_noise_columns(
    z0: np.ndarray, flags: np.ndarray, columns: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Corrupt flagged positions by sampling from per-position target columns.

    columns[j] is the distribution over the K+2 target tokens for position j
    (already conditioned on the source token z0[j]).
    """
    zt = np.asarray(z0, dtype=np.int64).copy()
    idx = np.flatnonzero(flags)
    if idx.size:
        zt[idx] = sample_categorical_rows(columns[idx], rng)
    return zt


def forward_noise(
    z0: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    Q: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """One-shot forward corruption: keep each position with prob alpha_bar_t,
    otherwise resample it from Q's column for the source token."""
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside schedule range 0..{schedule.T}")
    z0 = np.asarray(z0, dtype=np.int64)
    flags = corruption_flags(z0.size, schedule.alpha_bar[t], rng)
    columns = Q.T[z0]  # (N, K+2); row j = Q[:, z0[j]]
    return apply_noise_columns(z0, flags, columns, rng)


# --------------------------- contextual kernel ---------------------------


def contextual_rows_given_flags(model, z0: np.ndarray, flags: np.ndarray):
    """Contextual substitution rows for the flagged residue positions of z0.

    The auxiliary masked context shares the corruption flags with the main
    process: collapsing z0 and masking the flagged residues gives one
    context, and a single gradient-free forward pass yields the masked
    prediction at every flagged position at once.  Returns (latent residue
    indices, rows) where rows[i] is a distribution over the K residues.
    """
    from .model import residue_log_probs

    alphabet = model.alphabet
    z0 = np.asarray(z0, dtype=np.int64)
    nongap = np.flatnonzero(z0 != alphabet.gap_id)
    if nongap.size == 0:
        raise ValueError("z0 holds only gaps")
    ctx = z0[nongap].copy()
    ctx[flags[nongap]] = alphabet.mask_id
    out = model.forward(ctx)
    probs = np.exp(residue_log_probs(out.sub_logits.astype(np.float64), alphabet.K))
    flagged_res = flags[nongap] & (z0[nongap] != alphabet.mask_id)
    return nongap[flagged_res], probs[flagged_res]


def contextual_substitution_rows(
    model, z0: np.ndarray, t: int, schedule: NoiseSchedule, rng: np.random.Generator
):
    """Single-sample contextual kernel rows at noise level t.

    Draws one auxiliary context (each position keeps its token with
    probability alpha_bar_t, else becomes mask) and reads the model's
    residue distribution at every corrupted position.  Returns (latent
    indices, corruption flags, rows).
    """
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside schedule range 0..{schedule.T}")
    z0 = np.asarray(z0, dtype=np.int64)
    flags = corruption_flags(z0.size, schedule.alpha_bar[t], rng)
    positions, rows = contextual_rows_given_flags(model, z0, flags)
    return positions, flags, rows


# --------------------------- confidence gate ---------------------------


def mask_fraction_count(n: int, rho_mask: float) -> int:
    """Number of rows the quantile gate sends to mask (ceil with float guard)."""
    return min(n, int(math.ceil(rho_mask * n - 1e-9)))


def confidence_gate(rows: np.ndarray, rho_mask: float, K: int) -> np.ndarray:
    """Mask out the least-confident fraction of contextual rows.

    rows: (n, K) distributions over residues.  Returns (n, K+1) rows over
    residues + mask where the rho_mask-quantile of confidences (row maxima)
    and everything at or below it becomes a point mass on mask.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need at least one contextual row")
    if not 0.0 <= rho_mask <= 1.0:
        raise ValueError("rho_mask must lie in [0, 1]")
    n = rows.shape[0]
    conf = rows.max(axis=1)
    m = mask_fraction_count(n, rho_mask)
    if m == 0:
        masked = np.zeros(n, dtype=bool)
    else:
        tau_conf = np.sort(conf)[m - 1]
        masked = conf <= tau_conf
    out = np.zeros((n, K + 1))
    out[~masked, :K] = rows[~masked]
    out[masked, K] = 1.0
    return out

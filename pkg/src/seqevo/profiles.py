"""Synthetic sequence-family generator with known statistics.

A profile holds per-position emission distributions plus deletion and
insertion rates, with a designated conserved core (near-deterministic
emissions).  It doubles as a fitness oracle: the best-alignment
log-likelihood under the generative model, computed by dynamic
programming, gives desk-scale ground truth for scoring and evolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alphabet import Alphabet


@dataclass(frozen=True)
class ProfileHyper:
    emission_concentration: float = 0.35  # Dirichlet alpha for non-core positions
    core_fraction: float = 0.2
    core_emission: float = 0.97  # modal residue mass at core positions
    p_del: float = 0.03
    p_ins: float = 0.03

    def __post_init__(self):
        if not 0.0 <= self.core_fraction <= 1.0:
            raise ValueError("core_fraction must lie in [0, 1]")
        if not 0.0 <= self.p_del <= 0.3 or not 0.0 <= self.p_ins <= 0.3:
            raise ValueError("indel probabilities must lie in [0, 0.3]")
        if not 0.95 <= self.core_emission < 1.0:
            raise ValueError("core positions need max emission >= 0.95")


@dataclass(frozen=True)
class ProfileModel:
    alphabet: Alphabet
    emissions: np.ndarray  # (L_ref, K) rows sum to 1
    p_del: np.ndarray  # (L_ref,)
    p_ins: np.ndarray  # (L_ref,) geometric continuation prob after a kept position
    ins_emission: np.ndarray  # (K,) background distribution for inserted residues
    core: frozenset = field(default_factory=frozenset)  # 0-based conserved positions

    @property
    def length(self) -> int:
        return self.emissions.shape[0]

    def __post_init__(self):
        if not np.allclose(self.emissions.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("emission rows must sum to 1")
        if np.any(self.p_del < 0) or np.any(self.p_del > 0.3):
            raise ValueError("deletion probabilities must lie in [0, 0.3]")
        if np.any(self.p_ins < 0) or np.any(self.p_ins > 0.3):
            raise ValueError("insertion probabilities must lie in [0, 0.3]")
        for pos in self.core:
            if self.emissions[pos].max() < 0.95:
                raise ValueError(f"core position {pos} has max emission < 0.95")


def sample_profile(
    L_ref: int,
    hyper: ProfileHyper,
    rng: np.random.Generator,
    alphabet: Alphabet | None = None,
) -> ProfileModel:
    if L_ref < 10:
        raise ValueError("reference length must be >= 10")
    alphabet = alphabet or Alphabet()
    K = alphabet.K
    emissions = rng.dirichlet(np.full(K, hyper.emission_concentration), size=L_ref)
    n_core = int(round(hyper.core_fraction * L_ref))
    core = rng.choice(L_ref, size=n_core, replace=False) if n_core else np.array([], dtype=int)
    for pos in core:
        modal = int(rng.integers(K))
        row = rng.dirichlet(np.ones(K)) * (1.0 - hyper.core_emission)
        row[modal] += hyper.core_emission
        emissions[pos] = row / row.sum()
    return ProfileModel(
        alphabet=alphabet,
        emissions=emissions,
        p_del=np.full(L_ref, hyper.p_del),
        p_ins=np.full(L_ref, hyper.p_ins),
        ins_emission=rng.dirichlet(np.full(K, 1.0)),
        core=frozenset(int(p) for p in core),
    )


def sample_sequence(profile: ProfileModel, rng: np.random.Generator, max_attempts: int = 20):
    """Walk the profile: delete or emit each position, then run a geometric
    burst of background insertions after every kept position."""
    for _ in range(max_attempts):
        out: list[int] = []
        for i in range(profile.length):
            if rng.random() < profile.p_del[i]:
                continue
            out.append(int(rng.choice(profile.alphabet.K, p=profile.emissions[i])))
            while rng.random() < profile.p_ins[i]:
                out.append(int(rng.choice(profile.alphabet.K, p=profile.ins_emission)))
        if out:
            return np.asarray(out, dtype=np.int64)
    raise RuntimeError("degenerate profile kept producing empty sequences")


def make_corpus(profile: ProfileModel, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [sample_sequence(profile, rng) for _ in range(n)]


def profile_to_json(profile: ProfileModel) -> dict:
    return {
        "alphabet": profile.alphabet.amino_acids,
        "length": profile.length,
        "emissions": profile.emissions.tolist(),
        "p_del": profile.p_del.tolist(),
        "p_ins": profile.p_ins.tolist(),
        "ins_emission": profile.ins_emission.tolist(),
        "core": sorted(profile.core),
    }


def profile_from_json(obj: dict) -> ProfileModel:
    return ProfileModel(
        alphabet=Alphabet(obj["alphabet"]),
        emissions=np.asarray(obj["emissions"], dtype=np.float64),
        p_del=np.asarray(obj["p_del"], dtype=np.float64),
        p_ins=np.asarray(obj["p_ins"], dtype=np.float64),
        ins_emission=np.asarray(obj["ins_emission"], dtype=np.float64),
        core=frozenset(int(p) for p in obj["core"]),
    )


def loglik(profile: ProfileModel, seq: np.ndarray) -> float:
    """Best-alignment log-likelihood of seq under the generative walk.

    DP over (closed, insertion-run-open) states; the insertion-run
    recurrence is folded into a running maximum so each profile row costs
    O(|seq|) vector work.
    """
    seq = np.asarray(seq, dtype=np.int64)
    n = seq.size
    with np.errstate(divide="ignore"):
        log_e = np.log(profile.emissions)
        log_del = np.log(profile.p_del)
        log_keep = np.log1p(-profile.p_del)
        log_ins = np.log(profile.p_ins)
        log_stop = np.log1p(-profile.p_ins)
        log_bg = np.log(profile.ins_emission)

    A = np.full(n + 1, -np.inf)
    A[0] = 0.0
    for i in range(profile.length):
        nxt = A + log_del[i]  # position i deleted, nothing emitted
        if n:
            match = A[:-1] + log_keep[i] + log_e[i, seq]  # match emits seq[j] at slot j+1
            if np.isfinite(log_ins[i]):
                # closed[j] = max_{k<=j} (match[k] + insertion costs for k+1..j),
                # folded into a running maximum over match[k] - prefix_cost[k]
                g = log_ins[i] + log_bg[seq]
                S = np.concatenate(([0.0], np.cumsum(g)))
                closed = np.maximum.accumulate(match - S[1:]) + S[1:] + log_stop[i]
            else:
                closed = match + log_stop[i]
            nxt[1:] = np.maximum(nxt[1:], closed)
        A = nxt
    return float(A[n])

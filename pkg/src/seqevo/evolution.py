"""Beam-search directed evolution with pluggable filter/score oracles.

Each round expands every candidate into single-edit variants, filters,
scores, and keeps the best b.  Substitution proposals draw the new
residue from the model's substitution head at a random unprotected
position; a uniform-random proposer is included as the baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .alphabet import Alphabet
from .edits import DEL, INS, SUB, EditOp, apply_edit_script
from .model import Denoiser, residue_log_probs, sigmoid
from .profiles import ProfileModel, loglik
from .sampler import sample_categorical_rows


class Oracle(Protocol):
    def filter(self, seq: np.ndarray) -> bool: ...

    def score(self, seq: np.ndarray) -> float: ...


@dataclass(frozen=True)
class EvolveConfig:
    max_iterations: int = 20
    search_width: int = 100
    beam_size: int = 10
    retain_parents: bool = True  # guarantees monotone best score
    allow_indels: bool = False
    tau_del: float = 0.7
    tau_ins: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if min(self.search_width, self.beam_size) < 1 or self.max_iterations < 0:
            raise ValueError("width and beam must be positive, iterations non-negative")


@dataclass(eq=False)
class Candidate:
    seq: np.ndarray
    score: float
    parent: int  # index into history.lineage, -1 for the template
    edit: EditOp | None
    born: int  # iteration index

    def key(self) -> bytes:
        return self.seq.tobytes()


@dataclass
class EvolveHistory:
    iterations: list[dict] = field(default_factory=list)
    lineage: list[Candidate] = field(default_factory=list)


def propose_variants(
    model: Denoiser,
    seq: np.ndarray,
    width: int,
    rng: np.random.Generator,
    allow_indels: bool = False,
    protected: frozenset[int] = frozenset(),
    tau_del: float = 0.7,
    tau_ins: float = 0.7,
) -> list[EditOp]:
    """Single-edit, model-guided proposals for one parent (1-based positions).

    Substitutions pick a random unprotected position and draw the new
    residue from the substitution head (wild-type residue excluded).  With
    allow_indels, deletions/insertions are sampled among the sites whose
    head probability crosses its threshold.  Protected positions are never
    substituted or deleted.
    """
    seq = np.asarray(seq, dtype=np.int64)
    K = model.alphabet.K
    editable = [j for j in range(seq.size) if j not in protected]
    if not editable:
        raise ValueError("no editable positions")

    out = model.forward(seq)
    sub_probs = np.exp(residue_log_probs(out.sub_logits.astype(np.float64), K))
    del_sites: list[int] = []
    ins_sites: list[int] = []
    if allow_indels:
        del_p = sigmoid(out.del_logits.astype(np.float64))
        ins_p = sigmoid(out.ins_logits.astype(np.float64))
        del_sites = [j for j in editable if del_p[j] > tau_del and seq.size > 1]
        ins_sites = [j for j in range(seq.size) if ins_p[j] > tau_ins]

    ops: list[EditOp] = []
    for _ in range(width):
        kinds = [SUB]
        if del_sites:
            kinds.append(DEL)
        if ins_sites:
            kinds.append(INS)
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == DEL:
            j = del_sites[int(rng.integers(len(del_sites)))]
            ops.append(EditOp(DEL, j + 1, int(seq[j])))
        elif kind == INS:
            j = ins_sites[int(rng.integers(len(ins_sites)))]
            tok = int(sample_categorical_rows(sub_probs[j][None, :], rng)[0])
            ops.append(EditOp(INS, j + 1, None, tok))
        else:
            j = editable[int(rng.integers(len(editable)))]
            wt_tok = int(seq[j])
            row = sub_probs[j].copy()
            row[wt_tok] = 0.0
            if row.sum() <= 0:
                row = np.ones(K)
                row[wt_tok] = 0.0
            tok = int(sample_categorical_rows(row[None, :], rng)[0])
            ops.append(EditOp(SUB, j + 1, wt_tok, tok))
    return ops


def uniform_proposer(
    seq: np.ndarray,
    width: int,
    rng: np.random.Generator,
    K: int,
    protected: frozenset[int] = frozenset(),
) -> list[EditOp]:
    """Baseline: position and replacement residue both uniform."""
    seq = np.asarray(seq, dtype=np.int64)
    editable = [j for j in range(seq.size) if j not in protected]
    if not editable:
        raise ValueError("no editable positions")
    ops = []
    for _ in range(width):
        j = editable[int(rng.integers(len(editable)))]
        wt_tok = int(seq[j])
        tok = int(rng.integers(K - 1))
        if tok >= wt_tok:
            tok += 1
        ops.append(EditOp(SUB, j + 1, wt_tok, tok))
    return ops


def evolve(
    template: np.ndarray,
    cfg: EvolveConfig,
    oracle: Oracle,
    model: Denoiser | None,
    protected: frozenset[int] = frozenset(),
    proposer: Callable[[np.ndarray, np.random.Generator], list[EditOp]] | None = None,
) -> tuple[list[Candidate], EvolveHistory]:
    """Iterated propose / filter / score / select beam search.

    `proposer(seq, rng) -> list[EditOp]` overrides the default model-guided
    proposal (used for the uniform-random baseline).
    """
    template = np.asarray(template, dtype=np.int64)
    if not oracle.filter(template):
        raise ValueError("template fails the oracle filter")
    rng = np.random.default_rng(cfg.seed)
    history = EvolveHistory()
    root = Candidate(template, float(oracle.score(template)), -1, None, 0)
    history.lineage.append(root)
    beam = [root]

    for it in range(1, cfg.max_iterations + 1):
        pool: dict[bytes, Candidate] = {}
        n_filtered = 0
        for parent in beam:
            parent_idx = history.lineage.index(parent)
            if proposer is not None:
                ops = proposer(parent.seq, rng)
            else:
                ops = propose_variants(
                    model,
                    parent.seq,
                    cfg.search_width,
                    rng,
                    allow_indels=cfg.allow_indels,
                    protected=protected,
                    tau_del=cfg.tau_del,
                    tau_ins=cfg.tau_ins,
                )
            for op in ops:
                if op.kind == SUB and op.new == op.old:
                    continue
                child_seq = apply_edit_script(parent.seq, [op])
                key = child_seq.tobytes()
                if key in pool:
                    continue
                if not oracle.filter(child_seq):
                    n_filtered += 1
                    continue
                pool[key] = Candidate(child_seq, float(oracle.score(child_seq)), parent_idx, op, it)
        candidates = list(pool.values())
        if not candidates:
            logging.warning("evolve iteration %d: every proposal was filtered out", it)
        if cfg.retain_parents or not candidates:
            candidates.extend(beam)
        candidates.sort(key=lambda c: (-c.score, c.key()))
        beam = candidates[: cfg.beam_size]
        history.lineage.extend(c for c in beam if c.born == it)
        scores = [c.score for c in beam]
        history.iterations.append(
            {
                "iteration": it,
                "best_score": max(scores),
                "mean_score": float(np.mean(scores)),
                "pool_size": len(pool),
                "n_filtered": n_filtered,
            }
        )
    return beam, history


@dataclass
class ProfileOracle:
    """Toy stand-in for structure-based filters and scores: the filter keeps
    the conserved core intact, the score is the profile log-likelihood."""

    profile: ProfileModel
    core_tokens: dict[int, int] = field(default_factory=dict)  # template position -> token

    @classmethod
    def from_template(cls, profile: ProfileModel, template: np.ndarray) -> "ProfileOracle":
        template = np.asarray(template, dtype=np.int64)
        core_tokens = {
            pos: int(template[pos]) for pos in sorted(profile.core) if pos < template.size
        }
        return cls(profile, core_tokens)

    def filter(self, seq: np.ndarray) -> bool:
        seq = np.asarray(seq, dtype=np.int64)
        return all(pos < seq.size and seq[pos] == tok for pos, tok in self.core_tokens.items())

    def score(self, seq: np.ndarray) -> float:
        return loglik(self.profile, seq)

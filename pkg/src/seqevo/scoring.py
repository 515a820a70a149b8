"""Variant effect scoring from the denoiser heads.

Substitutions are scored mask-free: one forward pass on the unmodified
wild type, then the log-odds of mutant vs wild-type residue at each
mutated site, with the substitution head renormalized over the residues.
Deletion and insertion variants read the raw binary-head logits, using
log sigmoid(l) - log sigmoid(-l) = l.
"""

from __future__ import annotations

import numpy as np

from .alphabet import Alphabet, validate_observed
from .edits import DEL, INS, SUB, EditOp
from .model import Denoiser, residue_log_probs


def _check_sub_ops(wt: np.ndarray, muts: list[EditOp]) -> None:
    seen = set()
    for op in muts:
        if op.kind != SUB:
            raise ValueError("substitution scoring takes substitution ops only")
        if not 1 <= op.pos <= wt.size:
            raise ValueError(f"position {op.pos} out of range for length {wt.size}")
        if op.pos in seen:
            raise ValueError(f"duplicate mutation position {op.pos}")
        seen.add(op.pos)
        if wt[op.pos - 1] != op.old:
            raise ValueError(
                f"wild-type mismatch at position {op.pos}: sequence has token "
                f"{int(wt[op.pos - 1])}, mutation expects {op.old}"
            )


def _log_odds(logp: np.ndarray, muts: list[EditOp]) -> float:
    return float(sum(logp[op.pos - 1, op.new] - logp[op.pos - 1, op.old] for op in muts))


def substitution_score(model: Denoiser, wt: np.ndarray, muts: list[EditOp]) -> float:
    """Mask-free log-odds score of a substitution variant."""
    wt = validate_observed(wt, model.alphabet)
    _check_sub_ops(wt, muts)
    out = model.forward(wt)
    logp = residue_log_probs(out.sub_logits.astype(np.float64), model.alphabet.K)
    return _log_odds(logp, muts)


def masked_substitution_score(model: Denoiser, wt: np.ndarray, muts: list[EditOp]) -> float:
    """Classic masked-readout baseline: mutated sites are masked in the input."""
    wt = validate_observed(wt, model.alphabet)
    _check_sub_ops(wt, muts)
    masked = wt.copy()
    for op in muts:
        masked[op.pos - 1] = model.alphabet.mask_id
    out = model.forward(masked)
    logp = residue_log_probs(out.sub_logits.astype(np.float64), model.alphabet.K)
    return _log_odds(logp, muts)


def indel_score(model: Denoiser, wt: np.ndarray, script: list[EditOp]) -> float:
    """Score an edit script on one wild-type pass.

    Deletions add the deletion logit at the removed site; insertions add the
    insertion logit of the residue left of the insertion point (position 1
    for leading insertions); substitutions in mixed scripts add their
    log-odds.  The logit identity makes each binary term exactly
    log p(edit) - log p(keep).
    """
    wt = validate_observed(wt, model.alphabet)
    _check_sub_ops(wt, [op for op in script if op.kind == SUB])
    out = model.forward(wt)
    logp = residue_log_probs(out.sub_logits.astype(np.float64), model.alphabet.K)
    score = 0.0
    for op in script:
        if op.kind == DEL:
            if not 1 <= op.pos <= wt.size:
                raise ValueError(f"deletion position {op.pos} out of range")
            if op.old is not None and wt[op.pos - 1] != op.old:
                raise ValueError(f"wild-type mismatch at deletion position {op.pos}")
            score += float(out.del_logits[op.pos - 1])
        elif op.kind == INS:
            if not 0 <= op.pos <= wt.size:
                raise ValueError(f"insertion position {op.pos} out of range")
            score += float(out.ins_logits[max(op.pos, 1) - 1])
        else:
            score += logp[op.pos - 1, op.new] - logp[op.pos - 1, op.old]
    return score


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks on ties."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
        raise ValueError("spearman needs two equal-length non-empty vectors")
    from scipy.stats import rankdata

    rx = rankdata(xs)
    ry = rankdata(ys)
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise ValueError("rank correlation undefined: zero rank variance")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))

"""Edit scripts between observed sequences.

Operations carry 1-based wild-type coordinates, the convention used in
mutation tables ("A42G").  An insertion at position p places the new token
immediately after wild-type position p; p=0 inserts before the first
residue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alphabet import Alphabet

SUB = "sub"
DEL = "del"
INS = "ins"


@dataclass(frozen=True)
class EditOp:
    kind: str  # sub | del | ins
    pos: int  # 1-based wild-type position (0 allowed for leading insertion)
    old: int | None = None  # wild-type token (sub/del)
    new: int | None = None  # replacement or inserted token (sub/ins)

    def __post_init__(self):
        if self.kind not in (SUB, DEL, INS):
            raise ValueError(f"unknown edit kind {self.kind!r}")


def levenshtein_edit_script(wt: np.ndarray, mut: np.ndarray) -> list[EditOp]:
    """Minimum edit script turning wt into mut.

    Ties are broken deterministically: substitute, then delete, then insert.
    """
    wt = np.asarray(wt, dtype=np.int64)
    mut = np.asarray(mut, dtype=np.int64)
    if wt.size == 0 or mut.size == 0:
        raise ValueError("edit scripts need non-empty sequences")
    n, m = wt.size, mut.size
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        sub_cost = (wt[i - 1] != mut).astype(np.int64)
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + sub_cost[j - 1], D[i - 1, j] + 1, D[i, j - 1] + 1)

    ops: list[EditOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (wt[i - 1] != mut[j - 1]):
            if wt[i - 1] != mut[j - 1]:
                ops.append(EditOp(SUB, i, int(wt[i - 1]), int(mut[j - 1])))
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            ops.append(EditOp(DEL, i, int(wt[i - 1])))
            i -= 1
        else:
            ops.append(EditOp(INS, i, None, int(mut[j - 1])))
            j -= 1
    ops.reverse()
    return ops


def apply_edit_script(wt: np.ndarray, script: list[EditOp]) -> np.ndarray:
    """Apply a script (wild-type coordinates) and return the mutant."""
    wt = np.asarray(wt, dtype=np.int64)
    subs: dict[int, int] = {}
    dels: set[int] = set()
    inserts: dict[int, list[int]] = {}
    for op in script:
        if op.kind == INS:
            if not 0 <= op.pos <= wt.size:
                raise ValueError(f"insertion position {op.pos} out of range")
            inserts.setdefault(op.pos, []).append(op.new)
            continue
        if not 1 <= op.pos <= wt.size:
            raise ValueError(f"position {op.pos} out of range for length {wt.size}")
        if op.old is not None and wt[op.pos - 1] != op.old:
            raise ValueError(
                f"wild-type mismatch at position {op.pos}: "
                f"script expects token {op.old}, sequence has {int(wt[op.pos - 1])}"
            )
        if op.pos in subs or op.pos in dels:
            raise ValueError(f"conflicting edits at position {op.pos}")
        if op.kind == SUB:
            subs[op.pos] = op.new
        else:
            dels.add(op.pos)

    out: list[int] = list(inserts.get(0, []))
    for p in range(1, wt.size + 1):
        if p in dels:
            pass
        elif p in subs:
            out.append(subs[p])
        else:
            out.append(int(wt[p - 1]))
        out.extend(inserts.get(p, []))
    return np.asarray(out, dtype=np.int64)


def format_edit_script(script: list[EditOp], alphabet: Alphabet) -> str:
    """Render as the compact text form, e.g. "del42;insA101;sub7K>R"."""
    parts = []
    for op in script:
        if op.kind == DEL:
            parts.append(f"del{op.pos}")
        elif op.kind == INS:
            parts.append(f"ins{alphabet.decode([op.new])}{op.pos}")
        else:
            parts.append(f"sub{op.pos}{alphabet.decode([op.old])}>{alphabet.decode([op.new])}")
    return ";".join(parts)

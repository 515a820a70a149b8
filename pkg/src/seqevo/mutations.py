"""Variant string and mutation table parsing.

Two variant grammars, auto-detected per row:
  point mutations   "A42G" or multi-site "A42G:K100R"
  edit scripts      "del42;insA101;sub7K>R"  (ins position = residue to the
                    left of the insertion point, 0 for a leading insertion)

Mutation tables are CSV with a `variant` column and optionally a numeric
column of experimental values.
"""

from __future__ import annotations

import csv
import io
import re

from .alphabet import Alphabet
from .edits import DEL, INS, SUB, EditOp

_POINT = re.compile(r"^([A-Za-z])(\d+)([A-Za-z])$")
_DEL = re.compile(r"^del(\d+)$")
_INS = re.compile(r"^ins([A-Za-z])(\d+)$")
_SUB = re.compile(r"^sub(\d+)([A-Za-z])>([A-Za-z])$")


class MutationFormatError(ValueError):
    pass


def _residue_id(letter: str, alphabet: Alphabet) -> int:
    tok = alphabet.encode(letter.upper())[0]
    if not alphabet.is_residue(tok):
        raise MutationFormatError(f"{letter!r} is not a residue letter")
    return int(tok)


def parse_variant(text: str, alphabet: Alphabet) -> list[EditOp]:
    """Parse either grammar into an edit script."""
    text = text.strip()
    if not text or text.upper() == "WT":
        return []
    if ";" in text or text.startswith(("del", "ins", "sub")):
        ops = []
        for part in text.split(";"):
            part = part.strip()
            if not part:
                continue
            if m := _DEL.match(part):
                ops.append(EditOp(DEL, int(m.group(1))))
            elif m := _INS.match(part):
                ops.append(EditOp(INS, int(m.group(2)), None, _residue_id(m.group(1), alphabet)))
            elif m := _SUB.match(part):
                ops.append(
                    EditOp(
                        SUB,
                        int(m.group(1)),
                        _residue_id(m.group(2), alphabet),
                        _residue_id(m.group(3), alphabet),
                    )
                )
            else:
                raise MutationFormatError(f"cannot parse edit op {part!r}")
        return ops
    ops = []
    for part in text.split(":"):
        m = _POINT.match(part.strip())
        if not m:
            raise MutationFormatError(f"cannot parse point mutation {part!r}")
        ops.append(
            EditOp(
                SUB,
                int(m.group(2)),
                _residue_id(m.group(1), alphabet),
                _residue_id(m.group(3), alphabet),
            )
        )
    return ops


def format_variant(ops: list[EditOp], alphabet: Alphabet) -> str:
    """Render point-mutation sets compactly, everything else as a script."""
    if not ops:
        return "WT"
    if all(op.kind == SUB for op in ops):
        return ":".join(
            f"{alphabet.decode([op.old])}{op.pos}{alphabet.decode([op.new])}" for op in ops
        )
    parts = []
    for op in ops:
        if op.kind == DEL:
            parts.append(f"del{op.pos}")
        elif op.kind == INS:
            parts.append(f"ins{alphabet.decode([op.new])}{op.pos}")
        else:
            parts.append(f"sub{op.pos}{alphabet.decode([op.old])}>{alphabet.decode([op.new])}")
    return ";".join(parts)


def read_mutation_table(text: str, alphabet: Alphabet):
    """Parse a variant CSV.

    Returns (variants, values) where variants is a list of edit scripts and
    values a list of floats or None when the value column is absent/empty.
    """
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise MutationFormatError("empty mutation table")
    header = [cell.strip().lower() for cell in rows[0]]
    if "variant" not in header:
        raise MutationFormatError("mutation table needs a 'variant' column")
    vcol = header.index("variant")
    value_col = None
    for i, name in enumerate(header):
        if i != vcol and name not in ("", "score"):
            value_col = i
            break
    variants, values = [], []
    for ln, row in enumerate(rows[1:], start=2):
        try:
            variants.append(parse_variant(row[vcol], alphabet))
        except MutationFormatError as exc:
            raise MutationFormatError(f"row {ln}: {exc}") from exc
        if value_col is not None and value_col < len(row) and row[value_col].strip():
            values.append(float(row[value_col]))
        else:
            values.append(None)
    return variants, values


def write_score_table(variants, scores, alphabet: Alphabet) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["variant", "score"])
    for ops, score in zip(variants, scores):
        writer.writerow([format_variant(ops, alphabet), repr(float(score))])
    return out.getvalue()

"""Minimal FASTA reading and writing (60-column wrapped)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alphabet import Alphabet

WRAP = 60


class FastaError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class FastaRecord:
    id: str
    description: str = ""
    seq: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def parse_fasta(text: str, alphabet: Alphabet) -> list[FastaRecord]:
    records: list[FastaRecord] = []
    current: FastaRecord | None = None
    chunks: list[str] = []

    def finish():
        if current is None:
            return
        seq = "".join(chunks)
        if not seq:
            raise FastaError(f"record {current.id!r} has an empty sequence", header_line)
        current.seq = alphabet.encode(seq)
        records.append(current)

    header_line = 0
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            finish()
            header = line[1:].strip()
            if not header:
                raise FastaError("empty FASTA header", ln)
            parts = header.split(None, 1)
            current = FastaRecord(parts[0], parts[1] if len(parts) > 1 else "")
            chunks = []
            header_line = ln
        else:
            if current is None:
                raise FastaError("sequence data before any header", ln)
            try:
                alphabet.encode(line)
            except ValueError as exc:
                raise FastaError(str(exc), ln) from exc
            chunks.append(line)
    finish()
    return records


def write_fasta(records: list[FastaRecord], alphabet: Alphabet) -> str:
    out = []
    for rec in records:
        header = f">{rec.id}"
        if rec.description:
            header += f" {rec.description}"
        out.append(header)
        seq = alphabet.decode(rec.seq)
        out.extend(seq[i : i + WRAP] for i in range(0, len(seq), WRAP))
    return "\n".join(out) + "\n" if out else ""


def read_fasta_file(path, alphabet: Alphabet) -> list[FastaRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_fasta(fh.read(), alphabet)


def write_fasta_file(path, records: list[FastaRecord], alphabet: Alphabet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_fasta(records, alphabet))

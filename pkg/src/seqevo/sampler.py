"""Iterative edit-based sampling: delete, insert, substitute, renoise.

Each step runs the binary heads over the current noisy index set, applies
threshold-crossing deletions and mask-token insertions, fills every noisy
position from the substitution head, routes the least-confident fraction
(linearly shrinking with t) into the next noisy set, and renoises those
positions from the configured kernel.  Frozen positions are never edited.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .alphabet import Alphabet
from .kernels import blosum62_scores, blosum_substitution_kernel, sample_categorical_rows
from .model import Denoiser, log_softmax, residue_log_probs, sigmoid

RENOISE_MODES = ("contextual", "blosum", "uniform", "mask")


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 100
    tau_del: float = 0.7
    tau_ins: float = 0.7
    renoise: str = "contextual"
    L_init: int = 100
    seed: int = 0
    blosum_tau: float = 1.0
    # operation gating: edits only fire for t inside [lo, hi]; None = always
    del_steps: tuple[int, int] | None = None
    ins_steps: tuple[int, int] | None = None

    def __post_init__(self):
        if not (0.0 < self.tau_del < 1.0 and 0.0 < self.tau_ins < 1.0):
            raise ValueError("thresholds must lie strictly inside (0, 1)")
        if self.renoise not in RENOISE_MODES:
            raise ValueError(f"unknown renoise mode {self.renoise!r}")
        if self.T < 1 or self.L_init < 1:
            raise ValueError("T and L_init must be positive")

    def del_active(self, t: int) -> bool:
        return self.del_steps is None or self.del_steps[0] <= t <= self.del_steps[1]

    def ins_active(self, t: int) -> bool:
        return self.ins_steps is None or self.ins_steps[0] <= t <= self.ins_steps[1]


@dataclass
class StepRecord:
    t: int
    dels: list[int]  # positions removed, pre-deletion coordinates
    ins: list[int]  # mask inserted right of these post-deletion coordinates
    subs: list[tuple[int, int, int]]  # (post-insertion position, old, new)
    renoised: list[tuple[int, int]]  # (position, token drawn by the noise kernel)
    seq: np.ndarray  # snapshot of x_{t-1}
    aborted: bool = False  # deletions would have emptied the sequence
    del_prob_mean: float = 0.0
    ins_prob_mean: float = 0.0


@dataclass
class Trajectory:
    x_init: np.ndarray
    steps: list[StepRecord] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.steps[-1].seq if self.steps else self.x_init


def kt_schedule(t: int, T: int) -> float:
    """Fraction of positions renoised for step t-1: linear 100% -> 0%."""
    if not 1 <= t <= T:
        raise ValueError(f"t={t} outside 1..{T}")
    return (t - 1) / T


def init_from_prior(model: Denoiser, L_init: int, rng: np.random.Generator):
    """Sample x_T positionwise from the substitution head on an all-mask input."""
    if not 1 <= L_init <= model.config.max_len:
        raise ValueError(f"L_init must lie in 1..{model.config.max_len}")
    ab = model.alphabet
    out = model.forward(np.full(L_init, ab.mask_id, dtype=np.int64))
    probs = np.exp(residue_log_probs(out.sub_logits.astype(np.float64), ab.K))
    x = sample_categorical_rows(probs, rng)
    return x.astype(np.int64), set(range(L_init))


def _shift_after_deletion(indices: set[int], deleted: list[int]) -> set[int]:
    """Map surviving indices to post-deletion coordinates."""
    deleted_arr = np.asarray(sorted(deleted))
    return {int(j - np.searchsorted(deleted_arr, j)) for j in indices}


def _renoise_token(mode, sub_probs_row, current_token, blosum_cols, K, rng) -> int:
    if mode == "mask":
        return K  # mask id
    if mode == "uniform":
        return int(rng.integers(K))
    if mode == "blosum":
        return int(sample_categorical_rows(blosum_cols[:, current_token][None, :], rng)[0])
    return int(sample_categorical_rows(sub_probs_row[None, :], rng)[0])


def denoise_step(
    model: Denoiser,
    x: np.ndarray,
    noisy: set[int],
    t: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    frozen: set[int] | None = None,
) -> tuple[np.ndarray, set[int], StepRecord]:
    ab = model.alphabet
    K = ab.K
    frozen = frozen or set()
    x = np.asarray(x, dtype=np.int64)

    head = model.forward(x)
    del_p = sigmoid(head.del_logits.astype(np.float64))
    ins_p = sigmoid(head.ins_logits.astype(np.float64))
    record = StepRecord(
        t, [], [], [], [], x, del_prob_mean=float(del_p.mean()), ins_prob_mean=float(ins_p.mean())
    )

    # 1) deletions over the noisy set
    dels = sorted(j for j in noisy if cfg.del_active(t) and del_p[j] > cfg.tau_del)
    if len(dels) == len(x):
        record.aborted = True
        record.seq = x
        return x, set(noisy), record
    keep = np.setdiff1d(np.arange(x.size), dels)
    x1 = x[keep]
    survivors = noisy.difference(dels)
    # insertion candidates use the pre-step head outputs carried through the shift
    ins_src = {j for j in survivors if cfg.ins_active(t) and ins_p[j] > cfg.tau_ins}
    if dels:
        noisy1 = _shift_after_deletion(survivors, dels)
        frozen1 = _shift_after_deletion(frozen, dels)
        ins_at = sorted(_shift_after_deletion(ins_src, dels))
    else:
        noisy1, frozen1, ins_at = set(survivors), set(frozen), sorted(ins_src)

    # 2) insert a mask token right of each crossing position
    x2 = []
    noisy2: set[int] = set()
    frozen2: set[int] = set()
    pos_new = 0
    ins_set = set(ins_at)
    for j, tok in enumerate(x1):
        if j in noisy1:
            noisy2.add(pos_new)
        if j in frozen1:
            frozen2.add(pos_new)
        x2.append(int(tok))
        pos_new += 1
        if j in ins_set:
            x2.append(ab.mask_id)
            noisy2.add(pos_new)
            pos_new += 1
    x2 = np.asarray(x2, dtype=np.int64)

    # 3) substitute every noisy position from a fresh pass, route low confidence
    out = model.forward(x2)
    sub_probs = np.exp(residue_log_probs(out.sub_logits.astype(np.float64), K))
    x3 = x2.copy()
    subs = []
    for j in sorted(noisy2):
        new = int(sample_categorical_rows(sub_probs[j][None, :], rng)[0])
        subs.append((j, int(x2[j]), new))
        x3[j] = new
    eligible = [j for j in range(x3.size) if j not in frozen2]
    conf = np.array([sub_probs[j, x3[j]] if x3[j] < K else 0.0 for j in eligible])
    n_route = int(kt_schedule(t, cfg.T) * len(eligible) + 0.5)
    order = np.lexsort((eligible, conf))  # lowest confidence first, ties by index
    routed = {int(eligible[i]) for i in order[:n_route]}

    # 4) renoise the routed positions from the configured kernel
    blosum_cols = None
    if cfg.renoise == "blosum":
        blosum_cols = blosum_substitution_kernel(blosum62_scores(ab), cfg.blosum_tau).T
    x4 = x3.copy()
    renoised = []
    for j in sorted(routed):
        tok = _renoise_token(cfg.renoise, sub_probs[j], int(x3[j]), blosum_cols, K, rng)
        x4[j] = tok
        renoised.append((j, tok))

    record.dels = dels
    record.ins = ins_at
    record.subs = subs
    record.renoised = renoised
    record.seq = x4
    return x4, routed, record


def generate(
    model: Denoiser,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
    frozen: set[int] | None = None,
    x_init: np.ndarray | None = None,
) -> tuple[np.ndarray, Trajectory]:
    """Draw x_T from the learned prior and run T denoising steps."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    frozen = frozen or set()
    if x_init is not None:
        x = np.asarray(x_init, dtype=np.int64)
        noisy = set(range(x.size)) - frozen
    else:
        x, noisy = init_from_prior(model, cfg.L_init, rng)
        noisy -= frozen
    traj = Trajectory(x_init=x.copy())
    for t in range(cfg.T, 0, -1):
        x, noisy, record = denoise_step(model, x, noisy, t, cfg, rng, frozen)
        traj.steps.append(record)
        # frozen indices move with the recorded edits
        if record.dels:
            frozen = _shift_after_deletion(frozen, record.dels)
        if record.ins:
            ins_arr = np.asarray(record.ins)
            frozen = {int(j + np.searchsorted(ins_arr, j)) for j in frozen}
    return traj.final, traj


# --------------------------- replay and serialization ---------------------------


def replay_step(x: np.ndarray, record: StepRecord, mask_id: int) -> np.ndarray:
    """Reconstruct x_{t-1} from x_t and a step record."""
    if record.aborted:
        return x.copy()
    keep = np.setdiff1d(np.arange(x.size), record.dels)
    x = x[keep]
    out = []
    ins_set = set(record.ins)
    for j, tok in enumerate(x):
        out.append(int(tok))
        if j in ins_set:
            out.append(mask_id)
    x = np.asarray(out, dtype=np.int64)
    for pos, old, new in record.subs:
        if x[pos] != old:
            raise ValueError(f"replay mismatch at position {pos}: {x[pos]} != {old}")
        x[pos] = new
    for pos, tok in record.renoised:
        x[pos] = tok
    return x


def replay(trajectory: Trajectory, mask_id: int) -> np.ndarray:
    x = trajectory.x_init.copy()
    for record in trajectory.steps:
        x = replay_step(x, record, mask_id)
    return x


def trajectory_to_jsonl(trajectory: Trajectory, alphabet: Alphabet) -> str:
    """One record per step: {t, seq, dels, ins, subs, renoised}."""
    lines = []
    for rec in trajectory.steps:
        lines.append(
            json.dumps(
                {
                    "t": rec.t,
                    "seq": alphabet.decode(rec.seq),
                    "dels": rec.dels,
                    "ins": rec.ins,
                    "subs": [
                        [pos, alphabet.decode([old]), alphabet.decode([new])]
                        for pos, old, new in rec.subs
                    ],
                    "renoised": [pos for pos, _ in rec.renoised],
                }
            )
        )
    return "\n".join(lines) + "\n" if lines else ""


def trajectory_from_jsonl(text: str, alphabet: Alphabet, x_init: np.ndarray) -> Trajectory:
    """Rebuild a trajectory from its JSONL form; renoised tokens are recovered
    from the per-step sequence snapshots."""
    traj = Trajectory(x_init=np.asarray(x_init, dtype=np.int64))
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        seq = alphabet.encode(obj["seq"])
        renoised = [(pos, int(seq[pos])) for pos in obj["renoised"]]
        traj.steps.append(
            StepRecord(
                t=obj["t"],
                dels=list(obj["dels"]),
                ins=list(obj["ins"]),
                subs=[
                    (pos, int(alphabet.encode(old)[0]), int(alphabet.encode(new)[0]))
                    for pos, old, new in obj["subs"]
                ],
                renoised=renoised,
                seq=seq,
            )
        )
    return traj

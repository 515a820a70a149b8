"""Training-example construction and the two-phase training loop.

Corruption happens in latent space; the network only ever sees the
collapsed noisy sequence.  Targets are mapped back through the index map:
a position whose latent source was a gap is a deletion target, a slot
with skipped-over residues to its right is an insertion target, and a
changed residue (or mask) is a substitution target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .alignment import EmptyCollapseError, collapse, index_map, next_nongap, random_alignment
from .alphabet import Alphabet
from .kernels import (
    KernelParams,
    NoiseSchedule,
    apply_noise_columns,
    blosum62_scores,
    blosum_substitution_kernel,
    build_transition_matrix,
    confidence_gate,
    contextual_rows_given_flags,
    corruption_flags,
    make_schedule,
    uniform_substitution_kernel,
)
from .model import (
    AdamState,
    Denoiser,
    DenoiserConfig,
    DenoiserOutput,
    apply_update,
    backward_batch,
    forward_batch,
    init_adam,
    init_params,
    log_softmax,
)

KERNEL_MODES = ("mask", "uniform", "blosum", "contextual")


@dataclass(frozen=True)
class LossWeights:
    gamma_sub: float = 1.0
    gamma_del: float = 0.5
    gamma_ins: float = 0.5
    lambda_mode: str = "constant"  # constant | inv_t

    def __post_init__(self):
        if max(self.gamma_sub, self.gamma_del, self.gamma_ins) <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.lambda_mode not in ("constant", "inv_t"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")

    def lam(self, t: int) -> float:
        return 1.0 if self.lambda_mode == "constant" else 1.0 / t


@dataclass
class TrainExample:
    tokens: np.ndarray  # collapsed noisy sequence x_t
    sub_targets: np.ndarray  # per position, target token or -1 when inactive
    y_del: np.ndarray  # 1 where the latent source was a gap (noise insertion)
    y_ins: np.ndarray  # 1 where reconstruction needs an insertion to the right
    t: int
    lam: float


@dataclass
class TrainBatch:
    tokens: np.ndarray  # (B, Tmax) padded
    lengths: np.ndarray  # (B,)
    sub_targets: np.ndarray  # (B, Tmax), -1 inactive/padding
    y_del: np.ndarray  # (B, Tmax)
    y_ins: np.ndarray  # (B, Tmax)
    lam: np.ndarray  # (B,)
    ts: np.ndarray  # (B,)


@dataclass
class LossBreakdown:
    l_sub: float
    l_del: float
    l_ins: float
    total: float


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    warmup_steps: int = 500  # mask-kernel phase; also the lr ramp length
    lr_peak: float = 2e-3
    lr_floor: float = 2e-4
    T: int = 100
    schedule: str = "linear"
    kernel: KernelParams = field(default_factory=KernelParams)
    main_kernel: str = "contextual"  # kernel after the warmup phase
    blosum_tau: float = 1.0
    batch_size: int = 16
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    model: DenoiserConfig | None = None
    max_retries: int = 3  # bounded resampling when a draw collapses to empty

    def __post_init__(self):
        if self.warmup_steps > self.steps:
            raise ValueError("warmup_steps cannot exceed steps")
        if self.main_kernel not in KERNEL_MODES:
            raise ValueError(f"unknown kernel mode {self.main_kernel!r}")


class ExampleSkipped(RuntimeError):
    """A training draw kept collapsing to the empty sequence."""


# --------------------------- target construction ---------------------------


def targets_from_alignment_pair(z0: np.ndarray, zt: np.ndarray, alphabet: Alphabet):
    """Observed-space targets for a (clean, corrupted) latent pair.

    Returns (x_t, sub_targets, y_del, y_ins); raises EmptyCollapseError when
    zt holds only gaps.
    """
    z0 = np.asarray(z0, dtype=np.int64)
    zt = np.asarray(zt, dtype=np.int64)
    if z0.shape != zt.shape:
        raise ValueError("latent pair must have equal length")
    gap = alphabet.gap_id
    imap = index_map(zt, alphabet)
    if imap.size == 0:
        raise EmptyCollapseError("corrupted alignment collapses to an empty sequence")
    x_t = zt[imap]
    L_t = imap.size
    sub_targets = np.full(L_t, -1, dtype=np.int64)
    y_del = np.zeros(L_t)
    y_ins = np.zeros(L_t)
    for k in range(L_t):
        j = imap[k]
        if z0[j] == gap:
            y_del[k] = 1.0
        elif z0[j] != zt[j]:
            sub_targets[k] = z0[j]
        if next_nongap(z0, imap, k, alphabet) is not None:
            y_ins[k] = 1.0
    return x_t, sub_targets, y_del, y_ins


def static_substitution_kernel(mode: str, alphabet: Alphabet, blosum_tau: float) -> np.ndarray:
    """Column-stochastic K x K kernel for the static modes."""
    if mode in ("mask", "uniform"):
        return uniform_substitution_kernel(alphabet.K)
    if mode == "blosum":
        return blosum_substitution_kernel(blosum62_scores(alphabet), blosum_tau).T
    raise ValueError(f"no static kernel for mode {mode!r}")


def noise_columns(
    mode: str,
    z0: np.ndarray,
    flags: np.ndarray,
    params: KernelParams,
    alphabet: Alphabet,
    model: Denoiser | None,
    blosum_tau: float,
) -> np.ndarray:
    """Per-position target distributions (N, K+2) for flagged positions.

    Static modes replicate the matching column of Q; contextual mode runs
    one gradient-free pass of the model on the partially masked context and
    routes the gated rows through the usual deletion/insertion rates.
    Without a model, contextual falls back to masking (the warmup kernel).
    """
    K, mask, gap = alphabet.K, alphabet.mask_id, alphabet.gap_id
    wd, wi = params.omega_del, params.omega_ins
    if mode == "contextual" and model is None:
        mode = "mask"
    if mode != "contextual":
        rho = 1.0 if mode == "mask" else params.rho_mask
        Q = build_transition_matrix(
            replace(params, rho_mask=rho), static_substitution_kernel(mode, alphabet, blosum_tau)
        )
        return Q.T[z0]

    columns = np.zeros((z0.size, K + 2))
    is_gap = z0 == gap
    is_mask = z0 == mask
    is_res = ~is_gap & ~is_mask
    columns[is_gap, :K] = wi / K
    columns[is_gap, gap] = 1.0 - wi
    columns[is_mask, mask] = 1.0
    res_flagged = np.flatnonzero(is_res & flags)
    if res_flagged.size:
        _, rows = contextual_rows_given_flags(model, z0, flags)
        gated = confidence_gate(rows, params.rho_mask, K)  # (n, K+1): residues + mask
        columns[res_flagged, : K + 1] = (1.0 - wd) * gated
        columns[res_flagged, gap] = wd
    return columns


def make_training_example(
    x0: np.ndarray,
    cfg: TrainingConfig,
    schedule: NoiseSchedule,
    alphabet: Alphabet,
    model: Denoiser | None,
    rng: np.random.Generator,
    kernel_mode: str | None = None,
) -> TrainExample:
    """Draw t, align, corrupt, collapse, and derive targets for one sequence."""
    mode = kernel_mode or cfg.main_kernel
    for _ in range(cfg.max_retries):
        t = int(rng.integers(1, schedule.T + 1))
        z0 = random_alignment(x0, alphabet, rng)
        flags = corruption_flags(z0.size, schedule.alpha_bar[t], rng)
        columns = noise_columns(mode, z0, flags, cfg.kernel, alphabet, model, cfg.blosum_tau)
        zt = apply_noise_columns(z0, flags, columns, rng)
        try:
            x_t, sub_targets, y_del, y_ins = targets_from_alignment_pair(z0, zt, alphabet)
        except EmptyCollapseError:
            continue
        return TrainExample(x_t, sub_targets, y_del, y_ins, t, cfg.weights.lam(t))
    raise ExampleSkipped(f"sequence of length {x0.size} collapsed empty {cfg.max_retries} times")


def collate(examples: list[TrainExample]) -> TrainBatch:
    B = len(examples)
    Tmax = max(ex.tokens.size for ex in examples)
    tokens = np.zeros((B, Tmax), dtype=np.int64)
    sub_targets = np.full((B, Tmax), -1, dtype=np.int64)
    y_del = np.zeros((B, Tmax))
    y_ins = np.zeros((B, Tmax))
    lengths = np.zeros(B, dtype=np.int64)
    lam = np.zeros(B)
    ts = np.zeros(B, dtype=np.int64)
    for b, ex in enumerate(examples):
        L = ex.tokens.size
        lengths[b] = L
        tokens[b, :L] = ex.tokens
        sub_targets[b, :L] = ex.sub_targets
        y_del[b, :L] = ex.y_del
        y_ins[b, :L] = ex.y_ins
        lam[b] = ex.lam
        ts[b] = ex.t
    return TrainBatch(tokens, lengths, sub_targets, y_del, y_ins, lam, ts)


# --------------------------- losses ---------------------------


def _bce_from_logits(y: np.ndarray, logits: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, logits) - y * logits


def decomposed_losses(
    output: DenoiserOutput, example: TrainExample, weights: LossWeights
) -> LossBreakdown:
    """Per-sequence loss terms; cross-entropy over the K+1 output tokens for
    active substitution positions, BCE everywhere for the binary heads."""
    logp = log_softmax(output.sub_logits.astype(np.float64))
    active = example.sub_targets >= 0
    l_sub = float(-logp[active, example.sub_targets[active]].sum()) if active.any() else 0.0
    l_del = float(_bce_from_logits(example.y_del, output.del_logits.astype(np.float64)).sum())
    l_ins = float(_bce_from_logits(example.y_ins, output.ins_logits.astype(np.float64)).sum())
    w = weights
    total = example.lam * (w.gamma_sub * l_sub + w.gamma_del * l_del + w.gamma_ins * l_ins)
    return LossBreakdown(l_sub, l_del, l_ins, total)


def loss_and_gradients(
    params: dict, model_cfg: DenoiserConfig, batch: TrainBatch, weights: LossWeights
) -> tuple[LossBreakdown, dict]:
    """Batched loss plus exact analytic gradients of the weighted total."""
    sub_logits, del_logits, ins_logits, cache = forward_batch(
        params, model_cfg, batch.tokens, batch.lengths
    )
    B, Tmax = batch.tokens.shape
    valid = np.arange(Tmax)[None, :] < batch.lengths[:, None]
    active = (batch.sub_targets >= 0) & valid
    logp = log_softmax(sub_logits.astype(np.float64))
    w = weights

    l_sub = 0.0
    if active.any():
        be, ke = np.nonzero(active)
        l_sub = float(-logp[be, ke, batch.sub_targets[be, ke]].sum())
    dl64 = del_logits.astype(np.float64)
    il64 = ins_logits.astype(np.float64)
    l_del = float(_bce_from_logits(batch.y_del, dl64)[valid].sum())
    l_ins = float(_bce_from_logits(batch.y_ins, il64)[valid].sum())
    per_example = np.zeros(B)
    for b in range(B):
        v = valid[b]
        a = active[b]
        ls = float(-logp[b, a, batch.sub_targets[b, a]].sum()) if a.any() else 0.0
        ld = float(_bce_from_logits(batch.y_del[b, v], dl64[b, v]).sum())
        li = float(_bce_from_logits(batch.y_ins[b, v], il64[b, v]).sum())
        per_example[b] = batch.lam[b] * (w.gamma_sub * ls + w.gamma_del * ld + w.gamma_ins * li)
    total = float(per_example.sum())
    if not np.isfinite(total):
        raise FloatingPointError("non-finite training loss (divergence)")

    # gradients of the weighted total w.r.t. the head logits
    scale = batch.lam[:, None]  # lambda_{t-1} per example
    d_sub = np.exp(logp)
    onehot = np.zeros_like(d_sub)
    if active.any():
        onehot[be, ke, batch.sub_targets[be, ke]] = 1.0
    d_sub = (d_sub - onehot) * active[:, :, None] * (w.gamma_sub * scale[:, :, None])
    d_del = (1.0 / (1.0 + np.exp(-dl64)) - batch.y_del) * valid * (w.gamma_del * scale)
    d_ins = (1.0 / (1.0 + np.exp(-il64)) - batch.y_ins) * valid * (w.gamma_ins * scale)

    dtype = params["embed"].dtype
    grads = backward_batch(
        params, model_cfg, cache, d_sub.astype(dtype), d_del.astype(dtype), d_ins.astype(dtype)
    )
    return LossBreakdown(l_sub, l_del, l_ins, total), grads


# --------------------------- training loop ---------------------------


def lr_at(step: int, cfg: TrainingConfig) -> float:
    """Linear ramp to lr_peak over the warmup, then linear decay to lr_floor."""
    if cfg.warmup_steps and step <= cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    tail = max(cfg.steps - cfg.warmup_steps, 1)
    frac = (step - cfg.warmup_steps) / tail
    return cfg.lr_peak + (cfg.lr_floor - cfg.lr_peak) * frac


def evaluation_examples(
    corpus: list[np.ndarray],
    cfg: TrainingConfig,
    schedule: NoiseSchedule,
    alphabet: Alphabet,
    seed: int,
) -> list[TrainExample]:
    """Fixed held-out examples, always noised with the mask kernel so losses
    are comparable across training phases."""
    rng = np.random.default_rng(seed)
    out = []
    for x0 in corpus:
        try:
            out.append(
                make_training_example(x0, cfg, schedule, alphabet, None, rng, kernel_mode="mask")
            )
        except ExampleSkipped:
            continue
    return out


def eval_loss(model: Denoiser, examples: list[TrainExample], weights: LossWeights) -> float:
    """Mean per-example weighted loss on pre-noised examples."""
    if not examples:
        raise ValueError("no evaluation examples")
    total = 0.0
    for ex in examples:
        out = model.forward(ex.tokens)
        total += decomposed_losses(out, ex, weights).total
    return total / len(examples)


@dataclass
class TrainResult:
    model: Denoiser
    metrics: list[dict]
    heldout_before: float | None
    heldout_after: float | None
    adam: AdamState
    skipped: int


def train(
    corpus: list[np.ndarray],
    cfg: TrainingConfig,
    alphabet: Alphabet,
    heldout: list[np.ndarray] | None = None,
    metrics_path=None,
    log_every: int = 1,
) -> TrainResult:
    """Run the warmup (mask-kernel) phase, then switch to the configured
    kernel with the live model supplying on-policy contextual noise."""
    if not corpus:
        raise ValueError("empty training corpus")
    schedule = make_schedule(cfg.schedule, cfg.T)
    model_cfg = cfg.model or DenoiserConfig(vocab_size=alphabet.K + 1)
    rng = np.random.default_rng(cfg.seed)
    model = Denoiser(alphabet, model_cfg, init_params(model_cfg, rng))
    adam = init_adam(model.params)

    eval_examples = None
    before = after = None
    if heldout:
        eval_examples = evaluation_examples(corpus=heldout, cfg=cfg, schedule=schedule,
                                            alphabet=alphabet, seed=cfg.seed + 987654321)
        before = eval_loss(model, eval_examples, cfg.weights)

    metrics: list[dict] = []
    skipped = 0
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for step in range(1, cfg.steps + 1):
            mode = "mask" if step <= cfg.warmup_steps else cfg.main_kernel
            snapshot = model if mode == "contextual" else None
            examples = []
            while len(examples) < cfg.batch_size:
                x0 = corpus[int(rng.integers(len(corpus)))]
                try:
                    examples.append(
                        make_training_example(
                            x0, cfg, schedule, alphabet, snapshot, rng, kernel_mode=mode
                        )
                    )
                except ExampleSkipped:
                    skipped += 1
            batch = collate(examples)
            breakdown, grads = loss_and_gradients(model.params, model_cfg, batch, cfg.weights)
            lr = lr_at(step, cfg)
            new_params, adam = apply_update(model.params, grads, adam, lr)
            model = Denoiser(alphabet, model_cfg, new_params)
            if step % log_every == 0 or step == cfg.steps:
                rec = {
                    "step": step,
                    "L_sub": breakdown.l_sub / cfg.batch_size,
                    "L_del": breakdown.l_del / cfg.batch_size,
                    "L_ins": breakdown.l_ins / cfg.batch_size,
                    "total": breakdown.total / cfg.batch_size,
                    "lr": lr,
                    "kernel_mode": mode,
                }
                metrics.append(rec)
                if sink:
                    sink.write(json.dumps(rec) + "\n")
    finally:
        if sink:
            sink.close()

    if eval_examples:
        after = eval_loss(model, eval_examples, cfg.weights)
    return TrainResult(model, metrics, before, after, adam, skipped)

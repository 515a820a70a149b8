"""Three-headed bidirectional denoiser over collapsed sequences.

A small pre-norm transformer implemented directly in numpy, with exact
analytic gradients (verified against central finite differences in the
test suite).  Inputs are observed-space tokens (residues + mask); the gap
token never enters the network.  Per position the model emits K+1
substitution logits, one deletion logit and one insertion logit through
separate, independent heads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .alphabet import Alphabet

LN_EPS = 1e-5
ATTN_NEG = -1e9


@dataclass(frozen=True)
class DenoiserConfig:
    vocab_size: int  # K + 1 input/output tokens (residues + mask)
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ff_dim: int = 128
    max_len: int = 256
    use_positional: bool = True  # test configs disable to expose symmetry

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed_dim must be divisible by num_heads")
        if self.vocab_size < 3:
            raise ValueError("vocab_size must cover at least 2 residues + mask")


@dataclass
class DenoiserOutput:
    sub_logits: np.ndarray  # (L, K+1)
    del_logits: np.ndarray  # (L,)
    ins_logits: np.ndarray  # (L,)


def init_params(cfg: DenoiserConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """Fresh parameter set; 0.02-std normals keep the initial heads near-uniform."""
    d, f, v = cfg.embed_dim, cfg.ff_dim, cfg.vocab_size

    def w(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    p = {"embed": w(v, d)}
    for i in range(cfg.num_layers):
        pre = f"layers.{i}."
        p[pre + "ln1.g"] = np.ones(d, dtype=dtype)
        p[pre + "ln1.b"] = zeros(d)
        for name in ("wq", "wk", "wv", "wo"):
            p[pre + "attn." + name] = w(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + name] = zeros(d)
        p[pre + "ln2.g"] = np.ones(d, dtype=dtype)
        p[pre + "ln2.b"] = zeros(d)
        p[pre + "ff.w1"] = w(d, f)
        p[pre + "ff.b1"] = zeros(f)
        p[pre + "ff.w2"] = w(f, d)
        p[pre + "ff.b2"] = zeros(d)
    p["ln_f.g"] = np.ones(d, dtype=dtype)
    p["ln_f.b"] = zeros(d)
    p["head_sub.w"] = w(d, v)
    p["head_sub.b"] = zeros(v)
    p["head_del.w"] = w(d)
    p["head_del.b"] = zeros(1)
    p["head_ins.w"] = w(d)
    p["head_ins.b"] = zeros(1)
    return p


def sinusoidal_positions(T: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / d)
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe.astype(dtype)


# --------------------------- primitives ---------------------------


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _ln_backward(dy, cache, g):
    xhat, inv = cache
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv
    axes = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=axes), dy.sum(axis=axes)


def _softmax_last(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _gelu(u):
    return 0.5 * u * (1.0 + erf(u / np.sqrt(2.0)))


def _gelu_grad(u):
    phi = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(u / np.sqrt(2.0))) + u * phi


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(z))


def residue_log_probs(sub_logits: np.ndarray, K: int) -> np.ndarray:
    """Substitution head renormalized over the K residues (mask excluded)."""
    return log_softmax(sub_logits[..., :K])


# --------------------------- forward / backward ---------------------------


def forward_batch(params: dict, cfg: DenoiserConfig, tokens: np.ndarray, lengths: np.ndarray):
    """Batched forward pass over padded token arrays.

    Returns (sub_logits, del_logits, ins_logits, cache); positions at or
    beyond each row's length are ignored by attention and carry garbage
    outputs that callers must mask.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    B, T = tokens.shape
    if T > cfg.max_len:
        raise ValueError(f"sequence length {T} exceeds max_len {cfg.max_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id outside model vocabulary (gap tokens never enter)")
    d = cfg.embed_dim
    H = cfg.num_heads
    dh = d // H
    dtype = params["embed"].dtype

    X = params["embed"][tokens]
    if cfg.use_positional:
        X = X + sinusoidal_positions(T, d, dtype)
    valid = np.arange(T)[None, :] < lengths[:, None]  # (B, T)
    bias = np.where(valid, 0.0, ATTN_NEG).astype(dtype)[:, None, None, :]  # (B,1,1,T)

    cache = {"tokens": tokens, "valid": valid, "layers": []}
    scale = 1.0 / np.sqrt(dh)
    for i in range(cfg.num_layers):
        pre = f"layers.{i}."
        h1, ln1_cache = _ln_forward(X, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = h1 @ params[pre + "attn.wq"] + params[pre + "attn.bq"]
        k = h1 @ params[pre + "attn.wk"] + params[pre + "attn.bk"]
        v = h1 @ params[pre + "attn.wv"] + params[pre + "attn.bv"]
        qh = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        scores = qh @ kh.transpose(0, 1, 3, 2) * scale + bias
        P = _softmax_last(scores)
        zh = P @ vh
        z = zh.transpose(0, 2, 1, 3).reshape(B, T, d)
        att = z @ params[pre + "attn.wo"] + params[pre + "attn.bo"]
        Xmid = X + att
        h2, ln2_cache = _ln_forward(Xmid, params[pre + "ln2.g"], params[pre + "ln2.b"])
        u = h2 @ params[pre + "ff.w1"] + params[pre + "ff.b1"]
        g = _gelu(u)
        ff = g @ params[pre + "ff.w2"] + params[pre + "ff.b2"]
        Xout = Xmid + ff
        cache["layers"].append((X, ln1_cache, h1, qh, kh, vh, P, z, Xmid, ln2_cache, h2, u, g))
        X = Xout

    hf, lnf_cache = _ln_forward(X, params["ln_f.g"], params["ln_f.b"])
    cache["final"] = (X, lnf_cache, hf)
    sub_logits = hf @ params["head_sub.w"] + params["head_sub.b"]
    del_logits = hf @ params["head_del.w"] + params["head_del.b"][0]
    ins_logits = hf @ params["head_ins.w"] + params["head_ins.b"][0]
    return sub_logits, del_logits, ins_logits, cache


def backward_batch(
    params: dict,
    cfg: DenoiserConfig,
    cache: dict,
    d_sub: np.ndarray,
    d_del: np.ndarray,
    d_ins: np.ndarray,
) -> dict:
    """Exact gradients of a scalar loss given head-logit gradients.

    d_sub/d_del/d_ins must already be zero at padded positions.
    """
    B, T, d = d_sub.shape[0], d_sub.shape[1], cfg.embed_dim
    H = cfg.num_heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    grads = {}

    Xlast, lnf_cache, hf = cache["final"]
    hf2 = hf.reshape(-1, d)
    grads["head_sub.w"] = hf2.T @ d_sub.reshape(-1, cfg.vocab_size)
    grads["head_sub.b"] = d_sub.sum(axis=(0, 1))
    grads["head_del.w"] = (d_del[..., None] * hf).sum(axis=(0, 1))
    grads["head_del.b"] = np.array([d_del.sum()], dtype=hf.dtype)
    grads["head_ins.w"] = (d_ins[..., None] * hf).sum(axis=(0, 1))
    grads["head_ins.b"] = np.array([d_ins.sum()], dtype=hf.dtype)
    dhf = (
        d_sub @ params["head_sub.w"].T
        + d_del[..., None] * params["head_del.w"]
        + d_ins[..., None] * params["head_ins.w"]
    )
    dX, grads["ln_f.g"], grads["ln_f.b"] = _ln_backward(dhf, lnf_cache, params["ln_f.g"])

    for i in reversed(range(cfg.num_layers)):
        pre = f"layers.{i}."
        Xin, ln1_cache, h1, qh, kh, vh, P, z, Xmid, ln2_cache, h2, u, g = cache["layers"][i]
        # feed-forward block
        dff = dX
        dXmid = dX
        grads[pre + "ff.w2"] = g.reshape(-1, cfg.ff_dim).T @ dff.reshape(-1, d)
        grads[pre + "ff.b2"] = dff.sum(axis=(0, 1))
        dg = dff @ params[pre + "ff.w2"].T
        du = dg * _gelu_grad(u)
        grads[pre + "ff.w1"] = h2.reshape(-1, d).T @ du.reshape(-1, cfg.ff_dim)
        grads[pre + "ff.b1"] = du.sum(axis=(0, 1))
        dh2 = du @ params[pre + "ff.w1"].T
        dmid2, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _ln_backward(
            dh2, ln2_cache, params[pre + "ln2.g"]
        )
        dXmid = dXmid + dmid2
        # attention block
        datt = dXmid
        dXin = dXmid
        grads[pre + "attn.wo"] = z.reshape(-1, d).T @ datt.reshape(-1, d)
        grads[pre + "attn.bo"] = datt.sum(axis=(0, 1))
        dz = datt @ params[pre + "attn.wo"].T
        dzh = dz.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        dP = dzh @ vh.transpose(0, 1, 3, 2)
        dvh = P.transpose(0, 1, 3, 2) @ dzh
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
        dqh = dS @ kh * scale
        dkh = dS.transpose(0, 1, 3, 2) @ qh * scale
        dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, T, d)
        h1f = h1.reshape(-1, d)
        grads[pre + "attn.wq"] = h1f.T @ dq.reshape(-1, d)
        grads[pre + "attn.bq"] = dq.sum(axis=(0, 1))
        grads[pre + "attn.wk"] = h1f.T @ dk.reshape(-1, d)
        grads[pre + "attn.bk"] = dk.sum(axis=(0, 1))
        grads[pre + "attn.wv"] = h1f.T @ dv.reshape(-1, d)
        grads[pre + "attn.bv"] = dv.sum(axis=(0, 1))
        dh1 = (
            dq @ params[pre + "attn.wq"].T
            + dk @ params[pre + "attn.wk"].T
            + dv @ params[pre + "attn.wv"].T
        )
        din, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _ln_backward(
            dh1, ln1_cache, params[pre + "ln1.g"]
        )
        dX = dXin + din

    dE = np.zeros_like(params["embed"])
    np.add.at(dE, cache["tokens"].reshape(-1), dX.reshape(-1, d))
    grads["embed"] = dE
    return grads


# --------------------------- model wrapper ---------------------------


class Denoiser:
    """Bundles an alphabet, a config and a parameter set."""

    def __init__(self, alphabet: Alphabet, config: DenoiserConfig, params: dict):
        if config.vocab_size != alphabet.K + 1:
            raise ValueError("config vocab_size must equal K+1")
        self.alphabet = alphabet
        self.config = config
        self.params = params

    @classmethod
    def create(
        cls,
        alphabet: Alphabet,
        config: DenoiserConfig | None = None,
        seed: int = 0,
        dtype=np.float32,
        **overrides,
    ) -> "Denoiser":
        if config is None:
            config = DenoiserConfig(vocab_size=alphabet.K + 1, **overrides)
        rng = np.random.default_rng(seed)
        return cls(alphabet, config, init_params(config, rng, dtype))

    def forward(self, tokens) -> DenoiserOutput:
        """Single-sequence forward pass; rejects gap tokens and over-long input."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1 or tokens.size == 0:
            raise ValueError("expected a non-empty token sequence")
        if np.any(tokens == self.alphabet.gap_id):
            raise ValueError("gap tokens are latent-only and never enter the model")
        sub, dl, il, _ = forward_batch(
            self.params, self.config, tokens[None, :], np.array([tokens.size])
        )
        return DenoiserOutput(sub[0], dl[0], il[0])


# --------------------------- optimizer ---------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: dict) -> AdamState:
    return AdamState(
        0,
        {k: np.zeros_like(p) for k, p in params.items()},
        {k: np.zeros_like(p) for k, p in params.items()},
    )


def apply_update(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict, AdamState]:
    """One Adam step; returns fresh params and state (inputs untouched)."""
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for key, p in params.items():
        g = grads[key].astype(p.dtype)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {key}")
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[key] = p - update.astype(p.dtype)
        new_m[key], new_v[key] = m, v
    return new_params, AdamState(t, new_m, new_v)


# --------------------------- checkpoints ---------------------------

CHECKPOINT_MAGIC = b"DPEV"
CHECKPOINT_VERSION = 1


class CheckpointError(IOError):
    pass


def _config_fields(alphabet: Alphabet, cfg: DenoiserConfig) -> dict[str, int]:
    return {
        "alphabet_k": alphabet.K,
        "vocab_size": cfg.vocab_size,
        "embed_dim": cfg.embed_dim,
        "num_layers": cfg.num_layers,
        "num_heads": cfg.num_heads,
        "ff_dim": cfg.ff_dim,
        "max_len": cfg.max_len,
        "use_positional": int(cfg.use_positional),
    }


def save_checkpoint(model: Denoiser, path) -> None:
    """Binary format: magic, u32 version, named u32 config fields, then per
    tensor: u32 name length, name, u32 rank, u32 dims, row-major f32 LE data."""
    fields = _config_fields(model.alphabet, model.config)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(fields)))
        for name, value in fields.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", value))
        for name in sorted(model.params):
            tensor = np.ascontiguousarray(model.params[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> Denoiser:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("magic/version mismatch: not a denoiser checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"magic/version mismatch: unsupported version {version}")
        (n_fields,) = struct.unpack("<I", _read_exact(fh, 4, "config"))
        fields: dict[str, int] = {}
        for _ in range(n_fields):
            (nl,) = struct.unpack("<I", _read_exact(fh, 4, "config"))
            name = _read_exact(fh, nl, "config").decode("utf-8")
            (fields[name],) = struct.unpack("<I", _read_exact(fh, 4, "config"))
        try:
            alphabet = (
                Alphabet() if fields["alphabet_k"] == 20 else Alphabet.of_size(fields["alphabet_k"])
            )
            cfg = DenoiserConfig(
                vocab_size=fields["vocab_size"],
                embed_dim=fields["embed_dim"],
                num_layers=fields["num_layers"],
                num_heads=fields["num_heads"],
                ff_dim=fields["ff_dim"],
                max_len=fields["max_len"],
                use_positional=bool(fields["use_positional"]),
            )
        except KeyError as exc:
            raise CheckpointError(f"config block missing field {exc}") from exc
        params = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading tensor header")
            (nl,) = struct.unpack("<I", head)
            name = _read_exact(fh, nl, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, f"rank of {name}"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, f"dims of {name}"))[0] for _ in range(rank)
            )
            count = int(np.prod(shape)) if shape else 1
            data = _read_exact(fh, 4 * count, f"data of {name}")
            params[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()

    expected = init_params(cfg, np.random.default_rng(0))
    if set(params) != set(expected):
        raise CheckpointError("tensor set does not match the declared config")
    for name, p in params.items():
        if p.shape != expected[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: {p.shape} vs {expected[name].shape}"
            )
    return Denoiser(alphabet, cfg, params)

"""Patch-attention Transformer that refines an interpolated CSI grid.

Pipeline: real/imag split -> patch embedding -> 2-D sinusoidal positions ->
pre-norm encoder layers -> stride-equals-kernel transposed convolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import engine as E
from .engine import ParamStore, Tensor


@dataclass(frozen=True)
class ModelConfig:
    K: int = 48
    L: int = 14
    patch_k: int = 4
    patch_l: int = 2
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 128

    def __post_init__(self):
        if self.K % self.patch_k or self.L % self.patch_l:
            raise ValueError(f"grid {self.K}x{self.L} is not divisible by patch "
                             f"{self.patch_k}x{self.patch_l}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.d_model % 4:
            raise ValueError("d_model must be a multiple of 4 for the 2-D sinusoidal table")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")

    @property
    def grid_k(self) -> int:
        return self.K // self.patch_k

    @property
    def grid_l(self) -> int:
        return self.L // self.patch_l

    @property
    def num_patches(self) -> int:
        return self.grid_k * self.grid_l

    @property
    def patch_dim(self) -> int:
        return 2 * self.patch_k * self.patch_l

    def to_dict(self) -> dict:
        return asdict(self)


def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def init_transformer(cfg: ModelConfig, seed=0) -> ParamStore:
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.d_ff
    p = ParamStore()
    p.add("embed.W", _glorot(rng, cfg.patch_dim, d))
    p.add("embed.b", np.zeros(d))
    for i in range(cfg.n_layers):
        pre = f"layer{i}."
        p.add(pre + "ln1.g", np.ones(d))
        p.add(pre + "ln1.b", np.zeros(d))
        p.add(pre + "attn.Wqkv", _glorot(rng, d, 3 * d))
        p.add(pre + "attn.bqkv", np.zeros(3 * d))
        p.add(pre + "attn.Wo", _glorot(rng, d, d) / np.sqrt(2 * max(cfg.n_layers, 1)))
        p.add(pre + "attn.bo", np.zeros(d))
        p.add(pre + "ln2.g", np.ones(d))
        p.add(pre + "ln2.b", np.zeros(d))
        p.add(pre + "ffn.W1", _glorot(rng, d, f))
        p.add(pre + "ffn.b1", np.zeros(f))
        p.add(pre + "ffn.W2", _glorot(rng, f, d) / np.sqrt(2 * max(cfg.n_layers, 1)))
        p.add(pre + "ffn.b2", np.zeros(d))
    p.add("decoder.W", _glorot(rng, d, cfg.patch_dim))
    p.add("decoder.b", np.zeros(2))
    return p


def sinusoid_table_2d(cfg: ModelConfig) -> np.ndarray:
    """``(P, d_model)`` table: first half encodes the frequency-patch index,
    second half the time-patch index, token order frequency-major."""
    half = cfg.d_model // 2

    def one_axis(pos, width):
        i = np.arange(width // 2)
        freq = 1.0 / (10000.0 ** (2 * i / width))
        ang = pos[:, None] * freq[None, :]
        out = np.empty((len(pos), width))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    fk = one_axis(np.arange(cfg.grid_k, dtype=float), half)
    fl = one_axis(np.arange(cfg.grid_l, dtype=float), half)
    table = np.concatenate([np.repeat(fk, cfg.grid_l, axis=0), np.tile(fl, (cfg.grid_k, 1))], axis=1)
    return table


def patch_embed(x, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """``(B, 2, K, L)`` real map -> ``(B, P, d_model)`` tokens."""
    x = E.as_tensor(x)
    B = x.shape[0]
    if x.shape[1:] != (2, cfg.K, cfg.L):
        raise ValueError(f"expected input (B, 2, {cfg.K}, {cfg.L}), got {x.shape}")
    patches = x.reshape(B, 2, cfg.grid_k, cfg.patch_k, cfg.grid_l, cfg.patch_l)
    patches = patches.transpose(0, 2, 4, 1, 3, 5).reshape(B, cfg.num_patches, cfg.patch_dim)
    return patches @ params["embed.W"] + params["embed.b"]


def add_positional(tokens, E_pos) -> Tensor:
    return E.add(tokens, E_pos)


def attention(x, params: ParamStore, prefix: str, n_heads: int, record: list | None = None) -> Tensor:
    """Multi-head scaled dot-product attention with output projection."""
    B, P, d = x.shape
    dh = d // n_heads
    qkv = x @ params[prefix + "attn.Wqkv"] + params[prefix + "attn.bqkv"]
    qkv = qkv.reshape(B, P, 3, n_heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    if not np.all(np.isfinite(logits.value)):
        raise FloatingPointError(f"non-finite attention logits in {prefix.rstrip('.') or 'attention'}")
    weights = E.softmax(logits, axis=-1)
    if record is not None:
        record.append(weights.value)
    heads = (weights @ v).transpose(0, 2, 1, 3).reshape(B, P, d)
    return heads @ params[prefix + "attn.Wo"] + params[prefix + "attn.bo"]


def mhsa(tokens, params: ParamStore, prefix: str, cfg: ModelConfig, record=None) -> Tensor:
    """Pre-norm self-attention block with residual add."""
    h = E.layer_norm(tokens, params[prefix + "ln1.g"], params[prefix + "ln1.b"])
    return tokens + attention(h, params, prefix, cfg.n_heads, record)


def ffn(tokens, params: ParamStore, prefix: str) -> Tensor:
    h = E.layer_norm(tokens, params[prefix + "ln2.g"], params[prefix + "ln2.b"])
    h = E.gelu(h @ params[prefix + "ffn.W1"] + params[prefix + "ffn.b1"])
    return tokens + (h @ params[prefix + "ffn.W2"] + params[prefix + "ffn.b2"])


def encoder_forward(tokens, params: ParamStore, cfg: ModelConfig, record=None) -> Tensor:
    z = E.as_tensor(tokens)
    for i in range(cfg.n_layers):
        try:
            z = mhsa(z, params, f"layer{i}.", cfg, record)
        except FloatingPointError as exc:
            raise FloatingPointError(f"layer {i}: {exc}") from None
        z = ffn(z, params, f"layer{i}.")
    return z


def decode_upsample(tokens, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Transposed convolution with kernel = stride = patch: each token paints
    exactly its own ``patch_k x patch_l`` block of both channels."""
    tokens = E.as_tensor(tokens)
    B = tokens.shape[0]
    if tokens.shape[1] != cfg.num_patches:
        raise ValueError(f"expected {cfg.num_patches} tokens, got {tokens.shape[1]}")
    y = tokens @ params["decoder.W"]
    y = y.reshape(B, cfg.grid_k, cfg.grid_l, 2, cfg.patch_k, cfg.patch_l)
    y = y.transpose(0, 3, 1, 4, 2, 5).reshape(B, 2, cfg.K, cfg.L)
    return y + params["decoder.b"].reshape(1, 2, 1, 1)


def network(x, params: ParamStore, cfg: ModelConfig, E_pos=None, record=None) -> Tensor:
    """Real-valued core: ``(B, 2, K, L)`` -> ``(B, 2, K, L)``."""
    if E_pos is None:
        E_pos = sinusoid_table_2d(cfg)
    z = add_positional(patch_embed(x, params, cfg), E_pos)
    z = encoder_forward(z, params, cfg, record)
    return decode_upsample(z, params, cfg)


def split_complex(H) -> np.ndarray:
    """``(B, K, L)`` complex -> ``(B, 2, K, L)`` real."""
    H = np.asarray(H)
    return np.stack([H.real, H.imag], axis=1)


def merge_complex(x) -> np.ndarray:
    x = np.asarray(x)
    return x[:, 0] + 1j * x[:, 1]


def input_scale(H) -> np.ndarray:
    """Per-sample RMS of a ``(B, K, L)`` complex batch, shape ``(B,)``."""
    H = np.asarray(H)
    rms = np.sqrt(np.mean(np.abs(H) ** 2, axis=(1, 2)))
    return np.where(rms > 0, rms, 1.0)


def standardized_apply(net_fn, H_in, params, cfg) -> Tensor:
    """Scale each sample to unit RMS, run ``net_fn``, undo the scaling.

    Returns the real ``(B, 2, K, L)`` output as a graph node.
    """
    H_in = np.asarray(H_in)
    s = input_scale(H_in)
    x = split_complex(H_in / s[:, None, None])
    out = net_fn(Tensor(x), params, cfg)
    return out * s.reshape(-1, 1, 1, 1)


def model_forward(H_in, params: ParamStore, cfg: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Refine a ``(K, L)`` or ``(B, K, L)`` complex estimate."""
    H_in = np.asarray(H_in, dtype=np.complex128)
    single = H_in.ndim == 2
    if single:
        H_in = H_in[None]
    outs = []
    for i in range(0, len(H_in), batch_size):
        out = standardized_apply(network, H_in[i:i + batch_size], params, cfg)
        outs.append(merge_complex(out.value))
    result = np.concatenate(outs, axis=0)
    return result[0] if single else result

"""Two-layer LSTM baseline that runs along subcarriers of each OFDM symbol."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import engine as E
from .engine import ParamStore, Tensor
from .transformer import merge_complex, standardized_apply


@dataclass(frozen=True)
class LSTMConfig:
    K: int = 48
    L: int = 14
    hidden: int = 32
    n_layers: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


def init_lstm(cfg: LSTMConfig, seed=0) -> ParamStore:
    rng = np.random.default_rng(seed)
    H = cfg.hidden
    p = ParamStore()
    n_in = 2
    for i in range(cfg.n_layers):
        scale = 1.0 / np.sqrt(H)
        p.add(f"lstm{i}.W_ih", rng.uniform(-scale, scale, size=(n_in, 4 * H)))
        p.add(f"lstm{i}.W_hh", rng.uniform(-scale, scale, size=(H, 4 * H)))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias
        p.add(f"lstm{i}.b", b)
        n_in = H
    p.add("out.W", rng.uniform(-1 / np.sqrt(H), 1 / np.sqrt(H), size=(H, 2)))
    p.add("out.b", np.zeros(2))
    return p


def lstm_cell(x, h, c, W_ih, W_hh, b, record=None):
    """One step; gate order is input, forget, cell, output."""
    gates = x @ W_ih + h @ W_hh + b
    H = h.shape[-1]
    i = E.sigmoid(gates[:, 0:H])
    f = E.sigmoid(gates[:, H:2 * H])
    g = E.tanh(gates[:, 2 * H:3 * H])
    o = E.sigmoid(gates[:, 3 * H:4 * H])
    if record is not None:
        record.append((i.value, f.value, o.value))
    c_new = f * c + i * g
    h_new = o * E.tanh(c_new)
    return h_new, c_new


def lstm_network(x, params: ParamStore, cfg: LSTMConfig, record=None) -> Tensor:
    """``(B, 2, K, L)`` -> ``(B, 2, K, L)``; one sequence over k per (sample, symbol)."""
    x = E.as_tensor(x)
    B, _, K, L = x.shape
    seq = x.transpose(2, 0, 3, 1).reshape(K, B * L, 2)
    H = cfg.hidden
    zeros = Tensor(np.zeros((B * L, H)))
    states = [(zeros, zeros) for _ in range(cfg.n_layers)]
    outputs = []
    for k in range(K):
        inp = seq[k]
        for layer in range(cfg.n_layers):
            h, c = states[layer]
            h, c = lstm_cell(inp, h, c, params[f"lstm{layer}.W_ih"], params[f"lstm{layer}.W_hh"],
                             params[f"lstm{layer}.b"], record)
            states[layer] = (h, c)
            inp = h
        outputs.append(inp)
    hs = E.stack(outputs, axis=0)  # (K, B*L, H)
    y = hs @ params["out.W"] + params["out.b"]
    return y.reshape(K, B, L, 2).transpose(1, 3, 0, 2)


def lstm_forward(H_in, params: ParamStore, cfg: LSTMConfig, batch_size: int = 64) -> np.ndarray:
    H_in = np.asarray(H_in, dtype=np.complex128)
    single = H_in.ndim == 2
    if single:
        H_in = H_in[None]
    outs = []
    for i in range(0, len(H_in), batch_size):
        out = standardized_apply(lstm_network, H_in[i:i + batch_size], params, cfg)
        outs.append(merge_complex(out.value))
    result = np.concatenate(outs, axis=0)
    return result[0] if single else result

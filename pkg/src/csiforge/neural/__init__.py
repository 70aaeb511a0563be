"""Differentiable tensor engine, Transformer estimator and LSTM baseline."""

from .engine import ParamStore, Tensor, backward
from .gradcheck import grad_check
from .lstm import LSTMConfig, init_lstm, lstm_forward
from .transformer import ModelConfig, init_transformer, model_forward

__all__ = [
    "LSTMConfig",
    "ModelConfig",
    "ParamStore",
    "Tensor",
    "backward",
    "grad_check",
    "init_lstm",
    "init_transformer",
    "lstm_forward",
    "model_forward",
]

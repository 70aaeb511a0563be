"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .engine import Tensor, backward


def grad_check(fn, inputs: dict, rng_seed=0, n_samples: int = 20, eps: float = 1e-5,
               floor: float = 1e-6) -> float:
    """Max relative error between backward() and central differences.

    ``fn`` takes a dict of Tensors (same keys as ``inputs``) and returns a
    scalar Tensor. ``n_samples`` coordinates are drawn per input (all of
    them when the input is smaller). Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(rng_seed)
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    leaves = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in base.items()}
    out = fn(leaves)
    backward(out)

    def value_at(key, flat_idx, delta):
        probe = {k: Tensor(v.copy()) for k, v in base.items()}
        probe[key].value.reshape(-1)[flat_idx] += delta
        return float(fn(probe).value)

    worst = 0.0
    for key, arr in base.items():
        grad = leaves[key].grad
        grad = np.zeros_like(arr) if grad is None else grad
        n = arr.size
        picks = np.arange(n) if n <= n_samples else rng.choice(n, n_samples, replace=False)
        for idx in picks:
            numeric = (value_at(key, idx, eps) - value_at(key, idx, -eps)) / (2 * eps)
            analytic = grad.reshape(-1)[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


def params_as_inputs(params) -> dict:
    return {k: v.value for k, v in params.items()}

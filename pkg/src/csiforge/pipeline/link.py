"""Uncoded QPSK link with per-RE zero-forcing on an estimated channel."""

from __future__ import annotations

import math

import numpy as np

from ..rng import derive_rng

_QPSK_AMP = 1.0 / math.sqrt(2.0)


def qfunc(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def qpsk_ber_awgn(es_n0_db: float) -> float:
    """Theoretical Gray-coded QPSK bit error rate, ``Q(sqrt(Es/N0))``."""
    return qfunc(math.sqrt(10.0 ** (es_n0_db / 10.0)))


def _modulate(bits: np.ndarray) -> np.ndarray:
    # Gray: bit 0 -> sign of I, bit 1 -> sign of Q
    return _QPSK_AMP * ((1 - 2 * bits[..., 0]) + 1j * (1 - 2 * bits[..., 1]))


def ber_link_sim(H_true, H_est, snr_db, bits: int = 100_000, rng_seed=0, data_mask=None):
    """Bit error rate per SNR for QPSK over the REs of ``H_true``.

    ``H_true`` and ``H_est`` share any shape; ``data_mask`` (broadcastable)
    selects data REs. The RE set is cycled until at least ``bits`` bits are
    sent. Symbols and unit noise are drawn once and scaled per SNR, so the
    curve uses common random numbers. An RE whose estimate is exactly zero
    is an erasure: its bits count as half an error each.

    Returns ``(ber, n_bits)`` with ``ber`` an array aligned with ``snr_db``.
    """
    if bits < 10_000:
        raise ValueError("need at least 1e4 bits for a meaningful BER")
    H = np.asarray(H_true, dtype=np.complex128)
    G = np.asarray(H_est, dtype=np.complex128)
    if H.shape != G.shape:
        raise ValueError(f"true {H.shape} and estimated {G.shape} channels differ in shape")
    sel = np.ones(H.shape, bool) if data_mask is None else np.broadcast_to(np.asarray(data_mask, bool), H.shape)
    h, g = H[sel], G[sel]
    if h.size == 0:
        raise ValueError("no data REs selected")
    reps = -(-bits // (2 * h.size))
    h = np.tile(h, reps)
    g = np.tile(g, reps)
    rng = derive_rng(rng_seed, 0xB17)
    b = rng.integers(0, 2, size=(h.size, 2))
    x = _modulate(b)
    w = (rng.standard_normal(h.size) + 1j * rng.standard_normal(h.size)) / math.sqrt(2.0)
    erased = g == 0
    g_safe = np.where(erased, 1.0, g)
    snrs = np.atleast_1d(np.asarray(snr_db, dtype=float))
    out = np.empty(len(snrs))
    for i, s in enumerate(snrs):
        n0 = 10.0 ** (-s / 10.0)
        y = h * x + math.sqrt(n0) * w
        z = y / g_safe
        dec = np.stack([z.real < 0, z.imag < 0], axis=1).astype(int)
        err = (dec != b).sum(axis=1).astype(float)
        err[erased] = 1.0  # two bits at 50 %
        out[i] = err.sum() / (2 * h.size)
    return out, 2 * h.size

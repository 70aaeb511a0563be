"""SRS pilot masks, noisy pilot observation and sparse-pilot interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .gridcore import ComplexGrid, GridShape, from_db
from .rng import derive_rng


@dataclass(frozen=True)
class PilotConfig:
    comb: int
    num_symbols: int
    start_symbol: int
    slot_period: int = 1
    comb_offset: int = 0
    label: str = ""

    def __post_init__(self):
        if self.comb < 1:
            raise ValueError("comb factor must be >= 1")
        if not 0 <= self.comb_offset < self.comb:
            raise ValueError(f"comb offset {self.comb_offset} outside [0, {self.comb})")
        if self.num_symbols < 1 or self.start_symbol < 0:
            raise ValueError("need num_symbols >= 1 and start_symbol >= 0")
        if self.slot_period < 1:
            raise ValueError("slot_period must be >= 1")

    def check(self, shape: GridShape) -> None:
        if self.start_symbol + self.num_symbols > shape.L:
            raise ValueError(
                f"pilot symbols {self.start_symbol}..{self.start_symbol + self.num_symbols - 1} "
                f"do not fit in L={shape.L}")
        if shape.K % self.comb:
            raise ValueError(f"K={shape.K} is not a multiple of comb {self.comb}")

    def subcarriers(self, K: int) -> np.ndarray:
        return np.arange(self.comb_offset, K, self.comb)

    def active(self, slot_index: int) -> bool:
        return slot_index % self.slot_period == 0


DENSE_SRS = PilotConfig(comb=2, num_symbols=4, start_symbol=10, slot_period=1, label="dense")
SPARSE_SRS = PilotConfig(comb=4, num_symbols=1, start_symbol=10, slot_period=2, label="sparse")


@dataclass(frozen=True, eq=False)
class PilotMask:
    """Binary K x L mask with the pilot RE list and pilot symbols.

    ``omega`` rows are ``(k, l)`` ordered by symbol, then subcarrier, and
    ``symbols[i]`` is the pilot sent on ``omega[i]``.
    """

    mask: np.ndarray
    omega: np.ndarray
    symbols: np.ndarray

    @property
    def count(self) -> int:
        return len(self.omega)

    @property
    def pilot_symbols_idx(self) -> np.ndarray:
        return np.unique(self.omega[:, 1])

    def apply(self, grid: np.ndarray) -> np.ndarray:
        """Zero every non-pilot RE of a K x L (x ...) array."""
        grid = np.asarray(grid)
        m = self.mask.reshape(self.mask.shape + (1,) * (grid.ndim - 2))
        return grid * m

    def gather(self, grid: np.ndarray) -> np.ndarray:
        grid = np.asarray(grid)
        return grid[self.omega[:, 0], self.omega[:, 1]]

    def scatter(self, values: np.ndarray, extra=()) -> np.ndarray:
        """Zero-filled K x L (x extra) grid holding ``values`` on omega."""
        values = np.asarray(values)
        out = np.zeros(self.mask.shape + values.shape[1:], dtype=np.complex128)
        out[self.omega[:, 0], self.omega[:, 1]] = values
        return out


def build_mask(cfg: PilotConfig, shape: GridShape, slot_index: int = 0) -> PilotMask:
    cfg.check(shape)
    mask = np.zeros((shape.K, shape.L), dtype=bool)
    if cfg.active(slot_index):
        ks = cfg.subcarriers(shape.K)
        for sym in range(cfg.start_symbol, cfg.start_symbol + cfg.num_symbols):
            mask[ks, sym] = True
    ls, ks = np.nonzero(mask.T)
    omega = np.stack([ks, ls], axis=1).astype(np.int64).reshape(-1, 2)
    return PilotMask(mask, omega, np.ones(len(omega), dtype=np.complex128))


_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


def gen_pilot_symbols(mask: PilotMask, rng_seed) -> PilotMask:
    rng = derive_rng(rng_seed, 0x9170)
    symbols = _QPSK[rng.integers(0, 4, size=mask.count)]
    return PilotMask(mask.mask, mask.omega, symbols)


def noise_variance(snr_db: float, signal_power: float = 1.0) -> float:
    """Per-RE complex noise variance for a given SNR in dB."""
    return signal_power / from_db(snr_db)


def complex_noise(rng: np.random.Generator, shape, noise_var: float) -> np.ndarray:
    scale = np.sqrt(noise_var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def observe(H, mask: PilotMask, noise_var: float, rng_seed) -> np.ndarray:
    """Received pilot values on omega: ``H * S + w``, shape ``(|omega|, ...)``."""
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    H = np.asarray(H)
    if H.shape[:2] != mask.mask.shape:
        raise ValueError(f"mask {mask.mask.shape} does not match grid {H.shape[:2]}")
    h = mask.gather(H)
    s = mask.symbols.reshape((-1,) + (1,) * (h.ndim - 1))
    y = h * s
    if noise_var > 0:
        y = y + complex_noise(derive_rng(rng_seed, 0x0B5E), y.shape, noise_var)
    return y


def ls_at_pilots(Y, mask: PilotMask) -> np.ndarray:
    Y = np.asarray(Y)
    if np.any(mask.symbols == 0):
        raise ValueError("zero pilot symbol; LS division undefined")
    return Y / mask.symbols.reshape((-1,) + (1,) * (Y.ndim - 1))


def linear_interp_matrix(pilot_k, K: int) -> np.ndarray:
    """K x n matrix of linear interpolation through ``pilot_k``.

    Outside the first/last pilot the nearest pilot value is held.
    """
    pilot_k = np.asarray(pilot_k)
    n = len(pilot_k)
    W = np.zeros((K, n))
    if n == 1:
        W[:, 0] = 1.0
        return W
    k = np.arange(K)
    right = np.clip(np.searchsorted(pilot_k, k, side="right"), 1, n - 1)
    left = right - 1
    span = pilot_k[right] - pilot_k[left]
    frac = np.clip((k - pilot_k[left]) / span, 0.0, 1.0)
    W[k, left] = 1.0 - frac
    W[k, right] += frac
    return W


def interp_window(h_omega_seq, masks, K: int, L: int) -> np.ndarray:
    """Hold-and-interpolate over a window of slots.

    Returns an array ``(K, L * len(masks), ...)``. Pilot-bearing symbols are
    linearly interpolated in frequency; every other symbol copies the most
    recent pilot-bearing symbol (or the first one, before any pilot).
    """
    if len(h_omega_seq) != len(masks):
        raise ValueError("need one pilot-value array per slot mask")
    extra = None
    columns = {}
    for slot, (vals, m) in enumerate(zip(h_omega_seq, masks)):
        vals = np.asarray(vals)
        if m.count == 0:
            continue
        extra = vals.shape[1:]
        for sym in m.pilot_symbols_idx:
            sel = m.omega[:, 1] == sym
            ks = m.omega[sel, 0]
            columns[slot * L + int(sym)] = linear_interp_matrix(ks, K) @ vals[sel].reshape(len(ks), -1)
    return hold_fill(columns, L * len(masks), extra)


def hold_fill(columns: dict, total: int, extra=()) -> np.ndarray:
    """Temporal hold: symbol ``l`` copies the latest pilot column at or before it.

    Symbols before the first pilot column copy that first column.
    ``columns`` maps absolute symbol index to a ``(K, ...)`` array.
    """
    if not columns:
        raise ValueError("processing window contains no pilots")
    pilot_cols = np.array(sorted(columns))
    src = np.searchsorted(pilot_cols, np.arange(total), side="right") - 1
    src = pilot_cols[np.maximum(src, 0)]
    out = np.stack([columns[c] for c in src], axis=1)
    return out.reshape(out.shape[:2] + tuple(extra))


def interp_sparse(h_omega_seq, masks, shape: GridShape) -> ComplexGrid:
    return ComplexGrid(interp_window(h_omega_seq, masks, shape.K, shape.L))


def overhead_fraction(cfg: PilotConfig, shape: GridShape) -> Fraction:
    cfg.check(shape)
    per_slot = (shape.K // cfg.comb) * cfg.num_symbols
    return Fraction(per_slot, cfg.slot_period * shape.K * shape.L)

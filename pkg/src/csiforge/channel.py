"""TDL-C fading channels with Clarke/Jakes tap dynamics on the OFDM grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from .gridcore import ComplexGrid, GridShape
from .rng import derive_rng

# 3GPP TR 38.901 Table 7.7.2-3 (TDL-C): normalized delay, power in dB.
TDLC_TABLE = (
    (0.0000, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
    (1.2285, -5.1),
    (1.3083, -6.8),
    (2.1704, -8.7),
    (2.7105, -13.2),
    (4.2589, -13.9),
    (4.6003, -13.9),
    (5.4902, -15.8),
    (5.6077, -17.1),
    (6.3065, -16.0),
    (6.6374, -15.7),
    (7.0427, -21.6),
    (8.6523, -22.8),
)


@dataclass(frozen=True, eq=False)
class TapProfile:
    delays: np.ndarray  # seconds, strictly increasing
    powers: np.ndarray  # linear, sum to 1
    rms_delay_spread: float

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=float)
        powers = np.asarray(self.powers, dtype=float)
        if delays.shape != powers.shape or delays.ndim != 1 or delays.size == 0:
            raise ValueError("delays and powers must be equal-length 1-D arrays")
        if delays[0] < 0 or np.any(np.diff(delays) <= 0):
            raise ValueError("tap delays must be nonnegative and strictly increasing")
        if np.any(powers < 0) or abs(powers.sum() - 1.0) > 1e-9:
            raise ValueError("tap powers must be nonnegative and sum to 1")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "powers", powers)

    @property
    def num_taps(self) -> int:
        return self.delays.size

    @classmethod
    def from_table(cls, table, rms_delay_spread: float, delay_unit: float = 1.0) -> "TapProfile":
        """Build from ``(delay, power_db)`` rows; rows are sorted by delay."""
        rows = sorted(table)
        delays = np.array([r[0] for r in rows], dtype=float) * delay_unit
        powers = 10.0 ** (np.array([r[1] for r in rows], dtype=float) / 10.0)
        return cls(delays, powers / powers.sum(), float(rms_delay_spread))


@dataclass(frozen=True)
class DopplerSpec:
    f_d_max: float
    per_tap: tuple | None = None  # defaults to f_d_max for every tap
    num_sinusoids: int = 64

    def __post_init__(self):
        if self.f_d_max < 0:
            raise ValueError("maximum Doppler must be nonnegative")
        if self.per_tap is not None:
            f = np.asarray(self.per_tap, dtype=float)
            if np.any(f < 0) or np.any(f > self.f_d_max):
                raise ValueError("per-tap Doppler must lie in [0, f_d_max]")
        if self.num_sinusoids < 1:
            raise ValueError("num_sinusoids must be >= 1")

    def tap_doppler(self, num_taps: int) -> np.ndarray:
        if self.per_tap is None:
            return np.full(num_taps, float(self.f_d_max))
        f = np.asarray(self.per_tap, dtype=float)
        if f.size != num_taps:
            raise ValueError(f"per-tap Doppler has {f.size} entries for {num_taps} taps")
        return f


@dataclass(frozen=True)
class ChannelConfig:
    shape: GridShape
    profile: TapProfile
    doppler: DopplerSpec
    subcarrier_spacing: float = 15e3
    symbol_duration: float | None = None  # defaults to 1/subcarrier_spacing
    nominal_snr_db: float = 15.0
    shadowing_std_db: float = 0.0
    num_slots: int = 1

    def __post_init__(self):
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.symbol_duration is not None and self.symbol_duration <= 0:
            raise ValueError("symbol duration must be positive")
        if self.num_slots < 1:
            raise ValueError("num_slots must be >= 1")

    @property
    def dt(self) -> float:
        if self.symbol_duration is None:
            return 1.0 / self.subcarrier_spacing
        return self.symbol_duration

    @property
    def total_symbols(self) -> int:
        return self.shape.L * self.num_slots


def bessel_j0(x):
    """Zeroth-order Bessel function of the first kind."""
    return special.j0(x)


def make_tdlc_profile(rms_delay_spread: float) -> TapProfile:
    if rms_delay_spread <= 0:
        raise ValueError("RMS delay spread must be positive")
    return TapProfile.from_table(TDLC_TABLE, rms_delay_spread, delay_unit=rms_delay_spread)


def read_tap_table(path, rms_delay_spread: float = 1.0) -> TapProfile:
    """Parse a ``delay_ns power_db`` text table; ``#`` starts a comment.

    Delays are taken as absolute nanoseconds (not scaled by the RMS spread).
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'delay_ns power_db', got {line!r}")
        rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ValueError(f"{path}: empty tap table")
    return TapProfile.from_table(rows, rms_delay_spread, delay_unit=1e-9)


def gen_tap_gains(profile: TapProfile, doppler: DopplerSpec, L_total: int, dt: float, rng_seed,
                  nRx: int = 1, nTx: int = 1) -> np.ndarray:
    """Sum-of-sinusoids tap processes, shape ``(P, nRx, nTx, L_total)``.

    Each antenna pair draws from its own stream ``(rng_seed, r, t)``, so a
    pair's gains do not depend on the array size.
    """
    if L_total < 1:
        raise ValueError("L_total must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    P = profile.num_taps
    N = doppler.num_sinusoids
    f_tap = doppler.tap_doppler(P)
    times = np.arange(L_total) * dt
    amp = np.sqrt(profile.powers / N)
    out = np.empty((P, nRx, nTx, L_total), dtype=np.complex128)
    for r in range(nRx):
        for t in range(nTx):
            rng = derive_rng(rng_seed, r, t)
            angles = rng.uniform(0.0, 2.0 * np.pi, size=(P, N))
            phases = rng.uniform(0.0, 2.0 * np.pi, size=(P, N))
            freqs = f_tap[:, None] * np.cos(angles)  # (P, N)
            arg = 2.0 * np.pi * freqs[:, :, None] * times[None, None, :] + phases[:, :, None]
            out[:, r, t, :] = amp[:, None] * np.exp(1j * arg).sum(axis=1)
    return out


def frequency_response(profile: TapProfile, K: int, subcarrier_spacing: float) -> np.ndarray:
    """``exp(-j 2 pi k df tau_p)`` as a ``(K, P)`` matrix."""
    k = np.arange(K)[:, None]
    return np.exp(-2j * np.pi * k * subcarrier_spacing * profile.delays[None, :])


def taps_to_grid(gains: np.ndarray, profile: TapProfile, K: int, subcarrier_spacing: float) -> ComplexGrid:
    """Render tap gains ``(P, nRx, nTx, L)`` onto a ``K x L x nRx x nTx`` grid."""
    gains = np.asarray(gains)
    if gains.ndim != 4 or gains.shape[0] != profile.num_taps:
        raise ValueError(f"gains must be (P={profile.num_taps}, nRx, nTx, L), got {gains.shape}")
    F = frequency_response(profile, K, subcarrier_spacing)
    return ComplexGrid(np.einsum("kp,prtl->klrt", F, gains))


def draw_effective_snr(config: ChannelConfig, rng_seed) -> float:
    if config.shadowing_std_db < 0:
        raise ValueError("shadowing std must be nonnegative")
    if config.shadowing_std_db == 0:
        return float(config.nominal_snr_db)
    rng = derive_rng(rng_seed, 0x5AD0)
    return float(config.nominal_snr_db + config.shadowing_std_db * rng.standard_normal())


def gen_realization(config: ChannelConfig, rng_seed) -> ComplexGrid:
    """One channel realization spanning ``num_slots`` slots."""
    s = config.shape
    gains = gen_tap_gains(config.profile, config.doppler, config.total_symbols, config.dt, rng_seed,
                          s.nRx, s.nTx)
    return taps_to_grid(gains, config.profile, s.K, config.subcarrier_spacing)

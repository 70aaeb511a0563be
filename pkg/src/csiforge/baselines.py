"""Classical estimators: LMMSE with hold + interpolation, DAMP, genie."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .channel import DopplerSpec, TapProfile
from .pilots import PilotMask, hold_fill, interp_window, ls_at_pilots


class SingularPriorError(np.linalg.LinAlgError):
    pass


class NonFiniteIterateError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class ChannelPrior:
    R_hh: np.ndarray
    noise_var: float
    subcarriers: np.ndarray


def frequency_covariance(profile: TapProfile, subcarrier_spacing: float, subcarriers) -> np.ndarray:
    k = np.asarray(subcarriers, dtype=float)
    dk = k[:, None] - k[None, :]
    phase = -2j * np.pi * subcarrier_spacing * dk[:, :, None] * profile.delays[None, None, :]
    R = np.sum(profile.powers * np.exp(phase), axis=-1)
    return 0.5 * (R + R.conj().T)


def build_prior(profile: TapProfile, doppler: DopplerSpec | None, subcarrier_spacing: float,
                pilot_subcarriers, noise_var: float) -> ChannelPrior:
    """Frequency-domain prior over the pilot subcarrier vector.

    Doppler does not enter: estimation is per pilot-bearing symbol and the
    time axis is filled by hold.
    """
    del doppler
    ks = np.asarray(pilot_subcarriers)
    if ks.size == 0:
        raise ValueError("prior needs at least one pilot subcarrier")
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    return ChannelPrior(frequency_covariance(profile, subcarrier_spacing, ks), float(noise_var), ks)


def _factor(R_yy: np.ndarray, noise_var: float):
    try:
        return linalg.cho_factor(R_yy, lower=True)
    except linalg.LinAlgError:
        if noise_var == 0:
            raise SingularPriorError(
                "R_yy is singular (zero noise variance with a rank-deficient prior); "
                "set a positive noise-variance floor") from None
    jittered = R_yy + 1e-10 * np.eye(len(R_yy))
    return linalg.cho_factor(jittered, lower=True)


def lmmse_pilot_vector(y: np.ndarray, symbols: np.ndarray, prior: ChannelPrior) -> np.ndarray:
    """``R_hy R_yy^-1 y`` for one pilot symbol; ``y`` may carry trailing columns."""
    S = symbols
    R = prior.R_hh
    R_yy = (S[:, None] * R) * S.conj()[None, :] + prior.noise_var * np.eye(len(S))
    R_hy = R * S.conj()[None, :]
    c = _factor(R_yy, prior.noise_var)
    y2 = y.reshape(len(S), -1)
    return (R_hy @ linalg.cho_solve(c, y2)).reshape(y.shape)


def lmmse_estimate(Y_seq, masks, prior: ChannelPrior, K: int, L: int) -> np.ndarray:
    """LMMSE at every pilot-bearing symbol, then hold + linear interpolation.

    ``Y_seq[i]`` holds received pilot values for slot ``i`` of the window.
    Returns ``(K, L * len(masks), ...)``.
    """
    estimates = []
    for Y, m in zip(Y_seq, masks):
        Y = np.asarray(Y)
        h = np.zeros(Y.shape, dtype=np.complex128)
        for sym in m.pilot_symbols_idx:
            sel = m.omega[:, 1] == sym
            ks = m.omega[sel, 0]
            if not np.array_equal(ks, prior.subcarriers):
                raise ValueError("prior subcarriers do not match the pilot comb")
            h[sel] = lmmse_pilot_vector(Y[sel], m.symbols[sel], prior)
        estimates.append(h)
    return interp_window(estimates, masks, K, L)


# --- DAMP -----------------------------------------------------------------

@dataclass(frozen=True)
class Denoiser:
    name: str
    fn: Callable[[np.ndarray, float], np.ndarray]

    def __call__(self, x: np.ndarray, sigma: float) -> np.ndarray:
        return self.fn(x, sigma)


def _identity(x, sigma):
    return x


def soft_threshold(x: np.ndarray, lam: float) -> np.ndarray:
    mag = np.abs(x)
    scale = np.where(mag > lam, 1.0 - lam / np.maximum(mag, 1e-300), 0.0)
    return x * scale


def soft_delay_denoiser(support: int | None = None, guard: int = 2) -> Denoiser:
    """Complex soft-thresholding of each column in the delay (IDFT) domain.

    Threshold is ``sigma * sqrt(2 log K)``. With ``support`` set, delay bins
    outside ``[0, support + guard) U [K - guard, K)`` are zeroed first; the
    trailing bins catch leakage from fractional delays.
    """

    def fn(x, sigma):
        K = x.shape[0]
        lam = sigma * np.sqrt(2.0 * np.log(K))
        d = soft_threshold(np.fft.ifft(x, axis=0, norm="ortho"), lam)
        if support is not None:
            keep = np.zeros(K, dtype=bool)
            keep[: min(K, support + guard)] = True
            keep[K - guard:] = True
            d = d * keep.reshape((K,) + (1,) * (d.ndim - 1))
        return np.fft.fft(d, axis=0, norm="ortho")

    return Denoiser("soft-delay", fn)


def cp_support_bins(K: int, subcarrier_spacing: float, cp_duration: float | None = None) -> int:
    """Delay bins spanned by the cyclic prefix (normal CP by default)."""
    if cp_duration is None:
        cp_duration = (144.0 / 2048.0) / subcarrier_spacing
    return int(np.ceil(cp_duration * K * subcarrier_spacing))


DENOISERS = {
    "identity": lambda **kw: Denoiser("identity", _identity),
    "soft-delay": soft_delay_denoiser,
}


def get_denoiser(name: str, **params) -> Denoiser:
    try:
        factory = DENOISERS[name]
    except KeyError:
        raise ValueError(f"unknown denoiser {name!r}; choose from {sorted(DENOISERS)}") from None
    return factory(**params)


def divergence_mc(denoiser, x: np.ndarray, rng_seed=0, sigma: float = 0.0) -> float:
    """Monte-Carlo estimate of the mean divergence of ``denoiser`` at ``x``.

    Uses a random probe from {+1, -1, +j, -j}; exact for linear maps that act
    identically on real and imaginary parts.
    """
    x = np.asarray(x, dtype=np.complex128)
    rng = np.random.default_rng(rng_seed)
    u = np.array([1, -1, 1j, -1j])[rng.integers(0, 4, size=x.shape)]
    rms = np.sqrt(np.mean(np.abs(x) ** 2)) if x.size else 0.0
    eps = 1e-3 * rms
    if not eps > 1e-300:
        eps = 1e-6
    diff = denoiser(x + eps * u, sigma) - denoiser(x, sigma)
    return float(np.real(np.vdot(u, diff)) / (eps * x.size))


@dataclass
class DampState:
    x: np.ndarray
    z: np.ndarray
    delta: float
    t: int = 0
    onsager: float = 0.0  # divergence of the previous denoiser step
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError(f"sampling ratio must lie in (0, 1], got {self.delta}")


def damp_init(mask: PilotMask, y_shape) -> DampState:
    K, L = mask.mask.shape
    extra = tuple(y_shape[1:])
    return DampState(x=np.zeros((K, L) + extra, dtype=np.complex128),
                     z=np.zeros((mask.count,) + extra, dtype=np.complex128),
                     delta=mask.count / (K * L))


def damp_iterate(state: DampState, Y, mask: PilotMask, denoiser: Denoiser, noise_var: float = 0.0,
                 rng_seed=0) -> DampState:
    """One Onsager-corrected D-AMP step.

    ``A`` is the pilot masking operator scaled by ``1/sqrt(delta)`` so its
    columns have unit norm on average; ``A^H`` is the matching zero-fill.
    ``Y`` are received pilot values; pilot symbols are removed first.
    The Onsager term uses the divergence from the previous denoiser call.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    g = 1.0 / np.sqrt(state.delta)
    y = g * ls_at_pilots(Y, mask)
    x = state.x
    z = y - g * mask.gather(x) + (state.onsager / state.delta) * state.z
    r = x + g * mask.scatter(z)
    # D-AMP effective-noise estimate from the corrected residual
    sigma = np.sqrt(np.sum(np.abs(z) ** 2) / max(z.size, 1))
    x_new = denoiser(r, sigma)
    div = divergence_mc(lambda v, s: denoiser(v, sigma), r, rng_seed=(rng_seed, state.t))
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(z)) and np.isfinite(div)):
        raise NonFiniteIterateError(f"DAMP produced non-finite values at iteration {state.t}")
    return DampState(x=x_new, z=z, delta=state.delta, t=state.t + 1, onsager=div,
                     history=state.history + [sigma])


def damp_estimate(Y, mask: PilotMask, denoiser: Denoiser | str = "soft-delay", noise_var: float = 0.0,
                  max_iter: int = 10, tol: float = 1e-4, rng_seed=0) -> DampState:
    if isinstance(denoiser, str):
        denoiser = get_denoiser(denoiser)
    Y = np.asarray(Y)
    state = damp_init(mask, Y.shape)
    for _ in range(max_iter):
        new = damp_iterate(state, Y, mask, denoiser, noise_var, rng_seed)
        norm = np.linalg.norm(state.x)
        change = np.linalg.norm(new.x - state.x)
        state = new
        if norm > 0 and change / norm < tol:
            break
    return state


def damp_window_estimate(Y_seq, masks, K: int, L: int, denoiser="soft-delay", noise_var: float = 0.0,
                         max_iter: int = 10, rng_seed=0) -> np.ndarray:
    """DAMP on each pilot-bearing symbol, then hold in time.

    Symbols without pilots carry no measurements, so the iteration runs on
    the K-vector of each pilot-bearing symbol and the window is filled by hold.
    """
    columns = {}
    extra = ()
    for slot, (Y, m) in enumerate(zip(Y_seq, masks)):
        Y = np.asarray(Y)
        extra = Y.shape[1:]
        for sym in m.pilot_symbols_idx:
            sel = m.omega[:, 1] == sym
            ks = m.omega[sel, 0]
            col = np.zeros((K, 1), dtype=bool)
            col[ks, 0] = True
            sub = PilotMask(col, np.stack([ks, np.zeros_like(ks)], axis=1), m.symbols[sel])
            st = damp_estimate(Y[sel], sub, denoiser, noise_var, max_iter=max_iter, rng_seed=rng_seed)
            columns[slot * L + int(sym)] = st.x[:, 0]
    return hold_fill(columns, L * len(masks), extra)


def genie_oracle(H) -> np.ndarray:
    return np.array(H, dtype=np.complex128, copy=True)

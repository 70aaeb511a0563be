"""Training-based achievable rate and the pilot-reduction gain bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

EULER_GAMMA = 0.5772156649015329
LN2 = math.log(2.0)


@dataclass(frozen=True)
class RateParams:
    T_c: float     # coherence block length in REs
    rho: float     # per-RE SNR, linear
    alpha: float   # pilot fraction

    def __post_init__(self):
        if self.T_c < 1:
            raise ValueError(f"coherence block must be >= 1 RE, got {self.T_c}")
        if self.rho < 0:
            raise ValueError(f"SNR must be >= 0, got {self.rho}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"pilot fraction must lie in (0, 1), got {self.alpha}")


def scaled_e1(z: float) -> float:
    """``exp(z) * E1(z)`` for ``z > 0``.

    Power series for small ``z``, modified Lentz continued fraction otherwise.
    """
    if z <= 0:
        raise ValueError("E1 needs a positive argument")
    if z <= 1.0:
        total, term, n = 0.0, 1.0, 1
        while True:
            term *= -z / n
            add = term / n
            total += add
            if abs(add) < 1e-17 * max(abs(total), 1e-300):
                break
            n += 1
        return math.exp(z) * (-EULER_GAMMA - math.log(z) - total)
    # E1(z) = exp(-z) / (z + 1 - 1/(z + 3 - 4/(z + 5 - ...)))
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def exp1(z: float) -> float:
    return math.exp(-z) * scaled_e1(z)


def sigma_e2(p: RateParams) -> float:
    return 1.0 / (1.0 + p.rho * p.alpha * p.T_c)


def rho_eff(p: RateParams, sigma2: float | None = None) -> float:
    s = sigma_e2(p) if sigma2 is None else sigma2
    return p.rho * (1.0 - s) / (1.0 + p.rho * s)


def ergodic_rate_term(x: float) -> float:
    """``E[log2(1 + x |h|^2)]`` with ``|h|^2 ~ Exp(1)``, in bits."""
    if x < 0:
        raise ValueError("effective SNR must be >= 0")
    if x == 0:
        return 0.0
    return scaled_e1(1.0 / x) / LN2


def ergodic_rate_mc(x: float, n: int = 1_000_000, rng_seed=0, shards: int = 4):
    """Monte-Carlo ``(mean, standard error)`` of the same expectation."""
    total, total_sq, count = 0.0, 0.0, 0
    for s in range(shards):
        rng = np.random.default_rng((rng_seed, s))
        m = n // shards + (1 if s < n % shards else 0)
        v = np.log2(1.0 + x * rng.exponential(1.0, size=m))
        total += v.sum()
        total_sq += (v * v).sum()
        count += m
    mean = total / count
    var = max(total_sq / count - mean * mean, 0.0)
    return mean, math.sqrt(var / count)


def rate(p: RateParams, rho_eff_value: float | None = None) -> float:
    x = rho_eff(p) if rho_eff_value is None else rho_eff_value
    return (1.0 - p.alpha) * ergodic_rate_term(x)


@dataclass(frozen=True)
class GainResult:
    gain: float
    mid: float        # (alpha0 - alpha1) * g(rho_eff(alpha1))
    bound: float      # (alpha0 - alpha1) * log2(1 + rho_eff(alpha1))
    hypothesis_holds: bool
    rho_eff0: float
    rho_eff1: float


def gain_lower_bound(p0: RateParams, p1: RateParams, rho_eff1_override: float | None = None) -> GainResult:
    """Rate gain of pilot fraction ``p1.alpha`` over ``p0.alpha``.

    ``rho_eff1_override`` stands in for the effective SNR delivered by a
    reconstruction stage at the reduced pilot fraction.
    """
    if p1.alpha > p0.alpha:
        raise ValueError(f"need alpha0 >= alpha1, got {p0.alpha} < {p1.alpha}")
    r0 = rho_eff(p0)
    r1 = rho_eff(p1) if rho_eff1_override is None else float(rho_eff1_override)
    gain = rate(p1, r1) - rate(p0, r0)
    d = p0.alpha - p1.alpha
    return GainResult(gain, d * ergodic_rate_term(r1), d * math.log2(1.0 + r1), r1 >= r0, r0, r1)


def sweep(base: RateParams, alphas) -> list[dict]:
    rows = []
    for a in alphas:
        p = replace(base, alpha=float(a))
        rows.append({"alpha": p.alpha, "sigma_e2": sigma_e2(p), "rho_eff": rho_eff(p),
                     "rate_bits_per_re": rate(p)})
    return rows

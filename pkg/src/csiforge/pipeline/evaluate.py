"""Estimator comparison on a held-out dataset: NMSE, per-subcarrier error, BER."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..baselines import build_prior, cp_support_bins, damp_estimate, get_denoiser, lmmse_pilot_vector
from ..channel import TapProfile, make_tdlc_profile
from ..gridcore import GridShape
from ..neural.lstm import LSTMConfig, lstm_forward
from ..neural.modelio import load_model
from ..neural.transformer import ModelConfig, model_forward
from ..objective import sp_nmse
from ..pilots import (DENSE_SRS, SPARSE_SRS, PilotConfig, PilotMask, build_mask, linear_interp_matrix,
                      noise_variance, overhead_fraction)
from .dataset import Dataset
from .link import ber_link_sim

ESTIMATORS = ("input-interp", "lmmse", "damp", "lstm", "transformer", "genie")
DB_FLOOR = -100.0
SENTINEL = "≤ −100"


class MissingModelError(FileNotFoundError):
    pass


def ratio_db(err_energy: float, ref_energy: float) -> float:
    """``10 log10(err / ref)`` floored at -100 dB."""
    if ref_energy <= 0:
        raise ValueError("reference energy must be positive")
    r = err_energy / ref_energy
    return DB_FLOOR if r <= 10 ** (DB_FLOOR / 10) else max(10.0 * math.log10(r), DB_FLOOR)


def format_db(x: float) -> str:
    return SENTINEL if x <= DB_FLOOR else f"{x:.4f}"


def nmse_db(H_hat, H) -> float:
    """Ratio of expectations over the leading sample axis."""
    H_hat, H = np.asarray(H_hat), np.asarray(H)
    return ratio_db(float(np.sum(np.abs(H_hat - H) ** 2)), float(np.sum(np.abs(H) ** 2)))


def sp_nmse_db(H_hat, H) -> float:
    """Per-sample SP error energies summed over the batch, over the summed channel energy."""
    H_hat, H = np.asarray(H_hat), np.asarray(H)
    err = 0.0
    for a, b in zip(H_hat, H):
        e = float(np.sum(np.abs(b) ** 2))
        err += sp_nmse(a, b)[0] * e
    return ratio_db(err, float(np.sum(np.abs(H) ** 2)))


def subcarrier_mae(H_hat, H) -> np.ndarray:
    """Mean ``|H_hat - H|`` per subcarrier over samples and symbols; ``(K,)``."""
    return np.mean(np.abs(np.asarray(H_hat) - np.asarray(H)), axis=(0, 2))


def export_heatmap(grid, path) -> Path:
    """Write ``|grid|`` as a K-row, L-column CSV with 6 significant digits."""
    g = np.asarray(grid)
    if g.ndim != 2:
        raise ValueError(f"heatmap needs a single K x L slice, got shape {g.shape}")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in np.abs(g):
            w.writerow([f"{v:.6g}" for v in row])
    return path


def read_heatmap(path) -> np.ndarray:
    with Path(path).open(encoding="utf-8") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])


# --- estimators on dataset samples ---------------------------------------------------------
# The sparse-path input holds interpolated least-squares values; at the comb
# subcarriers of each column it carries the raw LS pilot estimate, which is
# what the classical estimators consume.

@dataclass
class EvalContext:
    shape: GridShape
    profile: TapProfile
    subcarrier_spacing: float = 15e3
    sparse: PilotConfig = SPARSE_SRS
    dense: PilotConfig = DENSE_SRS
    default_snr_db: float = 15.0
    damp_iters: int = 10

    @property
    def pilot_k(self) -> np.ndarray:
        return self.sparse.subcarriers(self.shape.K)


def _noise_vars(data: Dataset, ctx: EvalContext) -> np.ndarray:
    if data.meta:
        return np.array([m.get("noise_var", noise_variance(m.get("snr_db", ctx.default_snr_db)))
                         for m in data.meta])
    return np.full(len(data), noise_variance(data.snr_db))


def _columnwise(H_in, nvs, fn):
    """Apply ``fn(column, noise_var)`` per distinct column of each sample."""
    out = np.empty_like(H_in)
    for i, (grid, nv) in enumerate(zip(H_in, nvs)):
        prev, prev_out = None, None
        for l in range(grid.shape[1]):
            col = grid[:, l]
            if prev is not None and np.array_equal(col, prev):
                out[i, :, l] = prev_out
                continue
            prev, prev_out = col, fn(col, nv)
            out[i, :, l] = prev_out
    return out


def lmmse_from_input(H_in, nvs, ctx: EvalContext) -> np.ndarray:
    ks = ctx.pilot_k
    M = linear_interp_matrix(ks, ctx.shape.K)
    ones = np.ones(len(ks), dtype=np.complex128)
    priors = {}

    def col_fn(col, nv):
        if nv not in priors:
            priors[nv] = build_prior(ctx.profile, None, ctx.subcarrier_spacing, ks, nv)
        return M @ lmmse_pilot_vector(col[ks], ones, priors[nv])

    return _columnwise(np.asarray(H_in), nvs, col_fn)


def damp_from_input(H_in, nvs, ctx: EvalContext, rng_seed=0) -> np.ndarray:
    ks = ctx.pilot_k
    K = ctx.shape.K
    col_mask = np.zeros((K, 1), dtype=bool)
    col_mask[ks, 0] = True
    mask = PilotMask(col_mask, np.stack([ks, np.zeros_like(ks)], axis=1), np.ones(len(ks), complex))
    # comb sampling aliases delays, so keep only the cyclic-prefix span
    den = get_denoiser("soft-delay", support=cp_support_bins(K, ctx.subcarrier_spacing))

    def col_fn(col, nv):
        st = damp_estimate(col[ks], mask, den, nv, max_iter=ctx.damp_iters, rng_seed=rng_seed)
        return st.x[:, 0]

    return _columnwise(np.asarray(H_in), nvs, col_fn)


def load_estimator_model(path, expected_kind: str):
    if path is None or not Path(path).exists():
        raise MissingModelError(f"{expected_kind} estimator requested but model file {path!s} is missing")
    kind, config, params = load_model(path)
    if kind != expected_kind:
        raise ValueError(f"model file {path} holds a {kind!r} model, expected {expected_kind!r}")
    cfg = ModelConfig(**config) if kind == "transformer" else LSTMConfig(**config)
    return cfg, params


def run_estimator(name: str, data: Dataset, ctx: EvalContext, models: dict | None = None) -> np.ndarray:
    models = models or {}
    if name == "input-interp":
        return data.inputs.copy()
    if name == "genie":
        return data.targets.copy()
    if name == "lmmse":
        return lmmse_from_input(data.inputs, _noise_vars(data, ctx), ctx)
    if name == "damp":
        return damp_from_input(data.inputs, _noise_vars(data, ctx), ctx)
    if name in ("transformer", "lstm"):
        m = models.get(name)
        if m is None:
            raise MissingModelError(f"{name} estimator requested without a model")
        if isinstance(m, (str, Path)):
            m = load_estimator_model(m, name)
        cfg, params = m
        fwd = model_forward if name == "transformer" else lstm_forward
        return fwd(data.inputs, params, cfg)
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


# --- report ----------------------------------------------------------------------------------

@dataclass
class EvalReport:
    snrs: list
    nmse_db: dict = field(default_factory=dict)       # name -> {snr: dB}
    sp_nmse_db: dict = field(default_factory=dict)
    subcarrier_mae: dict = field(default_factory=dict)  # name -> (K,) array
    ber: dict = field(default_factory=dict)           # name -> {snr: BER}
    ber_bits: int = 0
    overheads: dict = field(default_factory=dict)

    def check(self):
        for table in (self.nmse_db, self.sp_nmse_db, self.ber):
            for per in table.values():
                if not all(np.isfinite(v) for v in per.values()):
                    raise FloatingPointError("evaluation produced a non-finite entry")

    def write_csv(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        p = out / "nmse_vs_snr.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            fh.write("# columns: estimator, snr_db, nmse_db, sp_nmse_db "
                     f"(ratio of expectations; '{SENTINEL}' marks errors at or below -100 dB)\n")
            w = csv.writer(fh)
            w.writerow(["estimator", "snr_db", "nmse_db", "sp_nmse_db"])
            for name in self.nmse_db:
                for s in self.snrs:
                    w.writerow([name, f"{s:g}", format_db(self.nmse_db[name][s]), format_db(self.sp_nmse_db[name][s])])
        paths.append(p)
        p = out / "subcarrier_error.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            fh.write("# columns: subcarrier index k, then mean |H_hat - H| per estimator\n")
            w = csv.writer(fh)
            names = list(self.subcarrier_mae)
            w.writerow(["k"] + names)
            K = len(next(iter(self.subcarrier_mae.values()))) if names else 0
            for k in range(K):
                w.writerow([k] + [f"{self.subcarrier_mae[n][k]:.6g}" for n in names])
        paths.append(p)
        p = out / "ber_vs_snr.csv"
        with p.open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# columns: estimator, snr_db, ber (uncoded QPSK, zero-forcing, {self.ber_bits} bits per point)\n")
            w = csv.writer(fh)
            w.writerow(["estimator", "snr_db", "ber"])
            for name in self.ber:
                for s in sorted(self.ber[name]):
                    w.writerow([name, f"{s:g}", f"{self.ber[name][s]:.6g}"])
        paths.append(p)
        return paths


def _groups(data: Dataset) -> dict:
    if not data.meta:
        return {float(data.snr_db): np.arange(len(data))}
    snrs = np.array([float(m.get("snr_db", data.snr_db)) for m in data.meta])
    return {float(s): np.nonzero(snrs == s)[0] for s in np.unique(snrs)}


def data_re_mask(data: Dataset, ctx: EvalContext) -> np.ndarray:
    """``(N, K, L)`` mask of REs not used by the sparse sounding pilots."""
    slots = [m.get("slot", 0) for m in data.meta] if data.meta else [0] * len(data)
    masks = {s: ~build_mask(ctx.sparse, ctx.shape, s).mask for s in set(slots)}
    return np.stack([masks[s] for s in slots]) if slots else np.zeros((0, ctx.shape.K, ctx.shape.L), bool)


def evaluate(data: Dataset, estimators=ESTIMATORS, models: dict | None = None, ctx: EvalContext | None = None,
             ber_snrs=None, ber_bits: int = 100_000, rng_seed=0, heatmap_dir=None,
             estimates: dict | None = None) -> EvalReport:
    """Compare estimators on ``data``.

    NMSE figures are ratios of expectations within each SNR group. The BER
    link uses each group's estimates at that group's SNR, plus any extra SNRs
    in ``ber_snrs`` run on the full set. Precomputed ``estimates`` (name ->
    array) skip re-running an estimator.
    """
    if len(data) == 0:
        raise ValueError("evaluation dataset is empty")
    if ctx is None:
        ctx = EvalContext(GridShape(data.K, data.L), make_tdlc_profile(251e-9), default_snr_db=data.snr_db)
    models = models or {}
    for name in estimators:
        if name in ("transformer", "lstm") and name not in models and not (estimates and name in estimates):
            raise MissingModelError(f"{name} estimator requested but no model file given")
    groups = _groups(data)
    report = EvalReport(sorted(groups))
    report.overheads = {"dense": overhead_fraction(ctx.dense, ctx.shape),
                        "sparse": overhead_fraction(ctx.sparse, ctx.shape)}
    dmask = data_re_mask(data, ctx)
    for name in estimators:
        est = estimates[name] if estimates and name in estimates else run_estimator(name, data, ctx, models)
        report.nmse_db[name], report.sp_nmse_db[name], report.ber[name] = {}, {}, {}
        for s, idx in groups.items():
            report.nmse_db[name][s] = nmse_db(est[idx], data.targets[idx])
            report.sp_nmse_db[name][s] = sp_nmse_db(est[idx], data.targets[idx])
            ber, n = ber_link_sim(data.targets[idx], est[idx], [s], ber_bits, (rng_seed, int(s * 1000)), dmask[idx])
            report.ber[name][s] = float(ber[0])
            report.ber_bits = n
        extra = [s for s in (ber_snrs or []) if s not in groups]
        if extra:
            ber, n = ber_link_sim(data.targets, est, extra, ber_bits, rng_seed, dmask)
            report.ber[name].update({float(s): float(b) for s, b in zip(extra, ber)})
        report.subcarrier_mae[name] = subcarrier_mae(est, data.targets)
        if heatmap_dir is not None:
            d = Path(heatmap_dir)
            d.mkdir(parents=True, exist_ok=True)
            export_heatmap(est[0], d / f"{name}.csv")
    if heatmap_dir is not None:
        export_heatmap(data.targets[0], Path(heatmap_dir) / "target.csv")
    report.check()
    return report

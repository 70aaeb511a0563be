"""One pass/fail test per acceptance criterion, at the stated tolerances.

The desk-scale criteria (8, 9, 10) share one module-scoped run: 2400
realizations split 2000/200/200 by realization, three training seeds of
the default Transformer, evaluation on the held-out part.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from csiforge.baselines import (build_prior, damp_init, damp_iterate, get_denoiser, lmmse_estimate)
from csiforge.channel import ChannelConfig, DopplerSpec, TapProfile, bessel_j0, gen_tap_gains, make_tdlc_profile
from csiforge.gridcore import GridShape, to_db
from csiforge.neural.engine import ParamStore
from csiforge.neural.modelio import ModelFileError, model_bytes, parse_model
from csiforge.neural.transformer import ModelConfig, init_transformer, model_forward
from csiforge.objective import corr_loss, nmse, sp_nmse
from csiforge.pilots import (DENSE_SRS, SPARSE_SRS, PilotConfig, PilotMask, build_mask, gen_pilot_symbols,
                             observe, overhead_fraction)
from csiforge.pipeline import TrainConfig, train
from csiforge.pipeline.dataset import (BadMagicError, SamplePair, TruncatedFileError, collect, dataset_bytes,
                                       parse_dataset, split_by_realization)
from csiforge.pipeline.evaluate import EvalContext, data_re_mask, lmmse_from_input, nmse_db, sp_nmse_db
from csiforge.pipeline.link import ber_link_sim, qfunc
from csiforge.ratecalc import RateParams, ergodic_rate_mc, ergodic_rate_term, gain_lower_bound, rho_eff

from conftest import crandn
from gradsuite import CASES, LINEAR, run_case

DF = 15e3
DESK = GridShape(48, 14)
SEEDS = (0, 1, 2)
BER_SNRS = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)


def desk_channel():
    return ChannelConfig(DESK, make_tdlc_profile(251e-9), DopplerSpec(50.0), DF, nominal_snr_db=15.0,
                         num_slots=2)


@pytest.fixture(scope="module")
def desk():
    """Generate, split, train three seeds, and collect every estimate on the test part."""
    t0 = time.perf_counter()
    data = collect(desk_channel(), 2400, master_seed=2024)
    tr, va, te = split_by_realization(data.meta, (2000 / 2400, 200 / 2400, 200 / 2400), seed=0)
    train_set, test = data.subset(tr), data.subset(te)
    ctx = EvalContext(DESK, make_tdlc_profile(251e-9), DF)
    nvs = np.array([m["noise_var"] for m in test.meta])
    fixed = {"input-interp": test.inputs, "lmmse": lmmse_from_input(test.inputs, nvs, ctx),
             "genie": test.targets}
    runs = []
    for seed in SEEDS:
        res = train(train_set, TrainConfig(seed=seed))
        runs.append({"seed": seed, "history": res.history,
                     "transformer": model_forward(test.inputs, res.params, res.model_config)})
    return {"test": test, "fixed": fixed, "runs": runs, "dmask": data_re_mask(test, ctx),
            "sizes": (len(tr), len(va), len(te)), "seconds": time.perf_counter() - t0}


def _metric(fn, est, test):
    return fn(est, test.targets)


# 1 ------------------------------------------------------------------------------------------

def test_c01_overhead_identities():
    t0 = time.perf_counter()
    dense, sparse = overhead_fraction(DENSE_SRS, DESK), overhead_fraction(SPARSE_SRS, DESK)
    assert dense == Fraction(2, 14) and isinstance(dense, Fraction)
    assert sparse == Fraction(1, 112)
    assert dense / sparse == 16
    big = GridShape(768, 14)
    assert overhead_fraction(DENSE_SRS, big) / overhead_fraction(SPARSE_SRS, big) == 16
    assert time.perf_counter() - t0 < 1.0


# 2 ------------------------------------------------------------------------------------------

def test_c02_db_reproduction():
    hi, lo = to_db(2.67), to_db(0.13)
    assert abs(hi - 4.26) <= 0.01
    assert abs(lo - (-8.86)) <= 0.01
    assert abs((hi - lo) - 13.12) <= 0.02


# 3 ------------------------------------------------------------------------------------------

def test_c03_gradient_suite():
    t0 = time.perf_counter()
    required = {"patch_embed", "positional", "attention", "layer_norm", "ffn", "decoder", "lstm_cell",
                "nmse", "sp_nmse", "corr", "smooth", "model"}
    assert required <= set(CASES)
    failures = []
    for name, builders in CASES.items():
        assert len(builders) >= 3, name
        for i in range(len(builders)):
            err = run_case(name, i)
            if not err <= 1e-4:
                failures.append(f"{name}[{i}] {err:.2e}")
            if name in LINEAR and not err <= 1e-6:
                failures.append(f"{name}[{i}] linear op {err:.2e}")
    assert not failures, failures
    assert time.perf_counter() - t0 < 120


# 4 ------------------------------------------------------------------------------------------

def test_c04_phase_invariance():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        H, Hh = crandn(rng, 6, 4), crandn(rng, 6, 4)
        r = np.exp(1j * rng.uniform(0, 2 * np.pi))
        base_sp, base_c = sp_nmse(Hh, H)[0], corr_loss(Hh, H)
        worst = max(worst, abs(sp_nmse(Hh, r * H)[0] - base_sp), abs(sp_nmse(r * Hh, H)[0] - base_sp),
                    abs(corr_loss(Hh, r * H) - base_c), abs(corr_loss(r * Hh, H) - base_c))
    assert worst <= 1e-9
    # witness: a pure phase rotation is a large plain-NMSE error
    H = crandn(rng, 6, 4)
    assert nmse(1j * H, H) == pytest.approx(2.0)
    assert sp_nmse(1j * H, H)[0] == pytest.approx(0.0, abs=1e-15)


# 5 ------------------------------------------------------------------------------------------

def test_c05_lmmse_oracle():
    K, nv = 8, 0.1
    toy = TapProfile(np.array([0.0, 1e-6, 3e-6]), np.array([0.5, 0.3, 0.2]), 1e-6)
    shape = GridShape(K, 1)
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        m = gen_pilot_symbols(build_mask(PilotConfig(1, 1, 0), shape), seed)
        prior = build_prior(toy, None, DF, m.omega[:, 0], nv)
        g = crandn(rng, 3) * np.sqrt(toy.powers)
        h = np.exp(-2j * np.pi * np.arange(K)[:, None] * DF * toy.delays[None, :]) @ g
        Y = observe(h[:, None], m, nv, seed)
        est = lmmse_estimate([Y], [m], prior, K, 1)[:, 0]
        # independent dense posterior mean with A = diag(S)
        R = np.zeros((K, K), complex)
        for tau, pw in zip(toy.delays, toy.powers):
            v = np.exp(-2j * np.pi * np.arange(K) * DF * tau)
            R += pw * np.outer(v, v.conj())
        A = np.diag(m.symbols)
        ref = R @ A.conj().T @ np.linalg.inv(A @ R @ A.conj().T + nv * np.eye(K)) @ Y
        worst = max(worst, np.linalg.norm(est - ref) / np.linalg.norm(ref))
    assert worst <= 1e-8


# 6 ------------------------------------------------------------------------------------------

def test_c06_jakes_fidelity():
    t0 = time.perf_counter()
    fd, dt = 50.0, 1.0 / DF
    profile = make_tdlc_profile(251e-9)
    n_max = int(math.floor(2.404826 / (2 * np.pi * fd * dt)))  # last lag before the first zero
    span = n_max + 1
    acc = np.zeros((profile.num_taps, span), complex)
    for seed in range(2000):
        g = gen_tap_gains(profile, DopplerSpec(fd), 2 * span - 1, dt, seed)[:, 0, 0, :]
        # lag n averaged over the span time origins of this realization
        win = np.lib.stride_tricks.sliding_window_view(g, span, axis=1)  # (P, span, span)
        acc += np.einsum("pon,po->pn", win, g[:, :span].conj()) / span
    r = acc / 2000 / profile.powers[:, None]
    ref = bessel_j0(2 * np.pi * fd * dt * np.arange(span))
    err = np.max(np.abs(r - ref))
    assert err <= 0.05, f"max deviation {err:.3f}"
    assert time.perf_counter() - t0 < 60


# 7 ------------------------------------------------------------------------------------------

def test_c07_proposition_certification():
    a0, a1 = 2 / 14, 1 / 112
    violations = []
    for rho_db in (0, 5, 10, 15, 20):
        for tc in (56, 168):
            rho = 10 ** (rho_db / 10)
            p0, p1 = RateParams(tc, rho, a0), RateParams(tc, rho, a1)
            g = gain_lower_bound(p0, p1, rho_eff1_override=rho_eff(p0))
            if g.gain - g.mid < -1e-9:
                violations.append((rho_db, tc, "gain < (a0-a1) g", g.gain, g.mid))
            if g.mid - g.bound < -1e-9:
                violations.append((rho_db, tc, "(a0-a1) g < (a0-a1) log2(1+rho_eff)", g.mid, g.bound))
            mean, se = ergodic_rate_mc(g.rho_eff1, n=1_000_000, rng_seed=(rho_db, tc))
            if abs(mean - ergodic_rate_term(g.rho_eff1)) > 3 * se:
                violations.append((rho_db, tc, "MC disagrees", mean, ergodic_rate_term(g.rho_eff1)))
    assert not violations, violations


# 8 ------------------------------------------------------------------------------------------

def test_c08_desk_scale_sp_nmse(desk):
    test, fixed = desk["test"], desk["fixed"]
    sp_in = _metric(sp_nmse_db, fixed["input-interp"], test)
    sp_lm = _metric(sp_nmse_db, fixed["lmmse"], test)
    sp_tf = [_metric(sp_nmse_db, r["transformer"], test) for r in desk["runs"]]
    power = [float(np.sum(np.abs(r["transformer"]) ** 2) / np.sum(np.abs(test.targets) ** 2)) for r in desk["runs"]]
    med = float(np.median(sp_tf))
    diag = (f"split {desk['sizes']}, runtime {desk['seconds']:.0f} s; SP-NMSE dB: input {sp_in:.2f}, "
            f"lmmse {sp_lm:.2f}, transformer per seed {np.round(sp_tf, 2).tolist()} (median {med:.2f}); "
            f"output power ratio {np.round(power, 3).tolist()}")
    print(diag)
    assert desk["sizes"] == (2000, 200, 200)
    assert desk["seconds"] <= 15 * 60, diag
    assert sp_in - med >= 3.0, diag
    assert sp_lm - med >= 1.0, diag


# 9 ------------------------------------------------------------------------------------------

def test_c09_baseline_ordering(desk):
    test, fixed = desk["test"], desk["fixed"]
    n = {k: _metric(nmse_db, v, test) for k, v in fixed.items()}
    tf = float(np.median([_metric(nmse_db, r["transformer"], test) for r in desk["runs"]]))
    diag = f"NMSE dB: {n}, transformer median {tf:.2f}"
    print(diag)
    assert n["genie"] < tf < max(n["lmmse"], n["input-interp"]), diag


# 10 -----------------------------------------------------------------------------------------

def test_c10_ber_sanity(desk):
    # flat unit channel with genie CSI at Es/N0 = 9.54 dB
    H = np.ones((1000, 1), complex)
    ber, nbits = ber_link_sim(H, H, [10 * np.log10(9.0)], bits=1_000_000, rng_seed=10)
    p = qfunc(3.0)
    assert nbits >= 1_000_000
    assert abs(ber[0] - p) <= 3 * math.sqrt(p * (1 - p) / nbits), (ber[0], p)

    test, fixed, mask = desk["test"], desk["fixed"], desk["dmask"]
    curves = {}
    for name in ("genie", "input-interp"):
        curves[name] = ber_link_sim(test.targets, fixed[name], BER_SNRS, 1_000_000, 7, mask)[0]
    tf = np.array([ber_link_sim(test.targets, r["transformer"], BER_SNRS, 1_000_000, 7, mask)[0]
                   for r in desk["runs"]])
    curves["transformer"] = np.median(tf, axis=0)
    i15 = BER_SNRS.index(15.0)
    diag = {k: np.round(v, 6).tolist() for k, v in curves.items()}
    print(diag)
    assert curves["genie"][i15] <= curves["transformer"][i15] <= curves["input-interp"][i15], diag
    for name, c in curves.items():
        assert np.all(np.diff(c) <= 0), (name, diag)


# 11 -----------------------------------------------------------------------------------------

def test_c11_damp_behavior():
    rng = np.random.default_rng(11)
    m = gen_pilot_symbols(build_mask(PilotConfig(1, 1, 0), GridShape(32, 1)), 1)
    h = crandn(rng, 32)
    Y = observe(h[:, None], m, 0.0, 0)
    st = damp_iterate(damp_init(m, Y.shape), Y, m, get_denoiser("identity"))
    np.testing.assert_allclose(st.x[:, 0], h, atol=1e-12)

    K, curves = 64, []
    den = get_denoiser("soft-delay")
    for seed in range(20):
        r = np.random.default_rng(seed)
        d = np.zeros(K, complex)
        d[r.choice(8, 3, replace=False)] = crandn(r, 3)
        hk = np.fft.fft(d, norm="ortho")
        ks = np.sort(r.choice(K, K // 2, replace=False))
        col = np.zeros((K, 1), bool)
        col[ks, 0] = True
        mask = PilotMask(col, np.stack([ks, np.zeros_like(ks)], axis=1), np.ones(len(ks), complex))
        s = damp_init(mask, (len(ks),))
        row = []
        for _ in range(5):
            s = damp_iterate(s, hk[ks], mask, den, rng_seed=seed)
            row.append(np.sum(np.abs(s.x[:, 0] - hk) ** 2) / np.sum(np.abs(hk) ** 2))
        curves.append(row)
    med = np.median(curves, axis=0)
    assert np.all(np.diff(med) <= 0), med


# 12 -----------------------------------------------------------------------------------------

def test_c12_serialization():
    data = collect(desk_channel(), 6, master_seed=12)
    blob = dataset_bytes([SamplePair(a, b) for a, b in zip(data.inputs, data.targets)], 48, 14)
    assert len(blob) == 40 + 6 * 2 * 48 * 14 * 8
    back = parse_dataset(blob)
    assert dataset_bytes([SamplePair(a, b) for a, b in zip(back.inputs, back.targets)], 48, 14) == blob
    with pytest.raises(BadMagicError):
        parse_dataset(b"XSIDSET1" + blob[8:])
    with pytest.raises(TruncatedFileError):
        parse_dataset(blob[:-1])
    with pytest.raises(TruncatedFileError):
        parse_dataset(blob[:20])

    cfg = ModelConfig()
    params = init_transformer(cfg, 12)
    mb = model_bytes(params, "transformer", cfg.to_dict())
    kind, c2, p2 = parse_model(mb)
    assert model_bytes(p2, kind, c2) == mb
    with pytest.raises(ModelFileError, match="bad magic"):
        parse_model(b"CSIMODL0" + mb[8:])
    with pytest.raises(ModelFileError, match="truncated"):
        parse_model(mb[:-1])


# 13 -----------------------------------------------------------------------------------------

def test_c13_determinism():
    a = collect(desk_channel(), 40, master_seed=13)
    b = collect(desk_channel(), 40, master_seed=13)
    to_bytes = lambda d: dataset_bytes([SamplePair(x, y) for x, y in zip(d.inputs, d.targets)], 48, 14)
    assert to_bytes(a) == to_bytes(b)
    cfg = TrainConfig(epochs=2, batch_size=8, seed=13)
    with threadpool_limits(limits=1):
        la = train(a, cfg).final_loss
        lb = train(b, cfg).final_loss
    assert la == lb

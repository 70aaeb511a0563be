"""``csiforge`` command line: gen, train, eval, rate."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import ratecalc
from .channel import ChannelConfig, DopplerSpec, make_tdlc_profile, read_tap_table
from .gridcore import GridShape
from .neural.lstm import LSTMConfig
from .neural.modelio import ModelFileError, save_model
from .neural.transformer import ModelConfig
from .objective import LossWeights
from .pilots import PilotConfig, overhead_fraction

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("csiforge")

DEFAULTS = {
    "channel": {
        "K": 48, "L": 14, "nrx": 1, "ntx": 1, "tau_rms_ns": 251.0, "fd_hz": 50.0,
        "subcarrier_spacing_hz": 15e3, "snr_db": 15.0, "shadowing_std_db": 0.0, "tap_table": "",
    },
    "pilots": {
        "sparse_comb": 4, "sparse_symbols": 1, "sparse_start": 10, "sparse_period": 2,
        "dense_comb": 2, "dense_symbols": 4, "dense_start": 10, "dense_period": 1,
    },
    "model": {
        "kind": "transformer", "patch_k": 4, "patch_l": 2, "d_model": 64, "n_layers": 4, "n_heads": 4,
        "d_ff": 128, "lstm_hidden": 32, "lstm_layers": 2,
    },
    "train": {
        "epochs": 10, "batch_size": 4, "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "weight_decay": 0.0,
        "seed": 0, "schedule": "cosine", "primary": "nmse", "beta": 0.05, "gamma": 0.1, "lambda_t": 1.0,
        "lambda_f": 1.0, "reduction": "energy", "split_seed": 0,
    },
    "eval": {
        "estimators": "input-interp,lmmse,damp,lstm,transformer,genie", "ber_bits": 100000,
        "ber_snrs": "", "split": "test", "heatmaps": True,
    },
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --- configuration -------------------------------------------------------------------------

def _coerce(section: str, key: str, text: str):
    default = DEFAULTS[section][key]
    t = text.strip()
    try:
        if isinstance(default, bool):
            if t.lower() in ("1", "true", "yes", "on"):
                return True
            if t.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(t)
        if isinstance(default, int):
            return int(t)
        if isinstance(default, float):
            return float(t)
    except ValueError:
        raise UsageError(f"{section}.{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return t


def apply_setting(cfg: dict, line: str, where: str = "") -> None:
    if "=" not in line:
        raise UsageError(f"{where}expected 'section.key = value', got {line!r}")
    lhs, rhs = line.split("=", 1)
    name = lhs.strip()
    if name.count(".") != 1:
        raise UsageError(f"{where}key {name!r} must look like section.key")
    section, key = name.split(".")
    if section not in DEFAULTS:
        raise UsageError(f"{where}unknown section {section!r} (known: {', '.join(DEFAULTS)})")
    if key not in DEFAULTS[section]:
        raise UsageError(f"{where}unknown key {name!r}")
    cfg[section][key] = _coerce(section, key, rhs)


def load_config(path=None, overrides=()) -> dict:
    cfg = {s: dict(v) for s, v in DEFAULTS.items()}
    if path:
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file {p} not found")
        for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if line:
                apply_setting(cfg, line, f"{p}:{n}: ")
    for item in overrides:
        apply_setting(cfg, item, "--set: ")
    return cfg


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def echo_config(cfg: dict, command: str) -> None:
    print(f"# {command} resolved config: {json.dumps(cfg, sort_keys=True)}")
    print(f"config-hash: {config_hash(cfg)}")


def channel_config(cfg: dict) -> ChannelConfig:
    c = cfg["channel"]
    shape = GridShape(c["K"], c["L"], c["nrx"], c["ntx"])
    tau = c["tau_rms_ns"] * 1e-9
    profile = read_tap_table(c["tap_table"], tau) if c["tap_table"] else make_tdlc_profile(tau)
    return ChannelConfig(shape, profile, DopplerSpec(c["fd_hz"]), subcarrier_spacing=c["subcarrier_spacing_hz"],
                         nominal_snr_db=c["snr_db"], shadowing_std_db=c["shadowing_std_db"], num_slots=2)


def pilot_configs(cfg: dict) -> tuple[PilotConfig, PilotConfig]:
    p = cfg["pilots"]
    dense = PilotConfig(p["dense_comb"], p["dense_symbols"], p["dense_start"], p["dense_period"], label="dense")
    sparse = PilotConfig(p["sparse_comb"], p["sparse_symbols"], p["sparse_start"], p["sparse_period"],
                         label="sparse")
    return dense, sparse


def model_config(cfg: dict):
    m, c = cfg["model"], cfg["channel"]
    if m["kind"] == "transformer":
        return ModelConfig(c["K"], c["L"], m["patch_k"], m["patch_l"], m["d_model"], m["n_layers"], m["n_heads"],
                           m["d_ff"])
    if m["kind"] == "lstm":
        return LSTMConfig(c["K"], c["L"], m["lstm_hidden"], m["lstm_layers"])
    raise UsageError(f"model.kind must be 'transformer' or 'lstm', got {m['kind']!r}")


def train_config(cfg: dict):
    from .pipeline.train import TrainConfig

    t = cfg["train"]
    loss = LossWeights(t["beta"], t["gamma"], t["lambda_t"], t["lambda_f"], t["primary"], t["reduction"])
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], lr=t["lr"], beta1=t["beta1"],
                       beta2=t["beta2"], weight_decay=t["weight_decay"], seed=t["seed"], schedule=t["schedule"],
                       kind=cfg["model"]["kind"], loss=loss, model=model_config(cfg))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


# --- commands --------------------------------------------------------------------------------

def cmd_gen(args, cfg) -> int:
    from .pipeline.dataset import generate_dataset, write_dataset

    if args.count < 1:
        raise UsageError("--count must be >= 1")
    ch = channel_config(cfg)
    dense, sparse = pilot_configs(cfg)
    sweep = _floats(args.snr_sweep) if args.snr_sweep else None
    samples = generate_dataset(ch, args.count, args.seed, sparse=sparse, dense=dense, snr_sweep=sweep)
    side = {"master_seed": args.seed, "count": args.count, "snr_sweep": sweep, "config": cfg,
            "config_hash": config_hash(cfg)}
    s = ch.shape
    n = write_dataset(samples, args.out, s.K, s.L, s.nRx, s.nTx, ch.nominal_snr_db, sidecar=side)
    eta_d, eta_s = overhead_fraction(dense, s), overhead_fraction(sparse, s)
    print(f"wrote {n} samples to {args.out}")
    print(f"eta_dense = {eta_d} ({float(eta_d):.6f})")
    print(f"eta_sparse = {eta_s} ({float(eta_s):.6f})")
    print(f"overhead ratio = {eta_d / eta_s}")
    return EXIT_OK


def _load_data(path):
    from .pipeline.dataset import read_dataset

    if not Path(path).exists():
        raise DataError(f"dataset {path} not found")
    return read_dataset(path)


def cmd_train(args, cfg) -> int:
    from .pipeline.dataset import split_by_realization
    from .pipeline.train import train

    data = _load_data(args.data)
    tc = train_config(cfg)
    if tc.model.K != data.K or tc.model.L != data.L:
        raise DataError(f"dataset grid {data.K}x{data.L} does not match model grid {tc.model.K}x{tc.model.L}")
    if data.meta:
        tr, va, _ = split_by_realization(data.meta, seed=cfg["train"]["split_seed"])
        train_set, val_set = data.subset(tr), data.subset(va)
    else:
        train_set, val_set = data, None
    if len(train_set) == 0:
        raise DataError("training split is empty")
    print(f"training {tc.kind} on {len(train_set)} samples"
          + (f", validating on {len(val_set)}" if val_set is not None else ""))
    res = train(train_set, tc, val=val_set if val_set is not None and len(val_set) else None,
                progress=lambda r: print(f"epoch {r['epoch']}: loss {r['train_loss']:.6g}", flush=True))
    save_model(args.out, res.params, tc.kind, res.model_config.to_dict())
    hist = Path(args.history) if args.history else Path(str(args.out) + ".history.csv")
    keys = list(res.history[0])
    with hist.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in res.history:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
    print(f"final loss {res.final_loss:.10g}")
    print(f"wrote model {args.out} and history {hist}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .pipeline.dataset import split_by_realization
    from .pipeline.evaluate import EvalContext, evaluate

    data = _load_data(args.data)
    names = [n.strip() for n in (args.estimators or cfg["eval"]["estimators"]).split(",") if n.strip()]
    models, missing = {}, []
    for kind, path in (("transformer", args.transformer), ("lstm", args.lstm)):
        if kind in names:
            if path is None or not Path(path).exists():
                missing.append(f"{kind} model ({'--' + kind} {path or '<not given>'})")
            else:
                models[kind] = path
    if missing:
        raise DataError("missing inputs: " + "; ".join(missing))
    split = args.split or cfg["eval"]["split"]
    if split == "test" and data.meta:
        _, _, te = split_by_realization(data.meta, seed=cfg["train"]["split_seed"])
        data = data.subset(te)
    elif split not in ("test", "all"):
        raise UsageError(f"eval split must be 'test' or 'all', got {split!r}")
    if len(data) == 0:
        raise DataError("evaluation set is empty")
    ch = channel_config(cfg)
    dense, sparse = pilot_configs(cfg)
    ctx = EvalContext(GridShape(data.K, data.L), ch.profile, ch.subcarrier_spacing, sparse, dense,
                      data.snr_db)
    out = Path(args.out)
    ber_snrs = _floats(cfg["eval"]["ber_snrs"]) if cfg["eval"]["ber_snrs"] else None
    report = evaluate(data, names, models, ctx, ber_snrs=ber_snrs, ber_bits=cfg["eval"]["ber_bits"],
                      heatmap_dir=out / "heatmaps" if cfg["eval"]["heatmaps"] else None)
    paths = report.write_csv(out)
    for name in names:
        cells = ", ".join(f"{s:g} dB: NMSE {report.nmse_db[name][s]:.2f} / SP {report.sp_nmse_db[name][s]:.2f}"
                          for s in report.snrs)
        print(f"{name}: {cells}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def cmd_rate(args, cfg) -> int:
    rho = 10.0 ** (args.rho_db / 10.0)
    for name in ("alpha0", "alpha1"):
        a = getattr(args, name)
        if not 0 < a < 1:
            raise UsageError(f"--{name} must lie in (0, 1), got {a}")
    try:
        p0 = ratecalc.RateParams(args.tc, rho, args.alpha0)
        p1 = ratecalc.RateParams(args.tc, rho, args.alpha1)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    override = ratecalc.rho_eff(p0) if args.assume_reliable else None
    res = ratecalc.gain_lower_bound(p0, p1, override)
    print(f"rho_eff(alpha0) = {res.rho_eff0:.6g}")
    print(f"rho_eff(alpha1) = {res.rho_eff1:.6g}")
    print(f"gain = {res.gain:.6g} bits/RE")
    print(f"mid = {res.mid:.6g} bits/RE")
    print(f"bound = {res.bound:.6g} bits/RE")
    print(f"hypothesis_holds = {str(res.hypothesis_holds).lower()}")
    alphas = _floats(args.alphas) if args.alphas else list(np.linspace(0.005, 0.5, 100))
    rows = ratecalc.sweep(p0, alphas)
    if args.out:
        with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["alpha", "sigma_e2", "rho_eff", "rate_bits_per_re"])
            w.writeheader()
            for r in rows:
                w.writerow({k: f"{v:.10g}" for k, v in r.items()})
        print(f"wrote sweep {args.out}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csiforge", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a paired dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=2400, help="number of channel realizations")
    g.add_argument("--snr-sweep", help="comma-separated SNRs (dB) cycled over realizations")

    t = sub.add_parser("train", parents=[common], help="train a transformer or LSTM")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--history", help="loss history CSV (default <out>.history.csv)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--kind", choices=["transformer", "lstm"])

    e = sub.add_parser("eval", parents=[common], help="compare estimators on a dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--transformer", help="transformer model file")
    e.add_argument("--lstm", help="LSTM model file")
    e.add_argument("--estimators", help="comma-separated estimator names")
    e.add_argument("--split", choices=["test", "all"])

    r = sub.add_parser("rate", parents=[common], help="pilot-reduction rate gain")
    r.add_argument("--alpha0", type=float, required=True)
    r.add_argument("--alpha1", type=float, required=True)
    r.add_argument("--rho-db", type=float, required=True)
    r.add_argument("--tc", type=float, required=True, help="coherence block length in REs")
    r.add_argument("--assume-reliable", action="store_true",
                   help="set rho_eff(alpha1) := rho_eff(alpha0) (reliable reconstruction)")
    r.add_argument("--alphas", help="comma-separated pilot fractions for the sweep CSV")
    r.add_argument("--out", help="sweep CSV path")
    return ap


def _flag_overrides(args) -> list[str]:
    out = []
    if args.command == "train":
        for flag, key in (("epochs", "train.epochs"), ("lr", "train.lr"), ("batch_size", "train.batch_size"),
                          ("seed", "train.seed"), ("kind", "model.kind")):
            v = getattr(args, flag)
            if v is not None:
                out.append(f"{key} = {v}")
    return out


def thread_limit() -> int | None:
    raw = os.environ.get("CSIFORGE_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"CSIFORGE_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("CSIFORGE_THREADS must be >= 1")
    return n


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "rate": cmd_rate}


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    from .baselines import NonFiniteIterateError
    from .pipeline.dataset import DatasetFormatError
    from .pipeline.evaluate import MissingModelError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, list(args.set) + _flag_overrides(args))
        echo_config(cfg, args.command)
        n = thread_limit()
        if n is None:
            return COMMANDS[args.command](args, cfg)
        with threadpool_limits(limits=n):
            return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DatasetFormatError, ModelFileError, MissingModelError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, NonFiniteIterateError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Paired (interpolated sparse-pilot estimate, true channel) datasets."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..channel import ChannelConfig, draw_effective_snr, gen_realization
from ..gridcore import GridShape
from ..pilots import (DENSE_SRS, SPARSE_SRS, PilotConfig, build_mask, gen_pilot_symbols, interp_window,
                      ls_at_pilots, noise_variance, observe)
from ..rng import seed_sequence

MAGIC = b"CSIDSET1"
VERSION = 1
HEADER = struct.Struct("<8sIIIIIQf")  # magic, version, K, L, nRx, nTx, count, snr
assert HEADER.size == 40


class DatasetFormatError(ValueError):
    """Base class for dataset file problems."""


class BadMagicError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


@dataclass
class SamplePair:
    input: np.ndarray   # (K, L) complex
    target: np.ndarray  # (K, L) complex
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ValueError(f"input {self.input.shape} and target {self.target.shape} differ")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("target has non-finite entries")


@dataclass
class Dataset:
    """Stacked sample pairs for one K x L grid."""

    inputs: np.ndarray   # (N, K, L) complex
    targets: np.ndarray  # (N, K, L) complex
    meta: list
    K: int
    L: int
    nRx: int = 1
    nTx: int = 1
    snr_db: float = 15.0

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.inputs[idx], self.targets[idx], [self.meta[i] for i in idx] if self.meta else [],
                       self.K, self.L, self.nRx, self.nTx, self.snr_db)

    @classmethod
    def from_pairs(cls, pairs, K, L, nRx=1, nTx=1, snr_db=15.0) -> "Dataset":
        pairs = list(pairs)
        inputs = np.stack([p.input for p in pairs]) if pairs else np.zeros((0, K, L), complex)
        targets = np.stack([p.target for p in pairs]) if pairs else np.zeros((0, K, L), complex)
        return cls(inputs, targets, [p.meta for p in pairs], K, L, nRx, nTx, snr_db)


def realization_pairs(config: ChannelConfig, sparse: PilotConfig, master_seed, index: int,
                      snr_db: float | None = None, window: int | None = None) -> list[SamplePair]:
    """All antenna-pair samples of realization ``index``.

    The channel spans a window of ``sparse.slot_period`` slots; the sample
    slot cycles with the realization index so every slot position appears.
    """
    shape = config.shape
    window = sparse.slot_period if window is None else window
    K, L = shape.K, shape.L
    seed = seed_sequence(master_seed, index)
    cfg = config if config.num_slots == window else _with_slots(config, window)
    H = np.asarray(gen_realization(cfg, seed))
    snr = draw_effective_snr(cfg, seed) if snr_db is None else float(snr_db)
    nv = noise_variance(snr)
    masks = [gen_pilot_symbols(build_mask(sparse, shape, s), seed_sequence(seed, 0xA5, s))
             for s in range(window)]
    ls = []
    for s, m in enumerate(masks):
        Y = observe(H[:, s * L:(s + 1) * L], m, nv, seed_sequence(seed, 0xB0, s))
        ls.append(ls_at_pilots(Y, m))
    H_in = interp_window(ls, masks, K, L)
    slot = index % window
    sl = slice(slot * L, (slot + 1) * L)
    pairs = []
    for r in range(shape.nRx):
        for t in range(shape.nTx):
            meta = {"realization": index, "r": r, "t": t, "slot": slot, "snr_db": snr,
                    "noise_var": nv}
            pairs.append(SamplePair(H_in[:, sl, r, t].copy(), H[:, sl, r, t].copy(), meta))
    return pairs


def _with_slots(config: ChannelConfig, n: int) -> ChannelConfig:
    from dataclasses import replace

    return replace(config, num_slots=n)


def generate_dataset(config: ChannelConfig, count: int, master_seed, sparse: PilotConfig = SPARSE_SRS,
                     dense: PilotConfig = DENSE_SRS, snr_sweep=None, start: int = 0) -> Iterator[SamplePair]:
    """Stream samples for realizations ``start .. start + count - 1``.

    The dense configuration only defines the target path: with oracle timing
    it returns the noise-free channel, so the target is ``H`` itself.
    ``snr_sweep`` cycles realizations through the listed SNRs; otherwise each
    realization draws its SNR from the channel config.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    dense.check(config.shape)
    for i in range(start, start + count):
        snr = None if not snr_sweep else snr_sweep[(i - start) % len(snr_sweep)]
        yield from realization_pairs(config, sparse, master_seed, i, snr)


def collect(config: ChannelConfig, count: int, master_seed, **kw) -> Dataset:
    s = config.shape
    pairs = generate_dataset(config, count, master_seed, **kw)
    return Dataset.from_pairs(pairs, s.K, s.L, s.nRx, s.nTx, config.nominal_snr_db)


# --- file format ------------------------------------------------------------------------

def _tensor_bytes(grid: np.ndarray) -> bytes:
    # k fastest: transpose (K, L) -> (L, K)
    g = np.ascontiguousarray(np.asarray(grid).T)
    out = np.empty(g.shape + (2,), dtype="<f4")
    out[..., 0] = g.real
    out[..., 1] = g.imag
    return out.tobytes()


def dataset_bytes(samples, K: int, L: int, nRx: int = 1, nTx: int = 1, snr_db: float = 15.0) -> bytes:
    body = [(_tensor_bytes(s.input) + _tensor_bytes(s.target)) for s in samples]
    header = HEADER.pack(MAGIC, VERSION, K, L, nRx, nTx, len(body), snr_db)
    return header + b"".join(body)


def write_dataset(samples, path, K: int, L: int, nRx: int = 1, nTx: int = 1, snr_db: float = 15.0,
                  sidecar: dict | None = None) -> int:
    """Write samples (an iterable of SamplePair or a Dataset); returns the count.

    When ``sidecar`` is given, per-sample metadata and the dict are written
    to ``<path>.meta.json``.
    """
    if isinstance(samples, Dataset):
        samples = [SamplePair(a, b, m) for a, b, m in
                   zip(samples.inputs, samples.targets, samples.meta or [{}] * len(samples))]
    samples = list(samples)
    Path(path).write_bytes(dataset_bytes(samples, K, L, nRx, nTx, snr_db))
    if sidecar is not None:
        doc = dict(sidecar)
        doc["samples"] = [s.meta for s in samples]
        Path(str(path) + ".meta.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    return len(samples)


def parse_dataset(data: bytes) -> Dataset:
    if len(data) < 8 or data[:8] != MAGIC:
        raise BadMagicError("bad magic: not a CSIDSET1 dataset file")
    if len(data) < HEADER.size:
        raise TruncatedFileError(f"truncated header: {len(data)} of {HEADER.size} bytes")
    _, version, K, L, nRx, nTx, count, snr = HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported dataset version {version} (expected {VERSION})")
    per = K * L * 2 * 4
    need = HEADER.size + count * 2 * per
    if len(data) != need:
        raise TruncatedFileError(f"payload size mismatch: expected {need} bytes, found {len(data)}")
    raw = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(count, 2, L, K, 2)
    values = (raw[..., 0].astype(np.float64) + 1j * raw[..., 1].astype(np.float64))
    values = np.swapaxes(values, 2, 3)  # (count, 2, K, L)
    return Dataset(values[:, 0].copy(), values[:, 1].copy(), [], K, L, nRx, nTx, float(snr))


def read_dataset(path) -> Dataset:
    ds = parse_dataset(Path(path).read_bytes())
    side = Path(str(path) + ".meta.json")
    if side.exists():
        doc = json.loads(side.read_text(encoding="utf-8"))
        ds.meta = doc.get("samples", [])
    return ds


def split_by_realization(meta: list, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seed-stable train/val/test index lists; a realization never straddles parts."""
    reals = sorted({m["realization"] for m in meta})
    rng = np.random.default_rng(seed_sequence(seed, 0x5917))
    order = np.array(reals)[rng.permutation(len(reals))] if reals else np.array([], dtype=int)
    n = len(order)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    groups = [set(order[:n_train].tolist()), set(order[n_train:n_train + n_val].tolist()),
              set(order[n_train + n_val:].tolist())]
    return tuple([i for i, m in enumerate(meta) if m["realization"] in g] for g in groups)

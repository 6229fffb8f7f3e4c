"""Dataset ingestion, synthetic generators, normalization, and container IO.

Sequences come in (context, target) pairs in z-scored space, with statistics
fitted on the training split only. The on-disk container is a deliberately
boring format: magic, version, JSON manifest, then raw little-endian array
bytes, so that save/load round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (CheckpointCorruptError, CheckpointVersionError, InputError,
                     NormalizationError, ParseError)


@dataclass
class TimeSeries:
    """A real-valued sequence with descriptive sampling metadata."""

    values: np.ndarray
    sample_period: str = ""
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.size == 0:
            raise InputError("time series must be nonempty")
        if not np.isfinite(self.values).all():
            raise InputError("time series contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise NormalizationError("constant series cannot be z-scored")

    @classmethod
    def from_values(cls, values: np.ndarray) -> "NormStats":
        std = float(np.std(values))
        if std < 1e-12:
            raise NormalizationError("constant series cannot be z-scored")
        return cls(mean=float(np.mean(values)), std=std)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass
class SequenceSet:
    """A stack of (context, target) pairs, plus optional per-sequence extras."""

    contexts: np.ndarray                       # [n, context_len]
    targets: np.ndarray                        # [n, forecast_len]
    flags: np.ndarray | None = None            # ground-truth anomaly labels
    long_targets: np.ndarray | None = None     # extended horizon ground truth

    def __len__(self) -> int:
        return len(self.contexts)


@dataclass
class DatasetSplits:
    train: SequenceSet
    val: SequenceSet
    test: SequenceSet
    norm: NormStats
    meta: dict = field(default_factory=dict)


@dataclass
class SynthSizes:
    """Counts and shapes for the synthetic generators."""

    n_train: int = 256
    n_val: int = 64
    n_test: int = 256
    context_len: int = 32
    forecast_len: int = 16
    periods: tuple[float, ...] = (8.0, 16.0)
    amplitudes: tuple[float, ...] = (1.0, 0.6)
    noise_scale: float = 0.05
    anomaly_fraction: float = 0.3
    long_factor: int = 1
    wn_sigma: float = 1.0
    normalize: bool = True


SYNTH_KINDS = ("multi-sine", "regime-switch", "trend-season", "white-noise")


def _sine_bank(t: np.ndarray, periods, amps, phases) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    for p, a, ph in zip(periods, amps, phases):
        out += a * np.sin(2.0 * np.pi * t / p + ph)
    return out


def _gen_sequence(kind: str, sizes: SynthSizes, rng: np.random.Generator,
                  total_len: int, allow_anomaly: bool) -> tuple[np.ndarray, bool]:
    t = np.arange(total_len, dtype=float)
    if kind == "white-noise":
        return rng.normal(scale=sizes.wn_sigma, size=total_len), False

    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(sizes.periods))
    amps = np.asarray(sizes.amplitudes) * (1.0 + 0.2 * rng.normal(size=len(sizes.periods)))
    x = _sine_bank(t, sizes.periods, amps, phases)
    if kind == "trend-season":
        x += rng.uniform(-0.02, 0.02) * t

    anomalous = False
    if kind == "regime-switch" and allow_anomaly and rng.uniform() < sizes.anomaly_fraction:
        anomalous = True
        # the switch starts inside the context so it is visible before the
        # forecast region; severity varies so errors form a continuum
        switch = int(rng.uniform(0.5, 0.9) * sizes.context_len)
        severity = rng.uniform(0.4, 1.0)
        new_periods = np.asarray(sizes.periods) * rng.choice([0.5, 0.75, 1.5, 2.0])
        new_phases = rng.uniform(0.0, 2.0 * np.pi, size=len(sizes.periods))
        new_amps = amps * (1.0 + severity * rng.uniform(0.5, 1.5))
        tail = _sine_bank(t[switch:], new_periods, new_amps, new_phases)
        blend = severity
        x[switch:] = (1.0 - blend) * x[switch:] + blend * tail
        x[switch:] += severity * sizes.noise_scale * 4.0 * rng.normal(size=total_len - switch)

    x += sizes.noise_scale * rng.normal(size=total_len)
    return x, anomalous


def synth_dataset(kind: str, seed: int, sizes: SynthSizes) -> DatasetSplits:
    """Deterministic synthetic dataset; identical (kind, seed, sizes) give
    identical splits. Only test sequences may carry anomalies, and their
    ground-truth labels are kept for evaluation."""
    if kind not in SYNTH_KINDS:
        raise InputError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    rng = np.random.default_rng(seed)
    c, f = sizes.context_len, sizes.forecast_len

    def make(n: int, allow_anomaly: bool, factor: int) -> SequenceSet:
        total = c + f * factor
        rows = np.empty((n, total))
        flags = np.zeros(n, dtype=bool)
        for i in range(n):
            rows[i], flags[i] = _gen_sequence(kind, sizes, rng, total, allow_anomaly)
        return SequenceSet(
            contexts=rows[:, :c],
            targets=rows[:, c:c + f],
            flags=flags if allow_anomaly else None,
            long_targets=rows[:, c:] if factor > 1 else None,
        )

    train = make(sizes.n_train, False, 1)
    val = make(sizes.n_val, False, 1)
    test = make(sizes.n_test, True, sizes.long_factor)

    if sizes.normalize:
        norm = NormStats.from_values(np.concatenate(
            [train.contexts.reshape(-1), train.targets.reshape(-1)]))
    else:
        norm = NormStats(mean=0.0, std=1.0)
    for s in (train, val, test):
        s.contexts = norm.apply(s.contexts)
        s.targets = norm.apply(s.targets)
        if s.long_targets is not None:
            s.long_targets = norm.apply(s.long_targets)
    return DatasetSplits(train=train, val=val, test=test, norm=norm,
                         meta={"kind": kind, "seed": seed})


@dataclass
class CsvLoadConfig:
    context_len: int
    forecast_len: int
    stride: int
    train_frac: float = 0.7
    val_frac: float = 0.15
    delimiter: str = ","
    row_filter: Callable[[dict], bool] | None = None
    normalize: bool = True


def load_csv(path, column: str, config: CsvLoadConfig) -> DatasetSplits:
    """Sliding (context, target) extraction from a single CSV column.

    One header row is required; a timestamp column may exist but is ignored.
    Windows are split chronologically into train/val/test and the z-score
    statistics are fitted on the training windows only.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"dataset file not found: {path}")
    values = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=config.delimiter)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ParseError(f"column {column!r} not present in header of {path}")
        for line_no, row in enumerate(reader, start=2):
            if config.row_filter is not None and not config.row_filter(row):
                continue
            cell = (row.get(column) or "").strip()
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(f"{path}: line {line_no}: not a number: {cell!r}") from None
    series = np.asarray(values)
    window = config.context_len + config.forecast_len
    if len(series) < window:
        raise InputError(
            f"{len(series)} usable rows cannot fit one context+target window of {window}")

    starts = list(range(0, len(series) - window + 1, config.stride))
    pairs = np.stack([series[s:s + window] for s in starts])
    n = len(pairs)
    n_train = max(1, int(round(config.train_frac * n)))
    n_val = int(round(config.val_frac * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)

    def cut(block: np.ndarray) -> SequenceSet:
        return SequenceSet(contexts=block[:, :config.context_len],
                           targets=block[:, config.context_len:])

    train, val, test = cut(pairs[:n_train]), cut(pairs[n_train:n_train + n_val]), \
        cut(pairs[n_train + n_val:])
    if config.normalize:
        norm = NormStats.from_values(pairs[:n_train].reshape(-1))
    else:
        norm = NormStats(0.0, 1.0)
    for s in (train, val, test):
        s.contexts = norm.apply(s.contexts)
        s.targets = norm.apply(s.targets)
    return DatasetSplits(train=train, val=val, test=test, norm=norm,
                         meta={"source": str(path), "column": column})


# deterministic binary container

_MAGIC = b"WCASTBIN"
CONTAINER_VERSION = 1
_DTYPES = {"float64": "<f8", "int64": "<i8", "bool": "|b1"}


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            arr = arr.astype(np.float64)
            dtype = "float64"
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(arr.astype(_DTYPES[dtype]).tobytes())
    manifest = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                          sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", CONTAINER_VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def read_container(path, expect_kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(_MAGIC) + 12 or raw[:len(_MAGIC)] != _MAGIC:
        raise CheckpointCorruptError(f"{path}: not a whittlecast container")
    off = len(_MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != CONTAINER_VERSION:
        raise CheckpointVersionError(
            f"{path}: container version {version} unsupported (expected {CONTAINER_VERSION})")
    (man_len,) = struct.unpack_from("<Q", raw, off)
    off += 8
    if off + man_len > len(raw):
        raise CheckpointCorruptError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[off:off + man_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"{path}: manifest unreadable") from e
    off += man_len
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise CheckpointCorruptError(
            f"{path}: container holds {manifest.get('kind')!r}, expected {expect_kind!r}")
    arrays = {}
    for entry in manifest["arrays"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = dt.itemsize * count
        if off + nbytes > len(raw):
            raise CheckpointCorruptError(f"{path}: truncated array {entry['name']!r}")
        arr = np.frombuffer(raw[off:off + nbytes], dtype=dt).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(entry["dtype"]) if entry["dtype"] != "float64" \
            else arr.copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointCorruptError(f"{path}: {len(raw) - off} trailing bytes")
    return manifest["meta"], arrays


def save_dataset(path, splits: DatasetSplits) -> None:
    arrays = {}
    flags_meta = {}
    for name, s in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        arrays[f"{name}_contexts"] = s.contexts
        arrays[f"{name}_targets"] = s.targets
        if s.flags is not None:
            arrays[f"{name}_flags"] = s.flags
            flags_meta[name] = True
        if s.long_targets is not None:
            arrays[f"{name}_long_targets"] = s.long_targets
    arrays["norm"] = np.array([splits.norm.mean, splits.norm.std])
    write_container(path, "dataset", {**splits.meta, "flags": flags_meta}, arrays)


def load_dataset(path) -> DatasetSplits:
    meta, arrays = read_container(path, expect_kind="dataset")

    def pick(name: str) -> SequenceSet:
        return SequenceSet(
            contexts=arrays[f"{name}_contexts"],
            targets=arrays[f"{name}_targets"],
            flags=arrays.get(f"{name}_flags"),
            long_targets=arrays.get(f"{name}_long_targets"),
        )

    norm = NormStats(mean=float(arrays["norm"][0]), std=float(arrays["norm"][1]))
    meta = dict(meta)
    meta.pop("flags", None)
    return DatasetSplits(train=pick("train"), val=pick("val"), test=pick("test"),
                         norm=norm, meta=meta)

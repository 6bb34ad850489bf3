"""Sampled paths, labeled datasets, preprocessing, corruption, and fBm.

A Path is an immutable pair (times, values) with strictly increasing times;
every consumer interprets it piecewise linearly. Preprocessing applies the
fixed stage order

    min-max scale -> resample -> time augment -> lead-lag -> basepoint

with min-max statistics fit on the training split only. Fractional Brownian
motion is sampled by the Davies-Harte circulant embedding with an exact
Cholesky fallback when the embedding turns out non-positive.
"""

import logging
import os
import re
from dataclasses import dataclass

import numpy as np

from .seeding import STREAM_CORRUPTION, STREAM_DATASET, derive_rng, seed_sequence

logger = logging.getLogger(__name__)

HURST_CLASSES = tuple(0.05 + 0.10 * k for k in range(8))


class DatasetFormatError(ValueError):
    """Malformed dataset text; message cites the file line."""


class CorruptionError(RuntimeError):
    """A corrupted sample lost an entire channel."""


@dataclass(frozen=True)
class Path:
    """Immutable sampled path: strictly increasing times, values (ell, d)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if t.ndim != 1 or v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise ValueError(f"bad shapes: times {t.shape}, values {v.shape}")
        if t.shape[0] < 1:
            raise ValueError("path needs at least one sample")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
            raise ValueError("non-finite entries in path")
        if np.any(np.diff(t) <= 0):
            bad = int(np.argmax(np.diff(t) <= 0)) + 1
            raise ValueError(f"times not strictly increasing at index {bad}")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_values(cls, values, times=None) -> "Path":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if times is None:
            times = np.linspace(0.0, 1.0, values.shape[0])
        return cls(times, values)


@dataclass(frozen=True)
class LabeledDataset:
    """Paths with integer class labels in [0, num_classes)."""

    paths: tuple
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        paths = tuple(self.paths)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or len(paths) != labels.shape[0]:
            raise ValueError(f"{len(paths)} paths vs {labels.shape} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        if len({p.d for p in paths}) > 1:
            raise ValueError("paths have inconsistent channel counts")
        labels.setflags(write=False)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.paths)

    @property
    def d(self) -> int:
        if not self.paths:
            raise ValueError("empty dataset has no channel count")
        return self.paths[0].d

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            tuple(self.paths[i] for i in indices), self.labels[indices], self.num_classes
        )


@dataclass(frozen=True)
class AugmentationConfig:
    """Preprocessing switches; stage order is fixed (see module docstring)."""

    minmax_scale: bool = True
    resample_length: int = 0  # 0 = keep native length
    time_augment: bool = False
    lead_lag: bool = False
    basepoint: bool = False


@dataclass(frozen=True)
class CorruptionConfig:
    """I.i.d. cell dropping at rate drop_prob, then linear imputation."""

    drop_prob: float
    seed: int = 0
    on_channel_loss: str = "error"  # or "zero"

    def __post_init__(self):
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError(f"drop_prob must be in [0, 1), got {self.drop_prob}")
        if self.on_channel_loss not in ("error", "zero"):
            raise ValueError(f"unknown channel-loss policy {self.on_channel_loss!r}")


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-channel affine map onto [-1, 1]; constant channels map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        out = np.zeros_like(values)
        ok = span > 0
        out[:, ok] = 2.0 * (values[:, ok] - self.lo[ok]) / span[ok] - 1.0
        return out


def fit_minmax(ds: LabeledDataset) -> MinMaxScaler:
    """Channel-wise min/max over every sample row of the (training) dataset."""
    lo = np.full(ds.d, np.inf)
    hi = np.full(ds.d, -np.inf)
    for p in ds.paths:
        np.minimum(lo, p.values.min(axis=0), out=lo)
        np.maximum(hi, p.values.max(axis=0), out=hi)
    return MinMaxScaler(lo, hi)


def _resample(path: Path, length: int) -> Path:
    grid = np.linspace(path.times[0], path.times[-1], length)
    vals = np.empty((length, path.d))
    for c in range(path.d):
        vals[:, c] = np.interp(grid, path.times, path.values[:, c])
    return Path(grid, vals)


def _time_augment(path: Path) -> Path:
    span = path.times[-1] - path.times[0]
    norm = (path.times - path.times[0]) / span if span > 0 else np.zeros_like(path.times)
    return Path(path.times, np.column_stack([path.values, norm]))


def _lead_lag(path: Path) -> Path:
    """Interleaved lead-lag embedding: channels [lead | lag], length 2*ell-1."""
    ell, d = path.values.shape
    out = np.empty((2 * ell - 1, 2 * d))
    lead = path.values[(np.arange(2 * ell - 1) + 1) // 2]
    lag = path.values[np.arange(2 * ell - 1) // 2]
    out[:, :d] = lead
    out[:, d:] = lag
    times = np.linspace(path.times[0], path.times[-1], 2 * ell - 1)
    return Path(times, out)


def _basepoint(path: Path) -> Path:
    step = path.times[1] - path.times[0] if path.length > 1 else 1.0
    times = np.concatenate([[path.times[0] - step], path.times])
    values = np.vstack([np.zeros(path.d), path.values])
    return Path(times, values)


def preprocess(
    ds: LabeledDataset, cfg: AugmentationConfig, scaler: MinMaxScaler = None
) -> LabeledDataset:
    """Apply the augmentation pipeline in the fixed stage order.

    When ``cfg.minmax_scale`` is on and no scaler is given, statistics are
    fit on ``ds`` itself (the training-split call). Pass the training-split
    scaler when transforming a test split.
    """
    if cfg.minmax_scale and scaler is None:
        scaler = fit_minmax(ds)
    out = []
    for p in ds.paths:
        if cfg.minmax_scale:
            p = Path(p.times, scaler.transform(p.values))
        if cfg.resample_length and p.length != cfg.resample_length:
            p = _resample(p, cfg.resample_length)
        if cfg.time_augment:
            p = _time_augment(p)
        if cfg.lead_lag:
            p = _lead_lag(p)
        if cfg.basepoint:
            p = _basepoint(p)
        out.append(p)
    return LabeledDataset(tuple(out), ds.labels, ds.num_classes)


def preprocess_pair(train, test, cfg):
    """Preprocess both splits with scaling statistics fit on train only."""
    scaler = fit_minmax(train) if cfg.minmax_scale else None
    return preprocess(train, cfg, scaler), preprocess(test, cfg, scaler)


def corrupt_and_impute(path: Path, cfg: CorruptionConfig) -> Path:
    """Drop cells i.i.d. with prob p, then impute linearly along time.

    Interior gaps are linearly interpolated between surviving neighbours;
    missing runs at either boundary take the nearest surviving value
    (constant extrapolation). A channel losing every cell raises
    CorruptionError unless the config says fill with zeros. p=0 returns the
    path unchanged regardless of seed.
    """
    if cfg.drop_prob == 0.0:
        return path
    rng = derive_rng(cfg.seed, STREAM_CORRUPTION)
    dropped = rng.random(path.values.shape) < cfg.drop_prob
    if not dropped.any():
        return path
    vals = path.values.copy()
    for c in range(path.d):
        keep = ~dropped[:, c]
        if not keep.any():
            if cfg.on_channel_loss == "error":
                raise CorruptionError(
                    f"channel {c} lost all {path.length} cells at p={cfg.drop_prob}"
                )
            vals[:, c] = 0.0
            continue
        if keep.all():
            continue
        vals[:, c] = np.interp(path.times, path.times[keep], path.values[keep, c])
    return Path(path.times, vals)


# ---------------------------------------------------------------------------
# Fractional Brownian motion


def _fgn_autocov(n: int, hurst: float) -> np.ndarray:
    k = np.arange(n + 1, dtype=np.float64)
    h2 = 2.0 * hurst
    return 0.5 * ((k + 1) ** h2 + np.abs(k - 1) ** h2 - 2.0 * k**h2)


def _fgn_davies_harte(n: int, hurst: float, rng) -> np.ndarray:
    """Unit-spacing fractional Gaussian noise, or None if the embedding fails.

    Circulant row [g0..gn, g_{n-1}..g1] of size 2n; eigenvalues via FFT must
    be nonnegative for the method to be exact.
    """
    gamma = _fgn_autocov(n, hurst)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * eig.max():
        return None
    eig = np.clip(eig, 0.0, None)
    m = row.shape[0]
    xi = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return np.sqrt(m) * np.fft.ifft(np.sqrt(eig) * xi).real[:n]


def _fgn_cholesky(n: int, hurst: float, rng) -> np.ndarray:
    gamma = _fgn_autocov(n, hurst)
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    cov = gamma[idx]
    chol = np.linalg.cholesky(cov + 1e-14 * np.eye(n))
    return chol @ rng.standard_normal(n)


def generate_fbm(hurst: float, ell: int, d: int, seed, method: str = "auto") -> Path:
    """Fractional Brownian motion on [0, 1]: ell samples, d independent channels.

    B(0) = 0 per channel; increments are fGn scaled by dt^H. Davies-Harte by
    default with exact Cholesky as fallback (or forced via ``method``).
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"Hurst exponent must lie in (0,1), got {hurst}")
    if ell < 2:
        raise ValueError("need at least 2 samples")
    if method not in ("auto", "davies-harte", "cholesky"):
        raise ValueError(f"unknown method {method!r}")
    n = ell - 1
    dt_scale = (1.0 / n) ** hurst
    values = np.zeros((ell, d))
    root = seed_sequence(seed)
    for c in range(d):
        rng = derive_rng(root, STREAM_DATASET, c)
        fgn = None
        if method in ("auto", "davies-harte"):
            fgn = _fgn_davies_harte(n, hurst, rng)
            if fgn is None and method == "davies-harte":
                raise RuntimeError(f"Davies-Harte embedding not PSD for H={hurst}, n={n}")
            if fgn is None:
                logger.info("Davies-Harte embedding failed (H=%s, n=%d); using Cholesky", hurst, n)
        if fgn is None:
            fgn = _fgn_cholesky(n, hurst, rng)
        values[1:, c] = np.cumsum(fgn) * dt_scale
    return Path(np.linspace(0.0, 1.0, ell), values)


def _standardize_per_sample(path: Path) -> Path:
    mean = path.values.mean(axis=0)
    std = path.values.std(axis=0)  # population variance (divide by n)
    vals = (path.values - mean) / np.where(std > 0, std, 1.0)
    vals[:, std == 0] = 0.0
    return Path(path.times, vals)


def hurst_dataset(variant: str, n_train: int, n_test: int, ell: int, d: int, seed):
    """The 8-class Hurst classification task: H in {0.05, 0.15, ..., 0.75}.

    Returns (train, test). Labels ascend with H. variant V1 keeps raw fBm;
    V2 standardizes each sample per channel (population variance), which
    removes amplitude cues and forces roughness-based discrimination.
    Sample seeds derive as (seed, split, class, index): fully reproducible
    and parallelizable.
    """
    if variant not in ("V1", "V2"):
        raise ValueError(f"variant must be V1 or V2, got {variant!r}")
    root = seed_sequence(seed)

    def build(split_code: int, per_class: int) -> LabeledDataset:
        paths, labels = [], []
        for cls, hurst in enumerate(HURST_CLASSES):
            for idx in range(per_class):
                p = generate_fbm(
                    hurst, ell, d, seed_sequence(root, split_code, cls, idx)
                )
                if variant == "V2":
                    p = _standardize_per_sample(p)
                paths.append(p)
                labels.append(cls)
        return LabeledDataset(tuple(paths), np.array(labels), len(HURST_CLASSES))

    return build(1, n_train), build(2, n_test)


# ---------------------------------------------------------------------------
# Dataset text format

_HEADER_RE = re.compile(r"^#dataset d=(\d+) classes=(\d+)$")
_SAMPLE_RE = re.compile(r"^sample label=(\d+) len=(\d+)$")


def _format_block(path: Path, label: int) -> str:
    lines = [f"sample label={label} len={path.length}"]
    for t, row in zip(path.times, path.values):
        lines.append(" ".join(repr(float(x)) for x in (t, *row)))
    return "\n".join(lines)


def save_dataset(ds: LabeledDataset, target: str, fmt: str = "file") -> None:
    """Write the documented text format; 'file' (single) or 'dir' (per sample).

    Floats are written with repr (shortest round-trip), so load is bit-exact.
    """
    header = f"#dataset d={ds.d} classes={ds.num_classes}"
    if fmt == "file":
        blocks = [_format_block(p, l) for p, l in zip(ds.paths, ds.labels)]
        with open(target, "w") as fh:
            fh.write(header + "\n" + "\n\n".join(blocks) + "\n")
    elif fmt == "dir":
        os.makedirs(target, exist_ok=True)
        for i, (p, l) in enumerate(zip(ds.paths, ds.labels)):
            with open(os.path.join(target, f"sample_{i:05d}.txt"), "w") as fh:
                fh.write(header + "\n" + _format_block(p, l) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def _parse_blocks(lines, d, classes, where):
    """Parse sample blocks from (lineno, text) pairs; header already consumed."""
    paths, labels = [], []
    i = 0
    n = len(lines)
    while i < n:
        lineno, text = lines[i]
        if not text.strip():
            i += 1
            continue
        m = _SAMPLE_RE.match(text.strip())
        if not m:
            raise DatasetFormatError(f"{where}:{lineno}: expected 'sample label=.. len=..', got {text.strip()!r}")
        label, length = int(m.group(1)), int(m.group(2))
        if label >= classes:
            raise DatasetFormatError(f"{where}:{lineno}: label {label} outside 0..{classes - 1}")
        rows = np.empty((length, d + 1))
        for r in range(length):
            i += 1
            if i >= n or not lines[i][1].strip():
                raise DatasetFormatError(
                    f"{where}:{lineno}: sample declares len={length} but block ends after {r} rows"
                )
            rlineno, rtext = lines[i]
            parts = rtext.split()
            if len(parts) != d + 1:
                raise DatasetFormatError(
                    f"{where}:{rlineno}: expected {d + 1} columns, got {len(parts)}"
                )
            try:
                rows[r] = [float(x) for x in parts]
            except ValueError:
                raise DatasetFormatError(f"{where}:{rlineno}: non-numeric value") from None
        try:
            paths.append(Path(rows[:, 0], rows[:, 1:]))
        except ValueError as exc:
            raise DatasetFormatError(f"{where}:{lineno}: invalid sample: {exc}") from None
        labels.append(label)
        i += 1
    return paths, labels


def _read_lines(fname):
    with open(fname) as fh:
        return [(i + 1, line.rstrip("\n")) for i, line in enumerate(fh)]


def _parse_header(lines, where):
    for idx, (lineno, text) in enumerate(lines):
        if text.strip():
            m = _HEADER_RE.match(text.strip())
            if not m:
                raise DatasetFormatError(
                    f"{where}:{lineno}: expected '#dataset d=<int> classes=<int>' header"
                )
            return int(m.group(1)), int(m.group(2)), lines[idx + 1 :]
    raise DatasetFormatError(f"{where}: empty file, no samples")


def load_dataset(uri: str, fmt: str = None) -> LabeledDataset:
    """Load the documented dataset format from a file or a directory."""
    if fmt is None:
        fmt = "dir" if os.path.isdir(uri) else "file"
    if fmt == "file":
        d, classes, rest = _parse_header(_read_lines(uri), uri)
        paths, labels = _parse_blocks(rest, d, classes, uri)
        if not paths:
            raise DatasetFormatError(f"{uri}: no samples")
        return LabeledDataset(tuple(paths), np.array(labels), classes)
    if fmt == "dir":
        files = sorted(
            os.path.join(uri, f) for f in os.listdir(uri) if f.endswith(".txt")
        )
        if not files:
            raise DatasetFormatError(f"{uri}: no sample files (*.txt)")
        all_paths, all_labels = [], []
        d0 = classes0 = None
        for fname in files:
            d, classes, rest = _parse_header(_read_lines(fname), fname)
            if d0 is None:
                d0, classes0 = d, classes
            elif (d, classes) != (d0, classes0):
                raise DatasetFormatError(f"{fname}:1: header disagrees with {files[0]}")
            paths, labels = _parse_blocks(rest, d, classes, fname)
            all_paths.extend(paths)
            all_labels.extend(labels)
        if not all_paths:
            raise DatasetFormatError(f"{uri}: no samples")
        return LabeledDataset(tuple(all_paths), np.array(all_labels), classes0)
    raise ValueError(f"unknown format {fmt!r}")

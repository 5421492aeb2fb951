"""Vibration recordings, fixed-length windows and domain datasets.

Two file adapters (Paderborn ``.mat`` containers, JNU columnar text) plus a
seeded synthetic two-domain benchmark that stands in for the real data on a
desktop machine.
"""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 2048
DEFAULT_CAP = 2000

# Class index follows the listing order; confusion matrices depend on it.
PU_CODES = ("K001", "KA04", "KA15", "KA22", "KA30", "KI14", "KI17", "KI21")
PU_DOMAINS = {"A1": "N15_M01_F10", "A2": "N15_M07_F04", "A3": "N15_M07_F10"}
PU_DEFAULT_CHANNEL = "vibration_1"

JNU_STATES = ("H", "IR", "OR", "B")
JNU_DOMAINS = {"B1": 600, "B2": 800, "B3": 1000}
# File names used by the original JNU release, accepted as a fallback.
_JNU_ALIASES = {
    "H": "n{speed}_3_2.csv",
    "IR": "ib{speed}_2.csv",
    "OR": "ob{speed}_2.csv",
    "B": "tb{speed}_2.csv",
}


@dataclass(frozen=True)
class SignalSample:
    waveform: np.ndarray
    label: int | None
    domain_id: str
    source_file: str = ""


@dataclass(frozen=True)
class TransferTask:
    source_domain: str
    target_domain: str

    def __post_init__(self):
        if self.source_domain == self.target_domain:
            raise ConfigError(f"task source and target are both {self.source_domain!r}")

    @classmethod
    def parse(cls, text: str) -> "TransferTask":
        for sep in ("->", "→", ":"):
            if sep in text:
                src, tgt = (s.strip() for s in text.split(sep, 1))
                return cls(src, tgt)
        raise ConfigError(f"cannot parse task {text!r}; expected 'SRC->TGT'")

    def __str__(self):
        return f"{self.source_domain}→{self.target_domain}"


class DomainDataset:
    """Immutable stack of equal-length windows from one domain.

    Waveforms live in a single ``(N, L)`` float32 array; ``labels`` is an int64
    vector or ``None`` for an unlabeled domain.
    """

    def __init__(
        self,
        waveforms: np.ndarray,
        labels: np.ndarray | None,
        class_count: int,
        domain_id: str,
        source_files: Sequence[str] | None = None,
    ):
        waveforms = np.array(waveforms, dtype=np.float32, copy=True)
        if waveforms.ndim != 2:
            raise DataError(f"waveforms must be 2-D (N, L), got shape {waveforms.shape}")
        if not np.all(np.isfinite(waveforms)):
            raise DataError(f"non-finite values in domain {domain_id}")
        if class_count < 1:
            raise DataError("class_count must be positive")
        if labels is not None:
            labels = np.array(labels, dtype=np.int64, copy=True)
            if labels.shape != (len(waveforms),):
                raise DataError("labels must have one entry per waveform")
            if labels.size and (labels.min() < 0 or labels.max() >= class_count):
                raise DataError(f"labels outside [0, {class_count})")
            labels.setflags(write=False)
        waveforms.setflags(write=False)
        self.waveforms = waveforms
        self.labels = labels
        self.class_count = int(class_count)
        self.domain_id = domain_id
        self.source_files = tuple(source_files) if source_files is not None else ("",) * len(waveforms)

    @classmethod
    def from_samples(cls, samples: Sequence[SignalSample], class_count: int, domain_id: str):
        if not samples:
            raise DataError("cannot build a dataset from zero samples")
        labels = [s.label for s in samples]
        if all(lbl is None for lbl in labels):
            label_arr = None
        elif any(lbl is None for lbl in labels):
            raise DataError("dataset mixes labeled and unlabeled samples")
        else:
            label_arr = np.asarray(labels)
        return cls(
            np.stack([s.waveform for s in samples]),
            label_arr,
            class_count,
            domain_id,
            [s.source_file for s in samples],
        )

    def __len__(self):
        return len(self.waveforms)

    def __getitem__(self, i: int) -> SignalSample:
        label = None if self.labels is None else int(self.labels[i])
        return SignalSample(self.waveforms[i], label, self.domain_id, self.source_files[i])

    @property
    def samples(self) -> list[SignalSample]:
        return [self[i] for i in range(len(self))]

    @property
    def window_len(self) -> int:
        return self.waveforms.shape[1]

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise DataError(f"domain {self.domain_id} is unlabeled")
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, indices) -> "DomainDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return DomainDataset(
            self.waveforms[indices],
            None if self.labels is None else self.labels[indices],
            self.class_count,
            self.domain_id,
            [self.source_files[i] for i in indices],
        )

    def without_labels(self) -> "DomainDataset":
        return DomainDataset(self.waveforms, None, self.class_count, self.domain_id, self.source_files)

    def __repr__(self):
        return (
            f"DomainDataset(domain={self.domain_id!r}, n={len(self)}, "
            f"L={self.window_len}, C={self.class_count}, labeled={self.is_labeled})"
        )


def _window_array(raw, window_len, per_class_cap=None, stride=None):
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if window_len < 1:
        raise DataError("window_len must be positive")
    if raw.size < window_len:
        raise DataError(f"recording too short: {raw.size} < window length {window_len}")
    stride = window_len if stride is None else int(stride)
    if stride < 1:
        raise DataError("stride must be positive")
    offsets = np.arange(0, raw.size - window_len + 1, stride)
    if per_class_cap is not None:
        offsets = offsets[:per_class_cap]
    windows = np.lib.stride_tricks.sliding_window_view(raw, window_len)[offsets]
    return np.ascontiguousarray(windows, dtype=np.float32), offsets


def window_recording(
    raw,
    window_len: int = DEFAULT_WINDOW,
    per_class_cap: int | None = DEFAULT_CAP,
    *,
    stride: int | None = None,
    label: int | None = None,
    domain_id: str = "",
    source_file: str = "",
) -> list[SignalSample]:
    """Cut one class's recording into consecutive windows, ordered by offset.

    ``stride`` defaults to ``window_len`` (non-overlapping windows).
    """
    windows, _ = _window_array(raw, window_len, per_class_cap, stride)
    return [SignalSample(w, label, domain_id, source_file) for w in windows]


def _natural_key(path: Path):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", path.name)]


def _read_pu_mat(path: Path, channel: str) -> np.ndarray:
    from scipy.io import loadmat

    try:
        mat = loadmat(path, squeeze_me=True, struct_as_record=False)
    except Exception as exc:  # scipy raises several unrelated types for corrupt files
        raise DataError(f"unreadable file {path}: {exc}") from exc
    keys = [k for k in mat if not k.startswith("__")]
    if not keys:
        raise DataError(f"unreadable file {path}: no variables")
    record = mat[keys[0]]
    try:
        channels = np.atleast_1d(record.Y)
    except AttributeError as exc:
        raise DataError(f"unreadable file {path}: no 'Y' channel block") from exc
    for ch in channels:
        try:
            name = str(ch.Name)
            data = np.asarray(ch.Data, dtype=np.float64).ravel()
        except (AttributeError, TypeError, ValueError):
            log.warning("skipping unparseable channel in %s", path)
            continue
        if name == channel:
            return data
    raise DataError(f"channel {channel!r} not found in {path}")


def load_pu(
    root_dir,
    domain: str,
    *,
    window_len: int = DEFAULT_WINDOW,
    per_class_cap: int | None = DEFAULT_CAP,
    stride: int | None = None,
    channel: str = PU_DEFAULT_CHANNEL,
) -> DomainDataset:
    """Load one Paderborn operating condition as an 8-class dataset.

    Layout: ``<root>/<bearing_code>/<condition>_<bearing_code>_<k>.mat``. The
    repeated measurements of a bearing are concatenated in natural file-name
    order (``_2`` before ``_10``) before windowing.
    """
    if domain not in PU_DOMAINS:
        raise DataError(f"unknown domain {domain!r}; expected one of {sorted(PU_DOMAINS)}")
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    condition = PU_DOMAINS[domain]
    waveforms, labels, files = [], [], []
    for cls, code in enumerate(PU_CODES):
        code_dir = root / code
        if not code_dir.is_dir():
            raise DataError(f"missing bearing {code}")
        paths = sorted(code_dir.glob(f"{condition}_{code}_*.mat"), key=_natural_key)
        if not paths:
            raise DataError(f"missing bearing {code}: no {condition} files in {code_dir}")
        raw = np.concatenate([_read_pu_mat(p, channel) for p in paths])
        win, _ = _window_array(raw, window_len, per_class_cap, stride)
        if per_class_cap is not None and len(win) < per_class_cap:
            log.warning("bearing %s yields %d windows (< cap %d)", code, len(win), per_class_cap)
        waveforms.append(win)
        labels.append(np.full(len(win), cls))
        files.extend([str(code_dir)] * len(win))
    return DomainDataset(np.concatenate(waveforms), np.concatenate(labels), len(PU_CODES), domain, files)


def _read_columnar(path: Path, channel: str | None) -> np.ndarray:
    try:
        with open(path, encoding="utf-8", errors="ignore") as fh:
            first = fh.readline().strip()
    except OSError as exc:
        raise DataError(f"unreadable file {path}: {exc}") from exc
    delim = "," if "," in first else None
    fields = [f.strip() for f in (first.split(delim) if delim else first.split())]
    try:
        [float(f) for f in fields]
        header = None
    except ValueError:
        header = fields
    col = 0
    if channel is not None:
        if header is None or channel not in header:
            raise DataError(f"channel {channel!r} not found in {path}")
        col = header.index(channel)
    try:
        data = np.loadtxt(path, delimiter=delim, skiprows=0 if header is None else 1, usecols=col, ndmin=1)
    except (ValueError, OSError) as exc:
        raise DataError(f"unreadable file {path}: {exc}") from exc
    return data.astype(np.float64)


def load_jnu(
    root_dir,
    domain: str,
    *,
    window_len: int = DEFAULT_WINDOW,
    per_class_cap: int | None = DEFAULT_CAP,
    stride: int | None = None,
    channel: str | None = None,
) -> DomainDataset:
    """Load one JNU rotational-speed condition as a 4-class dataset.

    Looks for ``<root>/<state>_<speed>.csv`` (e.g. ``OR_800.csv``) and falls
    back to the original release names (``ob800_2.csv``). A JNU recording holds
    about 500k points, so reaching 2000 windows of 2048 requires an
    overlapping ``stride``.
    """
    if domain not in JNU_DOMAINS:
        raise DataError(f"unknown domain {domain!r}; expected one of {sorted(JNU_DOMAINS)}")
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    speed = JNU_DOMAINS[domain]
    waveforms, labels, files = [], [], []
    for cls, state in enumerate(JNU_STATES):
        candidates = [root / f"{state}_{speed}.csv", root / _JNU_ALIASES[state].format(speed=speed)]
        path = next((p for p in candidates if p.is_file()), None)
        if path is None:
            raise DataError(f"missing state {state} at {speed} r/min ({candidates[0]})")
        win, _ = _window_array(_read_columnar(path, channel), window_len, per_class_cap, stride)
        if per_class_cap is not None and len(win) < per_class_cap:
            log.warning("state %s yields %d windows (< cap %d)", state, len(win), per_class_cap)
        waveforms.append(win)
        labels.append(np.full(len(win), cls))
        files.extend([str(path)] * len(win))
    return DomainDataset(np.concatenate(waveforms), np.concatenate(labels), len(JNU_STATES), domain, files)


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Impulse-train generator; frequencies are in cycles per sample.

    Class ``c`` repeats a decaying resonance burst every ``1 / fault_freqs[c]``
    samples; the burst train is scaled to unit RMS before noise is added.
    When the per-class tuples are omitted they are spaced geometrically by
    ``freq_ratio`` from ``base_fault_freq`` / ``base_resonance``.
    """

    num_classes: int = 4
    samples_per_class: int = 150
    window_len: int = 256
    fault_freqs: tuple[float, ...] | None = None
    resonances: tuple[float, ...] | None = None
    base_fault_freq: float = 0.012
    base_resonance: float = 0.04
    freq_ratio: float = 1.85  # geometric spacing between consecutive classes
    decay: float = 6.0  # e-folding time of a burst, samples
    jitter: float = 0.03  # relative per-sample frequency jitter
    noise_std: float = 0.25

    def __post_init__(self):
        if self.fault_freqs is not None:
            self.fault_freqs = tuple(float(f) for f in self.fault_freqs)
        if self.resonances is not None:
            self.resonances = tuple(float(f) for f in self.resonances)

    def class_fault_freqs(self) -> np.ndarray:
        if self.fault_freqs is not None:
            return np.asarray(self.fault_freqs, dtype=np.float64)
        return self.base_fault_freq * self.freq_ratio ** np.arange(self.num_classes)

    def class_resonances(self) -> np.ndarray:
        if self.resonances is not None:
            return np.asarray(self.resonances, dtype=np.float64)
        return self.base_resonance * self.freq_ratio ** np.arange(self.num_classes)

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("synthetic benchmark needs at least 2 classes")
        if self.samples_per_class < 1 or self.window_len < 1:
            raise ConfigError("sample counts and window length must be positive")
        if self.samples_per_class < 50:
            raise ConfigError("synthetic benchmark needs at least 50 samples per class")
        for name, arr in (("fault_freqs", self.class_fault_freqs()), ("resonances", self.class_resonances())):
            if len(arr) != self.num_classes:
                raise ConfigError(f"{name} must have num_classes={self.num_classes} entries")
            if np.any(arr <= 0):
                raise ConfigError(f"{name} must be positive")
        if self.decay <= 0 or self.noise_std < 0 or self.jitter < 0:
            raise ConfigError("decay must be positive; noise_std and jitter non-negative")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class DomainShift:
    """Operating-condition change: fault repetition rates scale with ``speed_factor``,
    resonances stay put, additive noise scales with ``noise_factor``."""

    speed_factor: float = 1.0
    noise_factor: float = 1.0

    def validate(self):
        if self.speed_factor <= 0 or self.noise_factor < 0:
            raise ConfigError("speed_factor must be positive and noise_factor non-negative")
        return self


DEFAULT_TARGET_SHIFT = DomainShift(speed_factor=1.35, noise_factor=3.0)


def synth_domain(config: SynthConfig, shift: DomainShift, seed, domain_id: str) -> DomainDataset:
    """Generate one labeled synthetic domain, fully determined by ``seed``."""
    config.validate()
    shift.validate()
    rng = np.random.default_rng(seed)
    L = config.window_len
    n = config.samples_per_class
    t = np.arange(L, dtype=np.float64)
    fault = config.class_fault_freqs() * shift.speed_factor
    reson = config.class_resonances()  # structural resonance does not move with speed
    noise = config.noise_std * shift.noise_factor
    tail = 6.0 * config.decay  # bursts starting this far before the window still ring into it

    waveforms = np.empty((config.num_classes * n, L), dtype=np.float64)
    labels = np.repeat(np.arange(config.num_classes), n)
    for i, c in enumerate(labels):
        period = 1.0 / (fault[c] * (1.0 + config.jitter * rng.standard_normal()))
        carrier = reson[c] * (1.0 + config.jitter * rng.standard_normal())
        first = -tail + rng.uniform(0.0, period)
        onsets = np.arange(first, L, period)
        amps = 1.0 + 0.2 * rng.standard_normal(onsets.size)
        lag = t[None, :] - onsets[:, None]
        bursts = np.where(
            lag >= 0,
            np.exp(-np.clip(lag, 0, None) / config.decay) * np.sin(2 * np.pi * carrier * lag),
            0.0,
        )
        clean = amps @ bursts
        clean /= np.sqrt(np.mean(clean**2)) + 1e-12  # unit RMS: classes differ in spectrum, not energy
        waveforms[i] = clean + noise * rng.standard_normal(L)
    return DomainDataset(waveforms, labels, config.num_classes, domain_id, [f"synth:{domain_id}"] * len(labels))


def synth_benchmark(
    config: SynthConfig | None = None,
    domain_shift: DomainShift | None = None,
    seed: int = 0,
    *,
    source_id: str = "S",
    target_id: str = "T",
) -> tuple[DomainDataset, DomainDataset]:
    """Labeled source domain and shifted target domain.

    The target keeps its labels so adaptation can be scored; adaptation code
    never reads them.
    """
    config = config or SynthConfig()
    domain_shift = DEFAULT_TARGET_SHIFT if domain_shift is None else domain_shift
    src_seed, tgt_seed = np.random.SeedSequence(seed).spawn(2)
    source = synth_domain(config, DomainShift(), src_seed, source_id)
    target = synth_domain(config, domain_shift, tgt_seed, target_id)
    return source, target


def concat_datasets(parts: Iterable[DomainDataset], domain_id: str | None = None) -> DomainDataset:
    parts = list(parts)
    if not parts:
        raise DataError("nothing to concatenate")
    labeled = {p.is_labeled for p in parts}
    if len(labeled) != 1 or len({p.class_count for p in parts}) != 1:
        raise DataError("datasets disagree on labeling or class count")
    return DomainDataset(
        np.concatenate([p.waveforms for p in parts]),
        np.concatenate([p.labels for p in parts]) if parts[0].is_labeled else None,
        parts[0].class_count,
        domain_id or parts[0].domain_id,
        [f for p in parts for f in p.source_files],
    )

"""Synthetic UWB echo frames standing in for a recorded obstacle dataset.

Each frame is a superposition of first-order differential Gaussian pulses
carried at the radar centre frequency: a strong direct-path pulse at a fixed
delay, one pulse per object reflector, white Gaussian receiver noise at a
per-frame jittered level and Gaussian interference confined to a band well
below the pulse band. Frames are normalised to unit peak amplitude. Classes differ in
how many reflectors they have, how strong those reflectors are, where they
sit in the frame and how wide their echoes are.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .signal import FRAME_LENGTH, SAMPLE_RATE_HZ, FrequencyBand, band_mask

CLASS_NAMES = ("Car", "Pedestrian", "Cyclist", "Tramway")
DEFAULT_PULSE_BAND = FrequencyBand(3.0e9, 3.2e9)


class DatasetError(ValueError):
    pass


class DatasetFormatError(DatasetError):
    """Malformed or incompatible dataset file; ``offset`` is the failing byte position."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


@dataclass(frozen=True)
class ReflectorSpec:
    """Ranges a class draws its reflectors from. Delays and widths are in samples."""

    count: tuple = (1, 1)
    amplitude: tuple = (0.5, 1.0)
    delay: tuple = (200.0, 400.0)
    width: tuple = (6.0, 8.0)

    def validate(self, d: int):
        for name in ("count", "amplitude", "delay", "width"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DatasetError(f"empty {name} range {lo}..{hi}")
        if self.count[0] < 1:
            raise DatasetError("every class needs at least one reflector")
        if self.width[0] <= 0:
            raise DatasetError("pulse width must be positive")
        if self.delay[0] < 0 or self.delay[1] >= d:
            raise DatasetError(f"delay range {self.delay} falls outside the frame [0, {d})")

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("count", "amplitude", "delay", "width")}

    @classmethod
    def from_dict(cls, data: dict) -> "ReflectorSpec":
        return cls(**{k: tuple(v) for k, v in data.items()})


# Ordered to match CLASS_NAMES; echo amplitude Tramway > Car > Cyclist > Pedestrian.
# Amplitudes are relative to the direct-path (antenna coupling) pulse.
DEFAULT_REFLECTORS = (
    ReflectorSpec(count=(3, 3), amplitude=(0.039, 0.054), delay=(280.0, 360.0), width=(19.0, 21.0)),
    ReflectorSpec(count=(1, 1), amplitude=(0.0105, 0.015), delay=(180.0, 230.0), width=(28.0, 32.0)),
    ReflectorSpec(count=(1, 1), amplitude=(0.03, 0.039), delay=(220.0, 270.0), width=(23.0, 26.0)),
    ReflectorSpec(count=(5, 7), amplitude=(0.06, 0.09), delay=(360.0, 520.0), width=(16.0, 18.0)),
)

DEFAULT_INTERFERENCE_BAND = FrequencyBand(1.2e9, 1.46e9)

# Transmitter-to-receiver coupling seen at the start of every frame.
DEFAULT_DIRECT_PATH = ReflectorSpec(count=(1, 1), amplitude=(0.95, 1.05), delay=(58.0, 62.0), width=(18.0, 19.0))


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 4
    samples_per_class: object = 274  # int, or one count per class
    pulse_band: FrequencyBand = DEFAULT_PULSE_BAND
    reflectors: tuple = DEFAULT_REFLECTORS
    direct_path: ReflectorSpec | None = DEFAULT_DIRECT_PATH
    noise_std: float = 0.02
    noise_jitter: tuple = (0.8, 1.25)  # per-frame multiplier range on noise_std
    # narrowband Gaussian interference below the pulse band
    interference_std: float = 0.03
    interference_band: FrequencyBand | None = DEFAULT_INTERFERENCE_BAND
    seed: int = 0
    length: int = FRAME_LENGTH
    sample_rate_hz: float = SAMPLE_RATE_HZ
    class_names: tuple = CLASS_NAMES

    def counts(self):
        if np.ndim(self.samples_per_class) == 0:
            return [int(self.samples_per_class)] * self.num_classes
        return [int(c) for c in self.samples_per_class]

    def validate(self) -> "DatasetConfig":
        if self.num_classes < 1:
            raise DatasetError("num_classes must be positive")
        counts = self.counts()
        if len(counts) != self.num_classes or min(counts) < 1:
            raise DatasetError("need at least one sample for each class")
        if len(self.reflectors) != self.num_classes:
            raise DatasetError(
                f"{len(self.reflectors)} reflector specs given for {self.num_classes} classes"
            )
        if len(self.class_names) < self.num_classes:
            raise DatasetError("not enough class names")
        self.pulse_band.validate(self.sample_rate_hz)
        for spec in self.reflectors:
            spec.validate(self.length)
        if self.direct_path is not None:
            self.direct_path.validate(self.length)
        if self.noise_std < 0:
            raise DatasetError("noise_std must be non-negative")
        if not 0 <= self.noise_jitter[0] <= self.noise_jitter[1]:
            raise DatasetError(f"invalid noise jitter range {self.noise_jitter}")
        if self.interference_std < 0:
            raise DatasetError("interference_std must be non-negative")
        if self.interference_band is not None:
            self.interference_band.validate(self.sample_rate_hz)
            if not band_mask(self.length, self.interference_band, self.sample_rate_hz).any():
                raise DatasetError("interference band contains no DFT bin")
        return self

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "samples_per_class": self.counts(),
            "pulse_band": self.pulse_band.to_dict(),
            "reflectors": [r.to_dict() for r in self.reflectors],
            "direct_path": None if self.direct_path is None else self.direct_path.to_dict(),
            "noise_std": self.noise_std,
            "noise_jitter": list(self.noise_jitter),
            "interference_std": self.interference_std,
            "interference_band": None if self.interference_band is None else self.interference_band.to_dict(),
            "seed": self.seed,
            "length": self.length,
            "sample_rate_hz": self.sample_rate_hz,
            "class_names": list(self.class_names[: self.num_classes]),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        return cls(
            num_classes=int(data["num_classes"]),
            samples_per_class=tuple(data["samples_per_class"]),
            pulse_band=FrequencyBand.from_dict(data["pulse_band"]),
            reflectors=tuple(ReflectorSpec.from_dict(r) for r in data["reflectors"]),
            direct_path=None if data.get("direct_path") is None else ReflectorSpec.from_dict(data["direct_path"]),
            noise_std=float(data["noise_std"]),
            noise_jitter=tuple(data.get("noise_jitter", (1.0, 1.0))),
            interference_std=float(data.get("interference_std", 0.0)),
            interference_band=None if data.get("interference_band") is None
            else FrequencyBand.from_dict(data["interference_band"]),
            seed=int(data["seed"]),
            length=int(data["length"]),
            sample_rate_hz=float(data["sample_rate_hz"]),
            class_names=tuple(data["class_names"]),
        )


class LabeledSignal(NamedTuple):
    signal: np.ndarray
    label: int
    class_name: str


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    class_names: tuple = CLASS_NAMES
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DatasetError("X must be (n, d) with one label per row")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.class_names)):
            raise DatasetError("labels fall outside the class list")

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> LabeledSignal:
        return LabeledSignal(self.X[i], int(self.y[i]), self.class_names[self.y[i]])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.class_names, self.config)


def gen_pulse(center_sample: float, width_samples: float, amplitude: float, carrier_hz: float,
              length: int = FRAME_LENGTH, sample_rate_hz: float = SAMPLE_RATE_HZ, modulate: bool = True):
    """First-order differential Gaussian pulse, optionally carried at ``carrier_hz``.

    ``g(t) = exp(-(t - c)^2 / (2 w^2))`` and the returned frame is
    ``amplitude * g'(t) * w * sqrt(e) * cos(2 pi f_c (t - c) / f_s)``; the
    ``w * sqrt(e)`` factor scales the unmodulated derivative to unit peak.
    """
    if width_samples <= 0:
        raise ValueError("width_samples must be positive")
    if not 0 <= center_sample < length:
        raise ValueError(f"center_sample must be in [0, {length})")
    t = np.arange(length, dtype=np.float64) - center_sample
    g = np.exp(-0.5 * (t / width_samples) ** 2)
    dg = -(t / width_samples**2) * g * (width_samples * np.sqrt(np.e))
    if modulate:
        dg = dg * np.cos(2.0 * np.pi * carrier_hz * t / sample_rate_hz)
    return amplitude * dg


def _add_reflectors(frame, spec: ReflectorSpec, config: DatasetConfig, rng, signed: bool):
    carrier = config.pulse_band.center
    n_reflectors = int(rng.integers(spec.count[0], spec.count[1] + 1))
    for _ in range(n_reflectors):
        sign = rng.choice((-1.0, 1.0)) if signed else 1.0
        frame += gen_pulse(
            rng.uniform(*spec.delay),
            rng.uniform(*spec.width),
            rng.uniform(*spec.amplitude) * sign,
            carrier,
            config.length,
            config.sample_rate_hz,
        )


def _interference(config: DatasetConfig, rng):
    """White Gaussian noise restricted to ``interference_band`` with per-sample std ``interference_std``."""
    mask = band_mask(config.length, config.interference_band, config.sample_rate_hz)
    white = rng.normal(0.0, 1.0, size=config.length)
    narrow = np.fft.ifft(np.fft.fft(white) * mask).real
    return narrow * (config.interference_std / np.sqrt(mask.mean()))


def _sample_frame(config: DatasetConfig, label: int, rng):
    echo = np.zeros(config.length)
    _add_reflectors(echo, config.reflectors[label], config, rng, signed=True)
    echo_peak = float(np.max(np.abs(echo)))
    frame = echo
    if config.direct_path is not None:
        frame = echo.copy()
        _add_reflectors(frame, config.direct_path, config, rng, signed=False)
    sigma = config.noise_std * rng.uniform(*config.noise_jitter)
    frame = frame + rng.normal(0.0, sigma, size=config.length)
    if config.interference_band is not None and config.interference_std > 0:
        frame = frame + _interference(config, rng)
    peak = float(np.max(np.abs(frame)))
    if peak == 0.0:
        raise DatasetError("generated an all-zero frame")
    return frame / peak, echo_peak


def synthesize(config: DatasetConfig = DatasetConfig(), return_raw_peaks: bool = False):
    """Generate the labelled dataset described by ``config``.

    Sample ``i`` of class ``c`` uses its own random stream seeded from
    ``(seed, c, i)``, so the result does not depend on generation order.
    """
    config.validate()
    frames, labels, peaks = [], [], []
    for label, count in enumerate(config.counts()):
        for i in range(count):
            rng = np.random.default_rng([config.seed, label, i])
            frame, raw_peak = _sample_frame(config, label, rng)
            frames.append(frame)
            labels.append(label)
            peaks.append(raw_peak)
    ds = Dataset(
        np.vstack(frames), np.array(labels), tuple(config.class_names[: config.num_classes]), config.to_dict()
    )
    if return_raw_peaks:
        return ds, np.array(peaks)
    return ds


def split(dataset: Dataset, ratio=0.7, seed: int = 0):
    """Stratified train/test split.

    ``ratio`` is either the training fraction in ``(0, 1)`` or an integer
    number of training samples. The training total is ``floor(ratio * n)`` and
    is shared between classes by largest remainder, so per-class proportions
    match as closely as integers allow. Both parts come back in shuffled
    order.
    """
    n = len(dataset)
    if isinstance(ratio, (int, np.integer)) and not isinstance(ratio, bool):
        if not 0 < ratio < n:
            raise DatasetError(f"train size must be in (0, {n}), got {ratio}")
        n_train = int(ratio)
    else:
        if not 0.0 < ratio < 1.0:
            raise DatasetError(f"ratio must be in (0, 1), got {ratio}")
        n_train = int(np.floor(ratio * n + 1e-9))
    classes, counts = np.unique(dataset.y, return_counts=True)
    if np.any(counts < 2):
        bad = classes[counts < 2].tolist()
        raise DatasetError(f"classes {bad} have fewer than 2 samples; cannot stratify")
    exact = counts * (n_train / n)
    alloc = np.floor(exact).astype(int)
    remainder = n_train - alloc.sum()
    order = np.lexsort((classes, -(exact - alloc)))  # largest fractional part first
    alloc[order[:remainder]] += 1
    alloc = np.clip(alloc, 1, counts - 1)

    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls, k in zip(classes, alloc):
        members = np.flatnonzero(dataset.y == cls)
        members = members[rng.permutation(members.size)]
        train_idx.append(members[:k])
        test_idx.append(members[k:])
    # shuffled so that any prefix is a class mix
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))
    return dataset.subset(train_idx), dataset.subset(test_idx)


# ---------------------------------------------------------------------------
# file format
#
#   magic   b"UWBD"          4 bytes
#   version                  uint16 LE
#   d, C, count              3 x uint32 LE
#   samples                  count * d float64 LE, row major
#   labels                   count int32 LE
#
# plus ``<path>.json`` holding class names and the generating config.

DATA_MAGIC = b"UWBD"
DATA_VERSION = 1
_HEADER = struct.Struct("<4sHIII")
MAX_CLASSES = 1024


def save(dataset: Dataset, path):
    n, d = dataset.X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATA_MAGIC, DATA_VERSION, d, dataset.num_classes, n))
        fh.write(dataset.X.astype("<f8").tobytes())
        fh.write(dataset.y.astype("<i4").tobytes())
    with open(f"{path}.json", "w") as fh:
        json.dump({"class_names": list(dataset.class_names), "config": dataset.config}, fh, indent=2, sort_keys=True)


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)

    def take(n, what):
        offset = buf.tell()
        chunk = buf.read(n)
        if len(chunk) != n:
            raise DatasetFormatError(f"truncated dataset file while reading {what}", offset)
        return chunk

    magic, version, d, n_classes, count = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != DATA_MAGIC:
        raise DatasetFormatError("not a dataset file (bad magic)", 0)
    if version != DATA_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}", 4)
    if d < 1:
        raise DatasetFormatError("frame length must be positive", 6)
    if not 1 <= n_classes <= MAX_CLASSES:
        raise DatasetFormatError(f"invalid class count {n_classes}", 10)
    X = np.frombuffer(take(8 * d * count, "samples"), dtype="<f8").astype(np.float64).reshape(count, d)
    label_offset = buf.tell()
    y = np.frombuffer(take(4 * count, "labels"), dtype="<i4").astype(np.int64)
    if buf.read(1):
        raise DatasetFormatError("trailing bytes after labels", buf.tell() - 1)
    if count and (y.min() < 0 or y.max() >= n_classes):
        raise DatasetFormatError(f"label outside [0, {n_classes})", label_offset)

    names = tuple(CLASS_NAMES[:n_classes]) if n_classes <= len(CLASS_NAMES) else tuple(
        f"class{i}" for i in range(n_classes)
    )
    config = {}
    try:
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
        config = meta.get("config", {})
        if "class_names" in meta:
            names = tuple(meta["class_names"])
    except FileNotFoundError:
        pass
    if len(names) != n_classes:
        raise DatasetFormatError(
            f"header declares {n_classes} classes but sidecar names {len(names)}", 10
        )
    return Dataset(X, y, names, config)

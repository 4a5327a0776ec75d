"""Time/frequency primitives for radar frames and adversarial patches.

All routines operate on float64 numpy arrays. Functions that take a signal
also accept a 2-D batch ``(n_signals, d)`` and act along the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE_HZ = 7.69e9
FRAME_LENGTH = 660

# residue above this means the caller handed us a non-symmetric spectrum
IMAG_RESIDUE_LIMIT = 1e-6


class DegenerateInputError(ValueError):
    """Raised when an input makes an operation ill-defined."""


@dataclass(frozen=True)
class FrequencyBand:
    """Closed frequency interval ``[f_min, f_max]`` in Hz."""

    f_min: float
    f_max: float

    def __post_init__(self):
        if not (0.0 <= self.f_min < self.f_max):
            raise ValueError(
                f"invalid band: need 0 <= f_min < f_max, got [{self.f_min}, {self.f_max}]"
            )

    def validate(self, sample_rate_hz: float = SAMPLE_RATE_HZ) -> "FrequencyBand":
        if self.f_max > sample_rate_hz / 2 * (1 + 1e-12):
            raise ValueError(
                f"band upper edge {self.f_max:.6g} Hz exceeds Nyquist {sample_rate_hz / 2:.6g} Hz"
            )
        return self

    @property
    def center(self) -> float:
        return 0.5 * (self.f_min + self.f_max)

    def to_dict(self) -> dict:
        return {"f_min": float(self.f_min), "f_max": float(self.f_max)}

    @classmethod
    def from_dict(cls, data: dict) -> "FrequencyBand":
        return cls(float(data["f_min"]), float(data["f_max"]))


def dft(signal):
    """Unnormalized forward DFT, ``F(k) = sum_n f(n) exp(-2j*pi*n*k/N)``."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[-1] < 1:
        raise ValueError("signal must have at least one sample")
    return np.fft.fft(signal, axis=-1)


def idft(spectrum):
    """Inverse DFT with the ``1/N`` factor; returns the real part.

    Raises
    ------
    DegenerateInputError
        If the imaginary residue exceeds ``IMAG_RESIDUE_LIMIT``, i.e. the
        spectrum was not conjugate-symmetric.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if spectrum.shape[-1] < 1:
        raise ValueError("spectrum must have at least one bin")
    out = np.fft.ifft(spectrum, axis=-1)
    residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
    if residue > IMAG_RESIDUE_LIMIT:
        raise DegenerateInputError(
            f"inverse transform has imaginary residue {residue:.3g}; spectrum is not conjugate-symmetric"
        )
    return out.real.copy()


def bin_frequencies(n: int, sample_rate_hz: float = SAMPLE_RATE_HZ):
    """Physical frequency of every DFT bin, folding bins above ``n/2`` onto their mirror."""
    k = np.arange(n)
    return np.minimum(k, n - k) * (sample_rate_hz / n)


def band_mask(n: int, band: FrequencyBand, sample_rate_hz: float = SAMPLE_RATE_HZ):
    """Boolean mask of DFT bins whose physical frequency lies inside ``band`` (edges inclusive)."""
    f = bin_frequencies(n, sample_rate_hz)
    return (f >= band.f_min) & (f <= band.f_max)


def passband_filter(signal, band: FrequencyBand, sample_rate_hz: float = SAMPLE_RATE_HZ):
    """Zero every DFT bin outside ``band`` and transform back.

    Bins are selected by their folded frequency, so each conjugate pair is
    kept or dropped together and the output stays real.
    """
    signal = np.asarray(signal, dtype=np.float64)
    spectrum = dft(signal)
    spectrum = spectrum * band_mask(signal.shape[-1], band, sample_rate_hz)
    return idft(spectrum)


def estimate_band(signals, power_fraction: float = 0.95, sample_rate_hz: float = SAMPLE_RATE_HZ):
    """Frequency band holding ``power_fraction`` of the average spectral power.

    The one-sided average power spectrum is computed over ``signals``; a bin
    window is then grown symmetrically around the PSD peak (lowest frequency
    wins ties) until it holds the requested fraction of total power. Window
    growth is clamped at DC and Nyquist. The returned edges sit half a bin
    outside the first and last selected bins, so :func:`passband_filter` keeps
    exactly the selected bins.
    """
    if not 0.0 < power_fraction < 1.0:
        raise ValueError(f"power_fraction must be in (0, 1), got {power_fraction}")
    x = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    if x.shape[0] == 0 or x.shape[-1] == 0:
        raise ValueError("need at least one non-empty signal")
    n = x.shape[-1]
    psd = np.mean(np.abs(np.fft.fft(x, axis=-1)) ** 2, axis=0)
    half = n // 2
    one_sided = psd[: half + 1].copy()
    upper = half if n % 2 else half - 1  # last bin with a distinct mirror
    one_sided[1 : upper + 1] += psd[n - 1 : n - upper - 1 : -1]
    total = one_sided.sum()
    if not total > 0.0:
        raise DegenerateInputError("all signals are zero; no spectral power to locate a band")

    cumsum = np.concatenate([[0.0], np.cumsum(one_sided)])
    peak = int(np.argmax(one_sided))
    target = power_fraction * total
    for width in range(half + 1):
        lo = max(peak - width, 0)
        hi = min(peak + width, half)
        if cumsum[hi + 1] - cumsum[lo] >= target * (1 - 1e-12):
            break
    df = sample_rate_hz / n
    f_min = max((lo - 0.5) * df, 0.0)
    f_max = min((hi + 0.5) * df, sample_rate_hz / 2)
    return FrequencyBand(f_min, f_max)


def circular_shift(delta, k: int):
    """Rotate ``delta`` right by ``k`` samples: ``out[j] = delta[(j - k) mod d]``."""
    delta = np.asarray(delta, dtype=np.float64)
    d = delta.shape[-1]
    if not 0 <= k <= d:
        raise ValueError(f"shift must lie in [0, {d}], got {k}")
    return np.roll(delta, k, axis=-1)


def unshift(delta, k: int):
    """Inverse of :func:`circular_shift`."""
    delta = np.asarray(delta, dtype=np.float64)
    return np.roll(delta, -k, axis=-1)


def mask_patch(delta, k: int, d: int):
    """Place a length-``s`` patch at offset ``k`` inside a zero frame of length ``d``.

    A patch running past the frame end is truncated, never wrapped.
    """
    delta = np.asarray(delta, dtype=np.float64)
    s = delta.shape[-1]
    if not 1 <= s <= d:
        raise ValueError(f"patch length must be in [1, {d}], got {s}")
    if not 0 <= k < d:
        raise ValueError(f"offset must be in [0, {d}), got {k}")
    out = np.zeros(delta.shape[:-1] + (d,))
    stop = min(k + s, d)
    out[..., k:stop] = delta[..., : stop - k]
    return out


def tile_patch(delta, d: int):
    """Repeat ``delta`` end to end and cut at ``d`` samples."""
    delta = np.asarray(delta, dtype=np.float64)
    reps = -(-d // delta.shape[-1])
    return np.tile(delta, reps)[..., :d]


def spectral_magnitude_stats(delta):
    """Mean and maximum of ``|dft(delta)|`` over all bins."""
    mag = np.abs(dft(delta))
    return float(mag.mean()), float(mag.max())

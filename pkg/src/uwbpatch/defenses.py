"""Defender side: pass-band pre-processing, adversarial training, spectrum sensing."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import nn
from .attacks import Patch, pgd
from .signal import (FRAME_LENGTH, FrequencyBand, band_mask, mask_patch, passband_filter,
                     spectral_magnitude_stats)

DETECTABILITY_HEADER = ("size", "avg_magnitude", "max_magnitude")


def defended_forward(params: nn.ModelParams, band: FrequencyBand, x, **filter_kwargs):
    """Log-probabilities of the model applied to the band-limited input."""
    return nn.forward(params, passband_filter(x, band, **filter_kwargs))


def defended_predict(params: nn.ModelParams, band: FrequencyBand, X, chunk: int = 512, **filter_kwargs):
    X = np.asarray(X, dtype=np.float64)
    return nn.predict_batched(params, passband_filter(X, band, **filter_kwargs), chunk=chunk)


class FilteredVictim:
    """A model behind the pass-band filter, usable wherever a victim is expected."""

    def __init__(self, params: nn.ModelParams, band: FrequencyBand, sample_rate_hz: float | None = None):
        self.params = params
        self.band = band
        self._kw = {} if sample_rate_hz is None else {"sample_rate_hz": sample_rate_hz}

    def predict(self, X):
        return defended_predict(self.params, self.band, X, **self._kw)


# ---------------------------------------------------------------------------
# adversarial training


@dataclass
class ATConfig:
    epsilon: float = 0.002
    step_size: float = 0.0005
    iterations: int = 20
    epochs: int = 100
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 4

    def __post_init__(self):
        if self.epsilon < 0 or self.step_size < 0 or self.iterations < 0:
            raise ValueError("epsilon, step_size and iterations must be non-negative")
        if self.step_size * self.iterations < self.epsilon * (1 - 1e-12):
            raise ValueError(
                f"step_size * iterations = {self.step_size * self.iterations:g} cannot reach epsilon = {self.epsilon:g}"
            )

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                              epochs=self.epochs, seed=self.seed)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _at_batch_grad(config: ATConfig):
    def step(params, xb, yb, _rng):
        if config.epsilon > 0 and config.iterations > 0:
            x_adv = pgd(params, xb, yb, config.epsilon, config.step_size, config.iterations)
        else:
            x_adv = xb
        loss_c, g_c = nn.loss_and_param_gradients(params, xb, yb)
        loss_a, g_a = nn.loss_and_param_gradients(params, x_adv, yb)
        grads = {k: (0.5 * (g_c[k][0] + g_a[k][0]), 0.5 * (g_c[k][1] + g_a[k][1])) for k in g_c}
        return 0.5 * (loss_c + loss_a), grads

    return step


def adversarial_train(X, y, config: ATConfig = ATConfig(), params: nn.ModelParams | None = None,
                      arch: nn.ArchSpec | None = None, X_test=None, y_test=None, verbose: bool = False):
    """Adam training on an even mix of clean and PGD-perturbed batches.

    Every minibatch is paired with its PGD(``epsilon``, ``step_size``,
    ``iterations``) version against the current weights; the gradient is the
    average of the clean and adversarial mean losses. With ``epsilon = 0`` the
    pair is identical and training follows :func:`uwbpatch.nn.train` exactly.
    """
    return nn.train(X, y, config.train_config(), arch=arch, params=params,
                    X_test=X_test, y_test=y_test, batch_grad=_at_batch_grad(config), verbose=verbose)


# ---------------------------------------------------------------------------
# spectrum sensing


def padded_patch(patch, d: int = FRAME_LENGTH):
    """The patch as broadcast in one frame: zero-padded to ``d`` samples."""
    delta = patch.delta if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    return mask_patch(delta, 0, d)


def detectability_report(patches, d: int = FRAME_LENGTH):
    """Rows ``(size, avg_magnitude, max_magnitude)``, one per patch, in input order."""
    patches = list(patches)
    eps = {round(float(p.epsilon), 12) for p in patches if isinstance(p, Patch)}
    if len(eps) > 1:
        raise ValueError(f"patches must share one epsilon, got {sorted(eps)}")
    rows = []
    for p in patches:
        delta = p.delta if isinstance(p, Patch) else np.asarray(p, dtype=np.float64)
        avg, peak = spectral_magnitude_stats(padded_patch(delta, d))
        rows.append((int(delta.size), avg, peak))
    return rows


def detectability_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DETECTABILITY_HEADER)
    for size, avg, peak in rows:
        writer.writerow([size, repr(float(avg)), repr(float(peak))])
    return buf.getvalue()


def sensed(patch, threshold: float, band: FrequencyBand | None = None, d: int = FRAME_LENGTH,
           sample_rate_hz: float | None = None) -> bool:
    """Whether a spectrum-sensing monitor flags the patch.

    The monitor looks at ``|dft|`` of the broadcast frame, restricted to
    ``band`` when given, and fires when its maximum exceeds ``threshold``.
    """
    frame = padded_patch(patch, d)
    mag = np.abs(np.fft.fft(frame))
    if band is not None:
        kw = {} if sample_rate_hz is None else {"sample_rate_hz": sample_rate_hz}
        mag = mag[band_mask(d, band, **kw)]
        if mag.size == 0:
            return False
    return bool(mag.max() > threshold)

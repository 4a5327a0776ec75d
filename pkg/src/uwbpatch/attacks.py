"""Adversarial noise generation and placement.

Input-specific attacks (:func:`fgsm`, :func:`pgd`) craft one perturbation per
signal. Universal attacks craft a single patch ``delta`` that is added to any
frame at an unknown incidence delay:

* :func:`uap` trains the patch at a fixed, synchronised incidence (k = 0);
* :func:`srp` draws a random circular shift per sample, so the patch works
  whatever the delay;
* :func:`sfr` additionally keeps the patch inside a frequency band;
* :func:`arna` also limits the patch to ``s`` samples, placed with a mask
  instead of a circular shift.

All of them share one sequential update loop (:func:`generate_patch`). Every
perturbation is kept inside the l-infinity ball of radius ``epsilon`` and
every adversarial frame inside the signal domain ``[-1, 1]``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .signal import FrequencyBand, mask_patch, passband_filter, tile_patch, unshift

DOMAIN = (-1.0, 1.0)
ONE_SHOT = "one_shot"
CONTINUOUS = "continuous"
SHIFT = "shift"
MODES = (ONE_SHOT, CONTINUOUS, SHIFT)


def clip_domain(x):
    return np.clip(x, DOMAIN[0], DOMAIN[1])


def project_linf(delta, epsilon):
    return np.clip(delta, -epsilon, epsilon)


@dataclass
class Patch:
    """A universal perturbation and the constraints it was generated under."""

    delta: np.ndarray
    epsilon: float
    kind: str = "uap"
    band: FrequencyBand | None = None
    size_budget: int | None = None
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64)
        if self.delta.ndim != 1 or self.delta.size < 1:
            raise ValueError("patch must be a non-empty 1-D vector")
        if self.size_budget is not None and self.delta.size > self.size_budget:
            raise ValueError(f"patch length {self.delta.size} exceeds size budget {self.size_budget}")

    @property
    def size(self) -> int:
        return self.delta.size

    def linf(self) -> float:
        return float(np.max(np.abs(self.delta)))


@dataclass
class AttackConfig:
    """Hyper-parameters shared by the universal attacks.

    ``step_size`` defaults to ``epsilon / 10``. ``target_fooling_rate``
    enables early stopping once the patch fools that fraction of the
    training batch at fresh random incidences (off by default).
    """

    epsilon: float
    step_size: float | None = None
    inner_iterations: int = 20
    outer_iterations: int = 5
    seed: int = 0
    target_fooling_rate: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.step_size is None:
            self.step_size = self.epsilon / 10.0
        if self.step_size < 0 or self.inner_iterations < 0 or self.outer_iterations < 0:
            raise ValueError("step size and iteration counts must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# input-specific attacks


def pgd(params: nn.ModelParams, x, y, epsilon: float, step_size: float, iterations: int, support=None):
    """Projected signed-gradient ascent on the loss of ``y``.

    Each of the ``iterations`` steps moves by ``step_size * sign(grad)``
    (restricted to ``support`` when given), projects the perturbation back
    onto the ``epsilon`` ball around ``x`` and clips to the signal domain.
    Works on one signal or a batch; starts from ``x`` itself.
    """
    x = np.asarray(x, dtype=np.float64)
    x_adv = x.copy()
    for _ in range(iterations):
        _, grad = nn.loss_and_input_gradient(params, x_adv, y)
        step = step_size * np.sign(grad)
        if support is not None:
            step = step * support
        x_adv = clip_domain(x + project_linf(x_adv + step - x, epsilon))
    return x_adv


def fgsm(params: nn.ModelParams, x, y, epsilon: float):
    """Single step of size ``epsilon`` along the gradient sign."""
    x = np.asarray(x, dtype=np.float64)
    _, grad = nn.loss_and_input_gradient(params, x, y)
    return clip_domain(x + epsilon * np.sign(grad))


def random_patch(epsilon: float, size: int, seed: int = 0) -> Patch:
    """Zero-mean Gaussian white noise rescaled to peak magnitude ``epsilon``."""
    if size < 1:
        raise ValueError("patch size must be at least 1")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(size)
    peak = np.max(np.abs(noise))
    delta = noise * (epsilon / peak) if peak > 0 else noise
    return Patch(delta, epsilon, kind="random", config={"seed": seed})


# ---------------------------------------------------------------------------
# universal patches


def _place(delta, k, d, placement):
    if placement == SHIFT:
        return np.roll(delta, k)
    return mask_patch(delta, k, d)


def generate_patch(params: nn.ModelParams, X, y, config: AttackConfig, *, placement: str = SHIFT,
                   size: int | None = None, band: FrequencyBand | None = None,
                   fixed_incidence: int | None = None, kind: str = "patch",
                   sample_rate_hz: float | None = None, callback=None) -> Patch:
    """Sequential universal-patch loop shared by UAP, SRP, SFR and a-RNA.

    For ``outer_iterations`` passes over ``X``: draw an incidence ``k`` (or
    use ``fixed_incidence``), place the current patch on the sample, and if
    the sample is still classified as on the clean input, run the inner
    signed-gradient attack (gradient restricted to the patch support). When
    that attack changes the prediction, its perturbation is mapped back to
    patch coordinates and added to the patch, which is then band-limited
    (if ``band`` is set) and clipped to the ``epsilon`` ball.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    s = d if size is None else int(size)
    if not 1 <= s <= d:
        raise ValueError(f"patch size must be in [1, {d}], got {s}")
    if placement == SHIFT and s != d:
        raise ValueError("circularly shifted patches must span the whole frame")
    if fixed_incidence is not None and not 0 <= fixed_incidence < d:
        raise ValueError(f"incidence must be in [0, {d})")
    filter_kwargs = {} if sample_rate_hz is None else {"sample_rate_hz": sample_rate_hz}
    eps, alpha, m = config.epsilon, config.step_size, config.inner_iterations

    rng = np.random.default_rng(config.seed)
    check_rng = np.random.default_rng([config.seed, 1])
    clean_pred = nn.predict_batched(params, X)
    delta = np.zeros(s)
    history = []
    for _ in range(config.outer_iterations):
        updates = 0
        for i in range(n):
            k = fixed_incidence if fixed_incidence is not None else int(rng.integers(0, d))
            x_in = clip_domain(X[i] + _place(delta, k, d, placement))
            if nn.predict(params, x_in) != clean_pred[i]:
                continue
            support = None if placement == SHIFT else mask_patch(np.ones(s), k, d)
            x_adv = pgd(params, x_in, y[i], eps, alpha, m, support)
            if nn.predict(params, x_adv) == clean_pred[i]:
                continue
            increment = x_adv - x_in
            if placement == SHIFT:
                step = unshift(increment, k)
            else:
                step = np.zeros(s)
                span = min(s, d - k)
                step[:span] = increment[k : k + span]
            delta = delta + step
            if band is not None:
                delta = passband_filter(delta, band, **filter_kwargs)
            delta = project_linf(delta, eps)
            updates += 1
        entry = {"updates": updates}
        if config.target_fooling_rate is not None:
            ks = check_rng.integers(0, d, size=n)
            noisy = clip_domain(X + place_batch(delta, ks, d, ONE_SHOT if placement != SHIFT else SHIFT))
            entry["fooling_rate"] = float(np.mean(nn.predict_batched(params, noisy) != clean_pred))
        history.append(entry)
        if callback is not None:
            callback(len(history), delta.copy())
        if config.target_fooling_rate is not None and entry["fooling_rate"] >= config.target_fooling_rate:
            break
    return Patch(
        delta, eps, kind=kind, band=band,
        size_budget=None if placement == SHIFT else s,
        config={**config.to_dict(), "placement": placement, "size": s,
                "fixed_incidence": fixed_incidence, "n_train": n},
        history=history,
    )


def uap(params, X, y, config: AttackConfig) -> Patch:
    """Universal patch trained with the noise synchronised to the frame (k = 0)."""
    return generate_patch(params, X, y, config, placement=SHIFT, fixed_incidence=0, kind="uap")


def srp(params, X, y, config: AttackConfig) -> Patch:
    """Shift-resistant patch: a random circular incidence per sample."""
    return generate_patch(params, X, y, config, placement=SHIFT, kind="srp")


def sfr(params, X, y, config: AttackConfig, band: FrequencyBand, **kwargs) -> Patch:
    """Shift- and filtering-resistant patch, band-limited after every update."""
    return generate_patch(params, X, y, config, placement=SHIFT, band=band, kind="sfr", **kwargs)


def arna(params, X, y, config: AttackConfig, size: int, band: FrequencyBand, **kwargs) -> Patch:
    """Size-limited, band-limited patch placed with a temporal mask."""
    return generate_patch(params, X, y, config, placement=ONE_SHOT, size=size, band=band, kind="arna", **kwargs)


# ---------------------------------------------------------------------------
# placement and evaluation


def place_batch(delta, ks, d: int, mode: str):
    """Noise frames for every incidence in ``ks``; returns ``(len(ks), d)``.

    ``one_shot`` puts a single copy at ``k`` (tail truncated), ``continuous``
    tiles the patch over the frame and rotates it by ``k``, ``shift`` rotates
    a full-length patch by ``k``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    ks = np.asarray(ks, dtype=np.int64)
    s = delta.size
    j = np.arange(d)[None, :]
    if mode == ONE_SHOT:
        idx = j - ks[:, None]
        valid = (idx >= 0) & (idx < s)
        return np.where(valid, delta[np.clip(idx, 0, s - 1)], 0.0)
    if mode == CONTINUOUS:
        base = tile_patch(delta, d)
    elif mode == SHIFT:
        if s != d:
            raise ValueError("shift placement needs a full-length patch")
        base = delta
    else:
        raise ValueError(f"unknown placement mode {mode!r}; expected one of {MODES}")
    return base[(j - ks[:, None]) % d]


def apply_patch(x, patch, mode: str = ONE_SHOT, k: int = 0):
    """Add ``patch`` to frame(s) ``x`` at incidence ``k`` and clip to the domain."""
    delta = patch.delta if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    if not 0 <= k < d:
        raise ValueError(f"incidence must be in [0, {d})")
    if delta.size > d:
        raise ValueError("patch is longer than the frame")
    noise = place_batch(delta, [k], d, mode)[0]
    return clip_domain(x + noise)


def _predictor(victim):
    if isinstance(victim, nn.ModelParams):
        return lambda X: nn.predict_batched(victim, X)
    if hasattr(victim, "predict"):
        return victim.predict
    return victim


@dataclass
class ShiftEvaluation:
    success_rate: float
    per_shift: np.ndarray  # success rate of trial column j across samples
    n_samples: int
    n_shifts: int


def evaluate_patch(victim, X, y, patch, mode: str = ONE_SHOT, n_shifts: int = 50, seed: int = 0,
                   chunk: int = 2048) -> ShiftEvaluation:
    """Success rate of a universal patch at random incidences.

    Every sample is tried at ``n_shifts`` independent incidences drawn
    uniformly from ``[0, d)``; the success rate is the fraction of the
    ``n * n_shifts`` trials whose prediction differs from the true label.
    ``victim`` is :class:`~uwbpatch.nn.ModelParams`, any object with
    ``predict`` (for example a defended pipeline) or a plain callable.
    """
    delta = patch.delta if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    predict = _predictor(victim)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    ks = rng.integers(0, d, size=(n, n_shifts))
    wrong = np.empty((n, n_shifts), dtype=bool)
    flat_ks = ks.reshape(-1)
    rows = np.repeat(np.arange(n), n_shifts)
    flat_wrong = wrong.reshape(-1)
    for start in range(0, flat_ks.size, chunk):
        sl = slice(start, start + chunk)
        frames = clip_domain(X[rows[sl]] + place_batch(delta, flat_ks[sl], d, mode))
        flat_wrong[sl] = np.asarray(predict(frames)) != y[rows[sl]]
    return ShiftEvaluation(float(wrong.mean()), wrong.mean(axis=0), n, n_shifts)


def shift_profile(victim, X, y, patch, ks, mode: str = SHIFT):
    """Success rate over the whole set for each common incidence in ``ks``."""
    delta = patch.delta if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    predict = _predictor(victim)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    d = X.shape[1]
    noise = place_batch(delta, ks, d, mode)
    return np.array([float(np.mean(np.asarray(predict(clip_domain(X + row))) != y)) for row in noise])


def evaluate_perturbations(victim, X, y, X_adv, n_shifts: int = 50, seed: int = 0, chunk: int = 2048):
    """Synchronised and de-synchronised success of per-sample perturbations.

    The synchronised rate applies each perturbation ``X_adv - X`` as crafted;
    the de-synchronised rate rotates it by an independent random delay for
    each of ``n_shifts`` trials per sample.
    """
    predict = _predictor(victim)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    deltas = np.asarray(X_adv, dtype=np.float64) - X
    n, d = X.shape
    sync = float(np.mean(np.asarray(predict(clip_domain(X + deltas))) != y))
    rng = np.random.default_rng(seed)
    ks = rng.integers(0, d, size=(n, n_shifts)).reshape(-1)
    rows = np.repeat(np.arange(n), n_shifts)
    j = np.arange(d)[None, :]
    wrong = 0
    for start in range(0, ks.size, chunk):
        r = rows[start : start + chunk]
        kk = ks[start : start + chunk]
        shifted = deltas[r[:, None], (j - kk[:, None]) % d]
        wrong += int(np.sum(np.asarray(predict(clip_domain(X[r] + shifted))) != y[r]))
    return sync, wrong / ks.size


# ---------------------------------------------------------------------------
# patch file format
#
#   magic b"UWBP" | version uint16 | s uint32 | epsilon f64 | has_band uint8
#   | f_min f64 | f_max f64 | size_budget int32 (-1: none) | kind length uint16
#   | kind utf-8 | s x float64 LE
#
# plus ``<path>.json`` with the generator config and per-pass history.

PATCH_MAGIC = b"UWBP"
PATCH_VERSION = 1
_PATCH_HEADER = struct.Struct("<4sHIdBddiH")


class PatchFormatError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


def save_patch(patch: Patch, path):
    kind = patch.kind.encode()
    band = patch.band
    with open(path, "wb") as fh:
        fh.write(_PATCH_HEADER.pack(
            PATCH_MAGIC, PATCH_VERSION, patch.size, float(patch.epsilon), band is not None,
            band.f_min if band else 0.0, band.f_max if band else 0.0,
            -1 if patch.size_budget is None else int(patch.size_budget), len(kind),
        ))
        fh.write(kind)
        fh.write(patch.delta.astype("<f8").tobytes())
    with open(f"{path}.json", "w") as fh:
        json.dump({"config": patch.config, "history": patch.history}, fh, indent=2, sort_keys=True, default=str)


def load_patch(path) -> Patch:
    with open(path, "rb") as fh:
        buf = io.BytesIO(fh.read())

    def take(n, what):
        offset = buf.tell()
        chunk = buf.read(n)
        if len(chunk) != n:
            raise PatchFormatError(f"truncated patch file while reading {what}", offset)
        return chunk

    magic, version, s, eps, has_band, f_min, f_max, budget, kind_len = _PATCH_HEADER.unpack(
        take(_PATCH_HEADER.size, "header")
    )
    if magic != PATCH_MAGIC:
        raise PatchFormatError("not a patch file (bad magic)", 0)
    if version != PATCH_VERSION:
        raise PatchFormatError(f"unsupported patch version {version}", 4)
    kind = take(kind_len, "kind").decode()
    delta = np.frombuffer(take(8 * s, "samples"), dtype="<f8").astype(np.float64)
    config, history = {}, []
    try:
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
        config, history = meta.get("config", {}), meta.get("history", [])
    except FileNotFoundError:
        pass
    return Patch(
        delta, eps, kind=kind, band=FrequencyBand(f_min, f_max) if has_band else None,
        size_budget=None if budget < 0 else budget, config=config, history=history,
    )

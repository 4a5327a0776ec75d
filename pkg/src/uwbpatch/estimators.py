"""scikit-learn style wrappers around the model, the filter defense and the patch attacks.

The wrappers only hold hyper-parameters in ``__init__`` and learn state in
``fit`` (attributes ending in ``_``), so ``get_params``/``set_params``/``clone``
and :class:`sklearn.pipeline.Pipeline` work as usual::

    defended = make_pipeline(PassbandFilter(), CNN1DClassifier(epochs=100))
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.pipeline import Pipeline, make_pipeline
from sklearn.utils.validation import check_is_fitted

from . import attacks, nn
from .defenses import ATConfig, adversarial_train
from .signal import SAMPLE_RATE_HZ, FrequencyBand, estimate_band, passband_filter
from .validation import check_labels, check_signals

__all__ = [
    "CNN1DClassifier",
    "PassbandFilter",
    "GradientSignAttack",
    "UniversalPatchAttack",
    "defended_pipeline",
]


class CNN1DClassifier(ClassifierMixin, BaseEstimator):
    """The three-block 1-D CNN trained with Adam on the negative log-likelihood.

    Setting ``at_epsilon > 0`` switches to adversarial training with an even
    clean/PGD mix (see :func:`uwbpatch.defenses.adversarial_train`).
    """

    def __init__(self, num_outputs=nn.DEFAULT_OUTPUTS, epochs=100, batch_size=4, learning_rate=1e-4,
                 leaky_slope=0.01, seed=0, at_epsilon=0.0, at_step_size=0.0005, at_iterations=20,
                 verbose=False):
        self.num_outputs = num_outputs
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.leaky_slope = leaky_slope
        self.seed = seed
        self.at_epsilon = at_epsilon
        self.at_step_size = at_step_size
        self.at_iterations = at_iterations
        self.verbose = verbose

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_signals(X)
        y = check_labels(y, X.shape[0], self.num_outputs)
        arch = nn.ArchSpec(input_length=X.shape[1], num_outputs=self.num_outputs)
        init = nn.init_params(arch, seed=self.seed, leaky_slope=self.leaky_slope)
        if self.at_epsilon > 0:
            cfg = ATConfig(epsilon=self.at_epsilon, step_size=self.at_step_size, iterations=self.at_iterations,
                           epochs=self.epochs, seed=self.seed, learning_rate=self.learning_rate,
                           batch_size=self.batch_size)
            self.params_, self.history_ = adversarial_train(X, y, cfg, params=init, X_test=X_val, y_test=y_val,
                                                            verbose=self.verbose)
        else:
            cfg = nn.TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                                 epochs=self.epochs, seed=self.seed)
            self.params_, self.history_ = nn.train(X, y, cfg, params=init, X_test=X_val, y_test=y_val,
                                                   verbose=self.verbose)
        self.classes_ = np.arange(self.num_outputs)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_params(cls, params: nn.ModelParams, **kwargs):
        """Wrap already trained parameters without refitting."""
        est = cls(num_outputs=params.arch.num_outputs, leaky_slope=params.leaky_slope, **kwargs)
        est.params_ = params
        est.history_ = None
        est.classes_ = np.arange(params.arch.num_outputs)
        est.n_features_in_ = params.arch.input_length
        return est

    def _check(self, X):
        check_is_fitted(self, "params_")
        return check_signals(X, self.n_features_in_)

    def predict_log_proba(self, X):
        X = self._check(X)
        return nn.forward(self.params_, X)

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        X = self._check(X)
        return nn.predict_batched(self.params_, X)


class PassbandFilter(TransformerMixin, BaseEstimator):
    """Zero every frequency outside the band holding ``power_fraction`` of the training power.

    ``band`` fixes the band instead of estimating it in ``fit``.
    """

    def __init__(self, power_fraction=0.95, band=None, sample_rate_hz=SAMPLE_RATE_HZ):
        self.power_fraction = power_fraction
        self.band = band
        self.sample_rate_hz = sample_rate_hz

    def fit(self, X, y=None):
        X = check_signals(X)
        if self.band is not None:
            band = self.band if isinstance(self.band, FrequencyBand) else FrequencyBand(*self.band)
            self.band_ = band.validate(self.sample_rate_hz)
        else:
            self.band_ = estimate_band(X, self.power_fraction, self.sample_rate_hz)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "band_")
        X = check_signals(X, self.n_features_in_)
        return passband_filter(X, self.band_, self.sample_rate_hz)


def defended_pipeline(classifier: CNN1DClassifier | None = None, power_fraction=0.95) -> Pipeline:
    """Pass-band pre-processing in front of the classifier."""
    return make_pipeline(PassbandFilter(power_fraction=power_fraction), classifier or CNN1DClassifier())


def _victim_params(victim):
    if isinstance(victim, nn.ModelParams):
        return victim
    if isinstance(victim, CNN1DClassifier):
        check_is_fitted(victim, "params_")
        return victim.params_
    raise TypeError("victim must be ModelParams or a fitted CNN1DClassifier")


class GradientSignAttack(TransformerMixin, BaseEstimator):
    """Input-specific FGSM (``iterations=1``) or PGD perturbations against a fixed victim.

    ``fit`` only validates and records the victim; ``transform(X, y)`` needs
    the true labels, so use ``fit_transform(X, y)`` or ``transform(X, y)``.
    """

    def __init__(self, victim=None, epsilon=0.002, step_size=None, iterations=1):
        self.victim = victim
        self.epsilon = epsilon
        self.step_size = step_size
        self.iterations = iterations

    def fit(self, X, y=None):
        self.params_ = _victim_params(self.victim)
        self.n_features_in_ = check_signals(X).shape[1]
        return self

    def transform(self, X, y=None):
        check_is_fitted(self, "params_")
        if y is None:
            raise ValueError("gradient-sign attacks need the true labels")
        X = check_signals(X, self.n_features_in_)
        y = check_labels(y, X.shape[0], self.params_.arch.num_outputs)
        if self.iterations == 1 and self.step_size is None:
            return attacks.fgsm(self.params_, X, y, self.epsilon)
        alpha = self.epsilon / 10 if self.step_size is None else self.step_size
        return attacks.pgd(self.params_, X, y, self.epsilon, alpha, self.iterations)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, y)


class UniversalPatchAttack(TransformerMixin, BaseEstimator):
    """One patch for all inputs: ``kind`` is ``uap``, ``srp``, ``sfr`` or ``arna``.

    ``fit`` runs the sequential generator on ``(X, y)`` and stores ``patch_``.
    ``transform`` adds the patch at fresh uniform incidences drawn from
    ``seed``; ``score`` is the success rate over ``n_shifts`` incidences per
    sample. ``band=None`` for ``sfr``/``arna`` estimates the band from ``X``.
    """

    def __init__(self, victim=None, kind="srp", epsilon=0.02, step_size=None, inner_iterations=20,
                 outer_iterations=5, size=None, band=None, mode=None, n_shifts=50, seed=0):
        self.victim = victim
        self.kind = kind
        self.epsilon = epsilon
        self.step_size = step_size
        self.inner_iterations = inner_iterations
        self.outer_iterations = outer_iterations
        self.size = size
        self.band = band
        self.mode = mode
        self.n_shifts = n_shifts
        self.seed = seed

    def _mode(self):
        if self.mode is not None:
            return self.mode
        return attacks.ONE_SHOT if self.kind == "arna" else attacks.SHIFT

    def fit(self, X, y):
        params = _victim_params(self.victim)
        X = check_signals(X, params.arch.input_length)
        y = check_labels(y, X.shape[0], params.arch.num_outputs)
        cfg = attacks.AttackConfig(epsilon=self.epsilon, step_size=self.step_size,
                                   inner_iterations=self.inner_iterations,
                                   outer_iterations=self.outer_iterations, seed=self.seed)
        band = self.band
        if self.kind in ("sfr", "arna") and band is None:
            band = estimate_band(X)
        if self.kind == "uap":
            self.patch_ = attacks.uap(params, X, y, cfg)
        elif self.kind == "srp":
            self.patch_ = attacks.srp(params, X, y, cfg)
        elif self.kind == "sfr":
            self.patch_ = attacks.sfr(params, X, y, cfg, band)
        elif self.kind == "arna":
            self.patch_ = attacks.arna(params, X, y, cfg, self.size or X.shape[1], band)
        else:
            raise ValueError(f"unknown patch kind {self.kind!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "patch_")
        X = check_signals(X, self.n_features_in_)
        ks = np.random.default_rng(self.seed + 1).integers(0, X.shape[1], size=X.shape[0])
        return attacks.clip_domain(X + attacks.place_batch(self.patch_.delta, ks, X.shape[1], self._mode()))

    def score(self, X, y, victim=None):
        """Attack success rate (higher is better for the attacker)."""
        check_is_fitted(self, "patch_")
        X = check_signals(X, self.n_features_in_)
        target = self.victim if victim is None else victim
        if isinstance(target, CNN1DClassifier):
            target = target.params_
        return attacks.evaluate_patch(target, X, y, self.patch_, self._mode(), self.n_shifts,
                                      seed=self.seed + 1).success_rate

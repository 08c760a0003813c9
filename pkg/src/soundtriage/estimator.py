"""Scikit-learn style facade over the full triage detection pipeline.

``TriageDetector`` trains once on annotated waveforms and afterwards serves
any per-class priority vector at prediction time:

    det = TriageDetector(n_mels=32, epochs=20, random_state=0)
    det.fit(waveforms, event_lists)
    probs = det.predict_proba(waveforms, target=2, weight=15.0)
    events = det.predict(waveforms, target=2, weight=15.0)

``fit`` holds out a validation fraction for model selection; ``get_params``
and ``set_params`` come from ``sklearn.base.BaseEstimator``, so the detector
clones and grid-searches like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import validation
from .dataio import FeatureConfig, default_class_names, extract_logmel, prepare_clips
from .inference import PostprocessConfig, events_from_probs, predict, tune_postprocessing
from .metrics import frame_f1
from .training import TrainConfig, train
from .triage import TriageWeights, make_inference_weights


class TriageDetector(BaseEstimator):
    """Priority-conditioned polyphonic sound event detector.

    Parameters mirror the training and feature configuration; fitted state
    lives in ``checkpoint_``. ``X`` is a list of mono waveforms at
    ``sample_rate``; ``y`` is a list of event lists, each event a
    ``(class_index, onset_seconds, offset_seconds)`` triple.
    """

    def __init__(self, sample_rate=16000, window=0.04, hop=0.02, n_mels=64,
                 n_classes=None, loss_kind="set_a", epochs=100, batch_size=64,
                 learning_rate=1e-3, dirichlet_alpha=0.1, identity_film=False,
                 validation_fraction=0.2, threshold=0.5, median_size=1,
                 random_state=0):
        self.sample_rate = sample_rate
        self.window = window
        self.hop = hop
        self.n_mels = n_mels
        self.n_classes = n_classes
        self.loss_kind = loss_kind
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.dirichlet_alpha = dirichlet_alpha
        self.identity_film = identity_film
        self.validation_fraction = validation_fraction
        self.threshold = threshold
        self.median_size = median_size
        self.random_state = random_state

    def _feature_config(self) -> FeatureConfig:
        return FeatureConfig(sample_rate=self.sample_rate, window=self.window,
                             hop=self.hop, n_mels=self.n_mels)

    def _annotate(self, X, y):
        validation.check_paired_lists(X, y)
        config = self._feature_config()
        clips = []
        for i, (wave, events) in enumerate(zip(X, y)):
            wave = validation.check_waveform(wave, self.sample_rate,
                                             min_samples=config.window_samples)
            duration = wave.size / self.sample_rate
            clips.append((wave, validation.check_annotation(events, f"clip_{i:05d}",
                                                            duration)))
        return clips

    def fit(self, X, y):
        """Train the detector; holds out ``validation_fraction`` of the clips
        for best-epoch selection. Returns self."""
        clips = self._annotate(X, y)
        annotations = [ann for _, ann in clips]
        n_classes = self.n_classes or validation.infer_n_classes(annotations)

        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(clips))
        n_val = max(1, int(round(self.validation_fraction * len(clips))))
        if n_val >= len(clips):
            raise ValueError(
                f"validation_fraction={self.validation_fraction} leaves no "
                f"training clips (got {len(clips)} total)"
            )
        val_idx = set(order[:n_val].tolist())

        config = self._feature_config()
        train_config = TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, loss_kind=self.loss_kind,
            dirichlet_alpha=self.dirichlet_alpha, seed=self.random_state,
            identity_film=self.identity_film)
        prepared = prepare_clips(clips, n_classes, config, pool_factor=32)
        train_clips = [c for i, c in enumerate(prepared) if i not in val_idx]
        val_clips = [c for i, c in enumerate(prepared) if i in val_idx]

        self.checkpoint_ = train(train_clips, val_clips, train_config, config,
                                 class_names=default_class_names(n_classes))
        self.classes_ = np.arange(n_classes)
        self.n_classes_ = n_classes
        self.postprocess_ = PostprocessConfig.uniform(
            n_classes, self.threshold, self.median_size)
        return self

    def _weights(self, target=None, weight=None, lam=None) -> TriageWeights | None:
        if lam is not None:
            return lam if isinstance(lam, TriageWeights) else TriageWeights(raw=np.asarray(lam, dtype=np.float64))
        if target is not None:
            return make_inference_weights(int(target), float(weight or 1.0),
                                          self.n_classes_)
        return None

    def predict_proba(self, X, target=None, weight=None, lam=None):
        """Per-clip ``[n_classes, T_frames]`` probability grids under the
        chosen priorities (uniform when none are given)."""
        validation.check_fitted(self)
        config = self._feature_config()
        weights = self._weights(target, weight, lam)
        out = []
        for wave in X:
            wave = validation.check_waveform(wave, self.sample_rate,
                                             min_samples=config.window_samples)
            out.append(predict(self.checkpoint_, extract_logmel(wave, config), weights))
        return out

    def predict(self, X, target=None, weight=None, lam=None):
        """Per-clip event lists after thresholding and median smoothing."""
        validation.check_fitted(self)
        probs = self.predict_proba(X, target=target, weight=weight, lam=lam)
        return [events_from_probs(p, self.postprocess_, self.hop) for p in probs]

    def tune(self, X, y, metric_kind="frame_f1", weight_grid=(1.0, 5.0, 10.0, 15.0, 20.0, 25.0),
             threshold_grid=None, median_grid=None):
        """Grid-search per-class thresholds, filter sizes, and target weights
        on held-out data; updates ``postprocess_`` and ``target_weights_``."""
        validation.check_fitted(self)
        clips = self._annotate(X, y)
        prepared = prepare_clips(clips, self.n_classes_, self._feature_config(),
                                 pool_factor=32)
        kwargs = {}
        if threshold_grid is not None:
            kwargs["threshold_grid"] = threshold_grid
        if median_grid is not None:
            kwargs["median_grid"] = median_grid
        result = tune_postprocessing(self.checkpoint_, prepared,
                                     weight_grid=weight_grid,
                                     metric_kind=metric_kind, **kwargs)
        self.postprocess_ = result.postprocess
        self.target_weights_ = result.target_weights
        return result

    def score(self, X, y, target=None, weight=None, lam=None):
        """Macro frame-based F-score on the 20 ms grid."""
        validation.check_fitted(self)
        clips = self._annotate(X, y)
        prepared = prepare_clips(clips, self.n_classes_, self._feature_config(),
                                 pool_factor=32)
        weights = self._weights(target, weight, lam)
        preds, refs = [], []
        for clip in prepared:
            probs = predict(self.checkpoint_, clip.features, weights)
            preds.append((probs > self.postprocess_.thresholds[:, None]).astype(np.uint8))
            refs.append(clip.roll.active)
        _, macro = frame_f1(preds, refs)
        return macro

"""scikit-learn style classifier wrapping a task network and its switcher."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import DatasetHandle
from .nn import build_lenet_small, build_mlp
from .pruning import PrunedArchitecture, apply_prune, derive_pruned_architecture
from .switcher import SNNConfig, build_snn
from .tensor import softmax
from .training import TrainConfig, factors_for, predict_logits, train


class SwitcherClassifier(ClassifierMixin, BaseEstimator):
    """Bias-free MLP (or small LeNet) trained together with a switcher network.

    Parameters
    ----------
    hidden : tuple of int
        Hidden widths of the MLP (ignored for ``architecture="lenet"``).
    architecture : {"mlp", "lenet"}
        ``lenet`` expects square images flattened row-major.
    conv_channels, fc_widths : tuple of int
        LeNet layout.
    mode : {"alternating", "separate", "baseline"}
    snn_channels : tuple of int
        Feature counts per switcher level; the level count follows.
    head_scale : float
        Shrinks the switcher's initial output weights so every factor starts
        near 1.  Values around 0.1 keep LeNet from losing all its units in
        the first switcher epoch.
    epochs, batch_size, lr, patience, clip_norm
        Training settings; one epoch per alternation step.  ``clip_norm``
        caps the global gradient norm per step (0 disables); the TNN phase
        can diverge without it because its gradient also flows through the
        switcher.
    random_state : int
    """

    def __init__(self, hidden=(300, 100), architecture="mlp", conv_channels=(4, 8), fc_widths=(32,),
                 mode="alternating", snn_channels=(2, 4, 8), head_scale=1.0, epochs=10, batch_size=64,
                 lr=0.1, patience=5, clip_norm=1.0, random_state=0):
        self.hidden = hidden
        self.architecture = architecture
        self.conv_channels = conv_channels
        self.fc_widths = fc_widths
        self.mode = mode
        self.snn_channels = snn_channels
        self.head_scale = head_scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.clip_norm = clip_norm
        self.random_state = random_state

    def _build(self, n_features: int, n_classes: int):
        seed = int(self.random_state)
        if self.architecture == "mlp":
            tnn = build_mlp([n_features] + list(self.hidden), n_classes, seed)
        elif self.architecture == "lenet":
            side = int(round(np.sqrt(n_features)))
            if side * side != n_features:
                raise ValueError(f"lenet needs square images, got {n_features} features")
            tnn = build_lenet_small(self.conv_channels, self.fc_widths, n_classes, seed, side)
        else:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.mode == "baseline":
            return tnn, None
        chans = tuple(self.snn_channels)
        return tnn, build_snn(tnn, SNNConfig(levels=len(chans), channels=chans, head_scale=self.head_scale), seed)

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError(f"need samples of at least two classes, got 1 class ({self.classes_[0]!r})")
        codes = self._encoder.transform(y)
        empty = np.zeros((0, X.shape[1]))
        data = DatasetHandle(X, codes, empty, np.zeros(0, dtype=np.int64), (X.shape[1],), len(self.classes_))
        tnn, snn = self._build(X.shape[1], len(self.classes_))
        cfg = TrainConfig(batch_size=self.batch_size, lr=self.lr, epochs=self.epochs, patience=self.patience,
                          mode=self.mode, seed=int(self.random_state), clip_norm=self.clip_norm)
        self.tnn_, self.snn_, self.log_ = train(tnn, snn, data, cfg)
        return self

    def _logits(self, X):
        check_is_fitted(self, "tnn_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return predict_logits(self.tnn_, self.snn_, X)

    def decision_function(self, X):
        """Logits; for two classes the margin of the second class over the first."""
        z = self._logits(X)
        return z[:, 1] - z[:, 0] if z.shape[1] == 2 else z

    def predict_proba(self, X):
        return softmax(self._logits(X))

    def predict(self, X):
        z = self._logits(X)
        return self.classes_[np.argmax(z, axis=1)]

    def factors(self) -> list[np.ndarray]:
        check_is_fitted(self, "tnn_")
        g = factors_for(self.snn_, self.tnn_)
        if g is None:
            return [np.ones(n) for n in self.tnn_.scalable_sizes()]
        return [v.data.copy() for v in g]

    def pruned_architecture(self, threshold: float = 0.0) -> PrunedArchitecture:
        return derive_pruned_architecture(self.tnn_, self.factors(), threshold)

    def compact_model(self, threshold: float = 0.0):
        """Task network with pruned neurons removed and factors folded in."""
        return apply_prune(self.tnn_, self.factors(), threshold)

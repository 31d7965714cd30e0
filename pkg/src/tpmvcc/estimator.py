"""scikit-learn style facade over the full pipeline.

`MultiViewCountingEstimator.fit` runs the 3-stage schedule on a dataset
directory (or an already-open Dataset); `predict` returns per-frame counts
and `score` the frame-level accuracy.  Parameters follow the sklearn
get_params/set_params protocol so the estimator composes with model
selection utilities.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io as tio
from .evaluation import compute_metrics, evaluate_model
from .training import STAGE_FUNCS, TrainConfig, build_model


class NotFittedError(RuntimeError):
    pass


class MultiViewCountingEstimator:
    def __init__(self, dilation: int = 2, view_subset: tuple = (0, 1, 2),
                 epochs_stage1: int = 15, epochs_stage2: int = 25,
                 epochs_stage3: int = 10, lr_stage1: float = 1e-3,
                 lr_stage2: float = 5e-5, lr_stage3: float = 2e-5,
                 optimizer: str = "adam", backbone_trainable_in_stage3: bool = True,
                 seed: int = 0):
        self.dilation = dilation
        self.view_subset = view_subset
        self.epochs_stage1 = epochs_stage1
        self.epochs_stage2 = epochs_stage2
        self.epochs_stage3 = epochs_stage3
        self.lr_stage1 = lr_stage1
        self.lr_stage2 = lr_stage2
        self.lr_stage3 = lr_stage3
        self.optimizer = optimizer
        self.backbone_trainable_in_stage3 = backbone_trainable_in_stage3
        self.seed = seed
        self.model_ = None
        self.reports_ = None

    # -- sklearn protocol -----------------------------------------------------

    _PARAM_NAMES = ("dilation", "view_subset", "epochs_stage1", "epochs_stage2",
                    "epochs_stage3", "lr_stage1", "lr_stage2", "lr_stage3",
                    "optimizer", "backbone_trainable_in_stage3", "seed")

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "MultiViewCountingEstimator":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs_stage1=self.epochs_stage1, epochs_stage2=self.epochs_stage2,
            epochs_stage3=self.epochs_stage3, lr_stage1=self.lr_stage1,
            lr_stage2=self.lr_stage2, lr_stage3=self.lr_stage3,
            optimizer=self.optimizer, dilation=self.dilation,
            view_subset=tuple(self.view_subset),
            backbone_trainable_in_stage3=self.backbone_trainable_in_stage3,
            seed=self.seed)

    @staticmethod
    def _as_dataset(X) -> tio.Dataset:
        if isinstance(X, tio.Dataset):
            return X
        if isinstance(X, (str, Path)):
            return tio.open_dataset(X)
        raise TypeError("X must be a dataset directory path or an open Dataset")

    # -- pipeline -------------------------------------------------------------

    def fit(self, X, y=None) -> "MultiViewCountingEstimator":
        dataset = self._as_dataset(X)
        cfg = self._train_config()
        model, _ = build_model(dataset, cfg)
        self.reports_ = [STAGE_FUNCS[stage](dataset, model, cfg) for stage in (1, 2, 3)]
        self.model_ = model
        return self

    def _check_fitted(self):
        if self.model_ is None:
            raise NotFittedError("call fit before predict/score")

    def predict(self, X, split: str = "val") -> np.ndarray:
        """Predicted counts for each frame of the given split."""
        self._check_fitted()
        dataset = self._as_dataset(X)
        from .tensor import Tensor
        counts = []
        for f in dataset.frames(split):
            images = {vid: Tensor(f.images[vid]) for vid in sorted(self.view_subset)}
            counts.append(self.model_.predict_scene_count(images))
        return np.array(counts)

    def score(self, X, y=None, split: str = "val") -> float:
        """Mean frame-level accuracy (the Rate metric) on the split."""
        self._check_fitted()
        dataset = self._as_dataset(X)
        result = evaluate_model(self.model_, dataset.frames(split),
                                tuple(self.view_subset))
        return result.rate

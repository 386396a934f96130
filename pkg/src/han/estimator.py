"""Scikit-learn style front end: fit on labelled skeleton sequences, predict classes.

The estimator follows the sklearn parameter protocol (every constructor
argument is a hyperparameter, `get_params`/`set_params` round-trip them),
so it composes with model-selection utilities without depending on sklearn
itself.
"""

from __future__ import annotations

import inspect

import numpy as np

from .attention import AttentionConfig
from .data import (
    AugmentationConfig,
    HandPartition,
    SkeletonSequence,
    default_partition,
    resolve_partition,
    uniform_sample,
)
from .errors import UsageError
from .model import HANConfig, HANModel, forward
from .train import TrainConfig, TrainResult, train_loop
from .validation import as_label_array, as_sequence_list


class HANClassifier:
    """Hierarchical self-attention classifier for hand-skeleton sequences.

    Parameters
    ----------
    d_model, n_heads, d_head, dropout_rate : attention block geometry.
    frames : frame count every sequence is uniformly resampled to.
    partition : "auto" (pick by joint count), a built-in name, a partition
        file path, or a HandPartition instance.
    pe_j, pe_f, pe_t, pe_fusion : position-embedding toggles per module.
    share_j_att, share_t_att : weight sharing across parts / streams.
    lr, batch_size, warmup_epochs, plateau_patience, decay_factor,
    max_decays, max_epochs : schedule; training stops at the
        max_decays-th plateau decay (or at max_epochs when set).
    augment : apply the training-time augmentations.
    seed : drives initialization, shuffling, dropout, and augmentation.

    Attributes
    ----------
    classes_ : sorted unique labels seen in fit.
    model_ : trained parameter set.
    history_ : per-epoch training log.
    """

    def __init__(
        self,
        *,
        d_model: int = 128,
        n_heads: int = 8,
        d_head: int = 32,
        dropout_rate: float = 0.1,
        frames: int = 8,
        partition: str = "auto",
        pe_j: bool = True,
        pe_f: bool = True,
        pe_t: bool = True,
        pe_fusion: bool = True,
        share_j_att: bool = True,
        share_t_att: bool = True,
        lr: float = 0.001,
        batch_size: int = 32,
        warmup_epochs: int = 5,
        plateau_patience: int = 10,
        decay_factor: float = 10.0,
        max_decays: int = 4,
        max_epochs: int | None = None,
        augment: bool = True,
        seed: int = 0,
    ):
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_head
        self.dropout_rate = dropout_rate
        self.frames = frames
        self.partition = partition
        self.pe_j = pe_j
        self.pe_f = pe_f
        self.pe_t = pe_t
        self.pe_fusion = pe_fusion
        self.share_j_att = share_j_att
        self.share_t_att = share_t_att
        self.lr = lr
        self.batch_size = batch_size
        self.warmup_epochs = warmup_epochs
        self.plateau_patience = plateau_patience
        self.decay_factor = decay_factor
        self.max_decays = max_decays
        self.max_epochs = max_epochs
        self.augment = augment
        self.seed = seed

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [n for n in sig.parameters if n != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "HANClassifier":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise UsageError(f"unknown parameter '{name}' for HANClassifier")
            setattr(self, name, value)
        return self

    def _build_config(self, joint_count: int) -> HANConfig:
        if isinstance(self.partition, HandPartition):
            partition = self.partition
        elif self.partition == "auto":
            partition = default_partition(joint_count)
        else:
            partition = resolve_partition(self.partition)
        return HANConfig(
            attention=AttentionConfig(
                d_model=self.d_model,
                n_heads=self.n_heads,
                d_head=self.d_head,
                dropout_rate=self.dropout_rate,
            ),
            frames=self.frames,
            class_count=len(self.classes_),
            partition=partition,
            pe_j=self.pe_j,
            pe_f=self.pe_f,
            pe_t=self.pe_t,
            pe_fusion=self.pe_fusion,
            share_j_att=self.share_j_att,
            share_t_att=self.share_t_att,
        )

    def fit(self, X, y) -> "HANClassifier":
        arrays = as_sequence_list(X)
        labels = as_label_array(y, len(arrays))
        self.classes_ = np.unique(labels)
        if self.classes_.size < 2:
            raise UsageError("fit needs at least 2 distinct classes")
        index_of = {label: i for i, label in enumerate(self.classes_.tolist())}
        seqs = [
            SkeletonSequence(frames=a, label=index_of[int(lbl)])
            for a, lbl in zip(arrays, labels)
        ]
        config = self._build_config(arrays[0].shape[1])
        model = HANModel(config, seed=self.seed)
        train_cfg = TrainConfig(
            lr_init=self.lr,
            batch_size=self.batch_size,
            warmup_epochs=self.warmup_epochs,
            plateau_patience=self.plateau_patience,
            decay_factor=self.decay_factor,
            max_decays=self.max_decays,
            seed=self.seed,
            max_epochs=self.max_epochs,
            augmentation=AugmentationConfig() if self.augment else None,
        )
        result: TrainResult = train_loop(seqs, [], model, train_cfg)
        self.model_ = result.model
        self.history_ = result.epochs
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise UsageError("this HANClassifier instance is not fitted yet; call fit first")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        arrays = as_sequence_list(X, joint_count=self.model_.config.joint_count)
        out = np.empty((len(arrays), self.classes_.size))
        for i, arr in enumerate(arrays):
            seq = uniform_sample(SkeletonSequence(frames=arr, label=0), self.frames)
            logits = forward(seq, self.model_, training=False).data.astype(np.float64)
            e = np.exp(logits - logits.max())
            out[i] = e / e.sum()
        return out

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def score(self, X, y) -> float:
        labels = as_label_array(y, len(as_sequence_list(X)))
        return float(np.mean(self.predict(X) == labels))

    def __repr__(self) -> str:
        return f"HANClassifier(d_model={self.d_model}, n_heads={self.n_heads}, frames={self.frames})"

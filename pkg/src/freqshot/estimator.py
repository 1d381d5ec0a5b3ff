"""scikit-learn facade over the episodic trainer.

:class:`FrequencyAwarePromptingClassifier` turns a labeled image array
into a fitted few-shot model: ``fit`` runs the episodic loop over
episodes sampled from the training data, then freezes one mean
embedding per class so that ``predict`` can score new images against
the fit classes without an explicit support set.  The episodic
interface stays available through :meth:`predict_episode`.

Images are [B, C, H, W] with spatial dims divisible by 8 (three rounds
of 2x2 pooling).  Defaults here are sized for interactive use; the
command line owns the full-length protocol.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .episodes import ImagePool
from .model import EncoderConfig, encode, proto_logits, relation_logits
from .rng import Rng
from .trainer import TrainConfig, train
from .validation import check_image_batch, check_labels


class FrequencyAwarePromptingClassifier(BaseEstimator, ClassifierMixin):
    """Few-shot image classifier trained with frequency-augmented episodes.

    Parameters mirror the training configuration; ``method="baseline"``
    trains the same backbone on plain episodes instead.
    """

    def __init__(
        self,
        method: str = "fap",
        head: str = "proto",
        way: int = 5,
        shot: int = 5,
        query: int = 4,
        episodes_per_epoch: int = 100,
        epochs: int = 5,
        alpha: float = 1e-3,
        beta: float = 40.0,
        t_max: int = 5,
        branch_p: float = 0.5,
        widths: tuple[int, int, int] = (16, 32, 64),
        relation_hidden: int = 64,
        val_fraction: float = 0.2,
        val_episodes: int = 50,
        seed: int = 0,
    ):
        self.method = method
        self.head = head
        self.way = way
        self.shot = shot
        self.query = query
        self.episodes_per_epoch = episodes_per_epoch
        self.epochs = epochs
        self.alpha = alpha
        self.beta = beta
        self.t_max = t_max
        self.branch_p = branch_p
        self.widths = widths
        self.relation_hidden = relation_hidden
        self.val_fraction = val_fraction
        self.val_episodes = val_episodes
        self.seed = seed

    # fitting

    def _split_pools(self, X: np.ndarray, y_idx: np.ndarray) -> dict[str, ImagePool]:
        frac = float(self.val_fraction)
        if not 0.0 <= frac < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {frac}")
        if frac == 0.0:
            pool = ImagePool(X, y_idx, name="fit")
            return {"train": pool, "val": pool}
        rng = Rng(self.seed, "fit", "split")
        train_idx, val_idx = [], []
        for c in np.unique(y_idx):
            rows = np.flatnonzero(y_idx == c)
            rows = rows[rng.child("class", int(c)).permutation(len(rows))]
            n_val = max(1, int(round(frac * len(rows))))
            if len(rows) - n_val < self.shot + self.query:
                raise ValueError(
                    f"class {c}: {len(rows)} samples cannot cover shot+query="
                    f"{self.shot + self.query} after holding out {n_val} for validation; "
                    "lower val_fraction or provide more data"
                )
            val_idx.extend(rows[:n_val])
            train_idx.extend(rows[n_val:])
        tr = np.sort(np.asarray(train_idx))
        va = np.sort(np.asarray(val_idx))
        return {
            "train": ImagePool(X[tr], y_idx[tr], name="fit-train"),
            "val": ImagePool(X[va], y_idx[va], name="fit-val"),
        }

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_labels(y, n=len(X))
        classes, y_idx = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise ValueError(f"need at least 2 classes, got {len(classes)}")
        if self.way > len(classes):
            raise ValueError(
                f"way={self.way} exceeds the {len(classes)} classes in y; lower way"
            )
        _, C, H, W = X.shape
        enc = EncoderConfig(in_channels=C, image_hw=(H, W), widths=tuple(self.widths))
        cfg = TrainConfig(
            way=self.way, shot=self.shot, query=self.query,
            episodes_per_epoch=self.episodes_per_epoch, epochs=self.epochs,
            alpha=self.alpha, beta=self.beta, t_max=self.t_max,
            branch_p=self.branch_p, head=self.head, method=self.method,
            val_every=self.episodes_per_epoch, val_episodes=self.val_episodes,
            val_query=self.query, relation_hidden=self.relation_hidden,
            seed=self.seed, encoder=enc,
        )
        pools = self._split_pools(X, y_idx)
        result = train(cfg, pools)

        self.params_ = result.best_params
        self.encoder_ = enc
        self.classes_ = classes
        self.history_ = result.history
        self.val_history_ = result.val_history
        self.best_val_accuracy_ = result.best_val_accuracy
        self.class_embeddings_ = self._class_means(X, y_idx, len(classes))
        return self

    def _embed(self, X: np.ndarray, chunk: int = 256) -> np.ndarray:
        frozen = self.params_.frozen()
        parts = [
            encode(T.tensor(X[i : i + chunk]), frozen, self.encoder_).data
            for i in range(0, len(X), chunk)
        ]
        return np.concatenate(parts, axis=0)

    def _class_means(self, X: np.ndarray, y_idx: np.ndarray, k: int) -> np.ndarray:
        emb = self._embed(X)
        return np.stack([emb[y_idx == c].mean(axis=0) for c in range(k)])

    # prediction

    def _logits(self, X: np.ndarray) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_image_batch(
            X, channels=self.encoder_.in_channels, image_hw=self.encoder_.image_hw
        )
        k = len(self.classes_)
        support = T.tensor(self.class_embeddings_)
        support_y = np.arange(k)
        out = []
        for i in range(0, len(X), 256):
            qe = T.tensor(self._embed(X[i : i + 256]))
            if self.head == "proto":
                logits = proto_logits(support, support_y, qe, k)
            else:
                logits = relation_logits(support, support_y, qe, k, self.params_.frozen())
            out.append(logits.data)
        return np.concatenate(out, axis=0)

    def predict(self, X):
        logits = self._logits(X)
        return self.classes_[np.argmax(logits, axis=1)]

    def predict_proba(self, X):
        logits = self._logits(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict_episode(self, support_x, support_y, query_x):
        """Episodic interface: classify queries against a fresh support set.

        Labels may be any integers; predictions are returned in the
        support set's label vocabulary.
        """
        check_is_fitted(self, "params_")
        support_x = check_image_batch(
            support_x, channels=self.encoder_.in_channels,
            image_hw=self.encoder_.image_hw, name="support_x",
        )
        query_x = check_image_batch(
            query_x, channels=self.encoder_.in_channels,
            image_hw=self.encoder_.image_hw, name="query_x",
        )
        support_y = check_labels(support_y, n=len(support_x), name="support_y")
        classes, sy = np.unique(support_y, return_inverse=True)
        frozen = self.params_.frozen()
        se = T.tensor(self._embed(support_x))
        qe = T.tensor(self._embed(query_x))
        if self.head == "proto":
            logits = proto_logits(se, sy, qe, len(classes))
        else:
            logits = relation_logits(se, sy, qe, len(classes), frozen)
        return classes[np.argmax(logits.data, axis=1)]

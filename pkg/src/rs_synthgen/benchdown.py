"""Downstream land-cover classification benchmark over synthetic datasets.

The classifier is an adapter; the reference backend is multinomial logistic
regression over mean-pooled pixels, which is enough to measure whether a
synthetic dataset carries class-separable signal. Splits are stratified per
class, transforms mirror a standard train/eval augmentation recipe, and the
metric block reports overall accuracy, average (per-class) accuracy, macro
F1, and mean Jaccard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import JobError, SplitError, ValidationError
from .genfarm import read_synth_dataset
from .ingest import ChannelStats, normalize, resize_to

_CONFIG_FIELDS = ("learning_rate", "epochs", "batch_size", "crop_side", "seed")


@dataclass(frozen=True)
class ClassifyConfig:
    """Downstream training job; defaults are the reference recipe."""

    learning_rate: float = 3e-4
    epochs: int = 20
    batch_size: int = 16
    crop_side: int = 224
    seed: int = 0


def build_classify_config(overrides: dict | None = None) -> ClassifyConfig:
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValidationError(f"unknown downstream config field(s): {sorted(unknown)}")
    cfg = ClassifyConfig(**overrides)
    if not cfg.learning_rate > 0:
        raise ValidationError(f"learning_rate must be > 0, got {cfg.learning_rate}")
    if cfg.epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {cfg.batch_size}")
    if cfg.crop_side < 1:
        raise ValidationError(f"crop_side must be >= 1, got {cfg.crop_side}")
    if cfg.seed < 0:
        raise ValidationError(f"seed must be >= 0, got {cfg.seed}")
    return cfg


@dataclass
class LabeledSet:
    """Images with integer labels and the shared class-name catalog."""

    images: list[np.ndarray]
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels out of range for class_names")

    def __len__(self) -> int:
        return len(self.images)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def load_synth(
    path: Path | str,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Stratified train/val/test split of a synthetic dataset file.

    Per class, split sizes are fraction * count rounded half up, with every
    split that has a nonzero fraction guaranteed at least one item; a class
    too small to cover its nonzero splits raises SplitError. Shuffling is
    seeded, and assignment happens independently per class.
    """
    f_train, f_val, f_test = (float(f) for f in fractions)
    if min(f_train, f_val, f_test) < 0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError(f"fractions must be non-negative and sum to 1, got {fractions}")
    records = read_synth_dataset(path)
    if not records:
        raise ValueError(f"dataset {path} is empty")
    pairs = {(rec.label_index, rec.class_name) for rec in records}
    if len({i for i, _ in pairs}) != len(pairs) or len({c for _, c in pairs}) != len(pairs):
        raise ValueError("label_index / class_name mapping is not one-to-one")
    # Datasets covering a subset of a larger catalog keep their original
    # ordinals; rank-remap them so labels are contiguous for the classifier.
    ordered = sorted(pairs)
    remap = {orig: rank for rank, (orig, _) in enumerate(ordered)}
    class_names = tuple(name for _, name in ordered)
    by_label: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        by_label.setdefault(remap[rec.label_index], []).append(i)

    rng = np.random.default_rng(seed)
    nonzero_splits = sum(1 for f in (f_train, f_val, f_test) if f > 0)
    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for label in sorted(by_label):
        idx = by_label[label]
        n = len(idx)
        if n < nonzero_splits:
            raise SplitError(
                f"class {class_names[label]!r} has {n} items; needs at least {nonzero_splits} "
                "to cover every nonzero split"
            )
        n_val = max(_round_half_up(f_val * n), 1) if f_val > 0 else 0
        n_test = max(_round_half_up(f_test * n), 1) if f_test > 0 else 0
        n_train = n - n_val - n_test
        if f_train > 0 and n_train < 1:
            # Rounding ate the train share; pull one back from the largest slice.
            if n_val >= n_test and n_val > 1:
                n_val -= 1
            elif n_test > 1:
                n_test -= 1
            else:
                raise SplitError(f"class {class_names[label]!r} has too few items for {fractions}")
            n_train = n - n_val - n_test
        if f_train == 0:
            n_val += n_train
            n_train = 0
        shuffled = [idx[j] for j in rng.permutation(n)]
        parts["train"].extend(shuffled[:n_train])
        parts["val"].extend(shuffled[n_train : n_train + n_val])
        parts["test"].extend(shuffled[n_train + n_val :])

    def make_set(indices: list[int]) -> LabeledSet:
        indices = sorted(indices)
        return LabeledSet(
            images=[records[i].image for i in indices],
            labels=np.array([remap[records[i].label_index] for i in indices], dtype=np.int64),
            class_names=class_names,
        )

    return make_set(parts["train"]), make_set(parts["val"]), make_set(parts["test"])


class TransformPipeline:
    """Crop / flip / color-jitter / normalize chain applied to one image at a time.

    Train mode needs an RNG (random crop position, coin-flip mirrors, jitter
    factors); eval mode is deterministic (center crop, normalize only).
    Output is float64 (crop_side, crop_side, 3), normalized by `stats`.
    """

    def __init__(self, stats: ChannelStats, crop_side: int, train: bool):
        if crop_side < 1:
            raise ValueError(f"crop_side must be >= 1, got {crop_side}")
        self.stats = stats
        self.crop_side = int(crop_side)
        self.train = bool(train)

    def __call__(self, image: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        img = np.asarray(image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3), got {img.shape}")
        h, w = img.shape[:2]
        c = self.crop_side
        if c > h or c > w:
            raise ValueError(f"crop_side {c} exceeds image size {h}x{w}")
        if self.train:
            if rng is None:
                raise ValueError("train transform requires an RNG")
            y = int(rng.integers(0, h - c + 1))
            x = int(rng.integers(0, w - c + 1))
            out = img[y : y + c, x : x + c].astype(np.float64)
            if rng.random() < 0.5:
                out = out[:, ::-1]
            if rng.random() < 0.5:
                out = out[::-1, :]
            brightness = 1.0 + rng.uniform(-0.2, 0.2)
            contrast = 1.0 + rng.uniform(-0.2, 0.2)
            out = out * brightness
            mean = out.mean()
            out = (out - mean) * contrast + mean
            out = np.clip(out, 0.0, 255.0)
        else:
            y = (h - c) // 2
            x = (w - c) // 2
            out = img[y : y + c, x : x + c].astype(np.float64)
        return normalize(np.ascontiguousarray(out), self.stats)


def build_transforms(stats: ChannelStats, crop_side: int = 224) -> tuple[TransformPipeline, TransformPipeline]:
    """(train, eval) transform pair sharing one normalization."""
    return TransformPipeline(stats, crop_side, train=True), TransformPipeline(stats, crop_side, train=False)


@runtime_checkable
class ClassifierBackend(Protocol):
    """Adapter contract for downstream classifiers.

    featurize maps transformed images to a feature matrix; train_epoch runs
    one pass of minibatch updates and returns the mean pre-update loss;
    predict_proba returns per-class probabilities.
    """

    def featurize(self, images: Sequence[np.ndarray]) -> np.ndarray: ...

    def train_epoch(self, x: np.ndarray, y: np.ndarray, learning_rate: float, batch_size: int, rng: np.random.Generator) -> float: ...

    def predict_proba(self, x: np.ndarray) -> np.ndarray: ...

    def snapshot(self) -> object: ...

    def restore(self, state: object) -> None: ...


class SoftmaxRegressionBackend:
    """Multinomial logistic regression on mean-pooled pixels.

    Features are the image downscaled to pool_side x pool_side x 3 and
    flattened; weights start at zero, so training is deterministic given the
    RNG stream.
    """

    def __init__(self, n_classes: int, pool_side: int = 8):
        if n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {n_classes}")
        self.n_classes = int(n_classes)
        self.pool_side = int(pool_side)
        dim = self.pool_side * self.pool_side * 3
        self._w = np.zeros((dim, self.n_classes), dtype=np.float64)
        self._b = np.zeros(self.n_classes, dtype=np.float64)

    def featurize(self, images: Sequence[np.ndarray]) -> np.ndarray:
        out = np.empty((len(images), self.pool_side * self.pool_side * 3), dtype=np.float64)
        for i, img in enumerate(images):
            out[i] = resize_to(np.asarray(img, dtype=np.float64), self.pool_side).ravel()
        return out

    def _logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self._w + self._b

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        logits = self._logits(x)
        logits -= logits.max(axis=1, keepdims=True)
        expl = np.exp(logits)
        return expl / expl.sum(axis=1, keepdims=True)

    def train_epoch(
        self, x: np.ndarray, y: np.ndarray, learning_rate: float, batch_size: int, rng: np.random.Generator
    ) -> float:
        n = x.shape[0]
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x[idx], y[idx]
            probs = self.predict_proba(xb)
            total_loss += float(-np.log(np.clip(probs[np.arange(len(yb)), yb], 1e-12, None)).sum())
            grad = probs.copy()
            grad[np.arange(len(yb)), yb] -= 1.0
            grad /= len(yb)
            self._w -= learning_rate * (xb.T @ grad)
            self._b -= learning_rate * grad.sum(axis=0)
        return total_loss / n

    def snapshot(self) -> object:
        return (self._w.copy(), self._b.copy())

    def restore(self, state: object) -> None:
        w, b = state
        self._w = w.copy()
        self._b = b.copy()


@dataclass(frozen=True)
class EpochLogEntry:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class DataBundle:
    """Everything one training job consumes: splits plus their transforms."""

    train: LabeledSet
    val: LabeledSet
    train_transform: TransformPipeline
    eval_transform: TransformPipeline


def _mean_nll(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.log(np.clip(picked, 1e-12, None)).mean())


def train_classifier(
    config: ClassifyConfig,
    data: DataBundle,
    backend: ClassifierBackend,
) -> tuple[ClassifierBackend, list[EpochLogEntry]]:
    """Train the backend, logging every epoch, and return it at its best-val-accuracy state.

    Ties in validation accuracy keep the earlier epoch. All randomness comes
    from config.seed, so two runs with the same config produce identical logs.
    """
    if len(data.train) == 0:
        raise ValueError("training set is empty")
    if len(data.val) == 0:
        raise ValueError("validation set is empty")
    rng = np.random.default_rng(config.seed)
    x_val = backend.featurize([data.eval_transform(img) for img in data.val.images])
    epoch_log: list[EpochLogEntry] = []
    best_acc = -1.0
    best_state = backend.snapshot()
    try:
        for epoch in range(1, config.epochs + 1):
            transformed = [data.train_transform(img, rng) for img in data.train.images]
            x_train = backend.featurize(transformed)
            train_loss = backend.train_epoch(
                x_train, data.train.labels, config.learning_rate, config.batch_size, rng
            )
            train_probs = backend.predict_proba(x_train)
            train_acc = float((train_probs.argmax(axis=1) == data.train.labels).mean())
            val_probs = backend.predict_proba(x_val)
            val_acc = float((val_probs.argmax(axis=1) == data.val.labels).mean())
            val_loss = _mean_nll(val_probs, data.val.labels)
            epoch_log.append(EpochLogEntry(epoch, float(train_loss), train_acc, val_loss, val_acc))
            if val_acc > best_acc:
                best_acc = val_acc
                best_state = backend.snapshot()
    except Exception as exc:
        err = JobError(f"classifier backend failed at epoch {len(epoch_log) + 1}: {exc}", last_completed_step=len(epoch_log))
        err.epoch_log = epoch_log
        raise err from exc
    backend.restore(best_state)
    return backend, epoch_log


def confusion_matrix(true_labels: np.ndarray, pred_labels: np.ndarray, n_classes: int) -> np.ndarray:
    """n_classes x n_classes count matrix; rows are true classes, columns predictions."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    pred_labels = np.asarray(pred_labels, dtype=np.int64)
    if true_labels.shape != pred_labels.shape:
        raise ValueError("label arrays must have the same shape")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (true_labels, pred_labels), 1)
    return conf


@dataclass(frozen=True)
class MetricsReport:
    """Test-set metrics; rates are in [0, 1]."""

    test_loss: float
    overall_accuracy: float
    average_accuracy: float
    macro_f1: float
    jaccard: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "test_loss": self.test_loss,
            "overall_accuracy": self.overall_accuracy,
            "average_accuracy": self.average_accuracy,
            "macro_f1": self.macro_f1,
            "jaccard": self.jaccard,
            "confusion": self.confusion.tolist(),
        }


def metrics_from_confusion(conf: np.ndarray, test_loss: float = float("nan")) -> MetricsReport:
    """Metric block from a confusion matrix.

    overall accuracy = trace / total; average accuracy = mean per-class
    recall; macro F1 = mean per-class F1; jaccard = mean per-class
    intersection-over-union. A class with a zero denominator contributes 0 to
    its metric and still counts in the mean.
    """
    conf = np.asarray(conf, dtype=np.int64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {conf.shape}")
    total = conf.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(conf).astype(np.float64)
    row = conf.sum(axis=1).astype(np.float64)
    col = conf.sum(axis=0).astype(np.float64)
    fn = row - tp
    fp = col - tp

    def safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.zeros_like(num)
        mask = den > 0
        out[mask] = num[mask] / den[mask]
        return out

    recall = safe_div(tp, tp + fn)
    precision = safe_div(tp, tp + fp)
    f1 = safe_div(2 * precision * recall, precision + recall)
    iou = safe_div(tp, tp + fp + fn)
    return MetricsReport(
        test_loss=float(test_loss),
        overall_accuracy=float(tp.sum() / total),
        average_accuracy=float(recall.mean()),
        macro_f1=float(f1.mean()),
        jaccard=float(iou.mean()),
        confusion=conf,
    )


def evaluate_classifier(
    model_ref: ClassifierBackend,
    test: LabeledSet,
    eval_transform: TransformPipeline,
) -> MetricsReport:
    """Run the model over the test set and compute the metric block.

    Predictions are argmax over class probabilities; argmax ties resolve to
    the lowest class index.
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    x = model_ref.featurize([eval_transform(img) for img in test.images])
    probs = model_ref.predict_proba(x)
    preds = probs.argmax(axis=1)
    conf = confusion_matrix(test.labels, preds, n_classes=len(test.class_names))
    return metrics_from_confusion(conf, test_loss=_mean_nll(probs, test.labels))

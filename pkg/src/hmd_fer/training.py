"""Training loop, evaluation metrics and single-image prediction."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .checkpoint import ModelCheckpoint, load_checkpoint
from .dataset import NUM_CLASSES, EmotionLabel, LabeledExample, to_arrays
from .nn import ops
from .nn.model import VGGNet, get_preset
from .nn.optim import SGD, StepDecay
from .occlusion import MaskSpec, apply_mask

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    preset: str = "vgg-fer-mini"
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_factor: float = 0.5
    decay_every: int = 20
    init_from: Optional[str] = None
    normalization: str = "computed"  # or "inherited" (from init_from)
    eval_batch_size: int = 128

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if get_preset(self.preset).batchnorm and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when batchnorm is enabled")
        if self.normalization not in ("computed", "inherited"):
            raise ValueError(f"normalization must be computed|inherited, got {self.normalization!r}")
        if self.normalization == "inherited" and not self.init_from:
            raise ValueError("inherited normalization needs init_from")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float
    lr: float


HISTORY_HEADER = "epoch,train_loss,val_accuracy,lr"


def history_csv(history: list[EpochRecord]) -> bytes:
    buf = io.StringIO()
    buf.write(HISTORY_HEADER + "\n")
    for h in history:
        buf.write(f"{h.epoch},{h.train_loss!r},{h.val_accuracy!r},{h.lr!r}\n")
    return buf.getvalue().encode()


# --------------------------------------------------------------------------
# preprocessing / inference
# --------------------------------------------------------------------------

def normalization_stats(images: np.ndarray) -> tuple[float, float]:
    """Global mean/std of pixels scaled to [0, 1]."""
    x = images.astype(np.float64) / 255.0
    std = float(x.std())
    return float(x.mean()), (std if std > 0 else 1.0)


def preprocess(images: np.ndarray, mean: float, std: float) -> np.ndarray:
    """uint8 [N, 48, 48] -> float32 [N, 1, 48, 48], standardized."""
    x = images.astype(np.float32) / np.float32(255.0)
    x = (x - np.float32(mean)) / np.float32(std)
    return x[:, None]


def network_from_checkpoint(ckpt: ModelCheckpoint) -> VGGNet:
    ckpt.validate()
    return VGGNet(get_preset(ckpt.preset), {k: v.copy() for k, v in ckpt.params.items()})


def checkpoint_from_network(net: VGGNet, mean: float, std: float, epoch: int) -> ModelCheckpoint:
    return ModelCheckpoint(preset=net.preset.name,
                           params={k: v.copy() for k, v in net.params.items()},
                           norm_mean=mean, norm_std=std, epoch=epoch)


@dataclass
class Prediction:
    label: EmotionLabel
    confidence: float
    probabilities: np.ndarray


class Classifier:
    """Inference-mode wrapper around a checkpoint. Immutable after construction."""

    def __init__(self, ckpt: ModelCheckpoint):
        self.checkpoint = ckpt
        self.net = network_from_checkpoint(ckpt)

    def probabilities(self, images: np.ndarray, mask: MaskSpec | None = None,
                      batch_size: int = 128) -> np.ndarray:
        images = np.asarray(images, dtype=np.uint8)
        if images.ndim == 2:
            images = images[None]
        if mask is not None:
            images = apply_mask(images, mask)
        out = []
        for i in range(0, len(images), batch_size):
            x = preprocess(images[i:i + batch_size], self.checkpoint.norm_mean,
                           self.checkpoint.norm_std)
            out.append(ops.softmax(self.net.forward(x, train=False).astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))

    def predict(self, image: np.ndarray, mask: MaskSpec | None = None) -> Prediction:
        p = self.probabilities(image, mask, batch_size=1)[0]
        k = int(np.argmax(p))  # first maximum = lowest label code
        return Prediction(EmotionLabel(k), float(p[k]), p)


def predict(ckpt: ModelCheckpoint, image: np.ndarray, mask: MaskSpec | None = None) -> Prediction:
    """Label, confidence and class probabilities for one 48x48 image."""
    return Classifier(ckpt).predict(image, mask)


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class EvalReport:
    confusion: np.ndarray  # [7, 7], rows = true, cols = predicted
    accuracy: float
    precision: np.ndarray  # nan where a class was never predicted
    recall: np.ndarray  # nan where a class never occurs
    count: int

    def summary(self) -> str:
        from .dataset import LABEL_NAMES
        lines = [f"examples {self.count}  accuracy {self.accuracy:.4f}",
                 "class      precision  recall"]
        for name, p, r in zip(LABEL_NAMES, self.precision, self.recall):
            lines.append(f"{name:<10} {p:9.4f}  {r:6.4f}")
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, num_classes: int = NUM_CLASSES) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return np.bincount(y_true * num_classes + y_pred,
                       minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def report_from_confusion(cm: np.ndarray) -> EvalReport:
    total = int(cm.sum())
    if total == 0:
        raise ValueError("cannot report on zero examples")
    diag = np.diag(cm).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = diag / cm.sum(axis=0)
        recall = diag / cm.sum(axis=1)
    return EvalReport(cm, float(diag.sum() / total), precision, recall, total)


def evaluate(ckpt_or_clf, examples: list[LabeledExample], mask: MaskSpec | None = None,
             batch_size: int = 128) -> EvalReport:
    if not examples:
        raise ValueError("evaluate needs at least one example")
    clf = ckpt_or_clf if isinstance(ckpt_or_clf, Classifier) else Classifier(ckpt_or_clf)
    images, labels = to_arrays(examples)
    pred = clf.probabilities(images, mask, batch_size).argmax(axis=1)
    return report_from_confusion(confusion_matrix(labels, pred))


def _accuracy(net, x, y, batch_size):
    correct = 0
    for i in range(0, len(x), batch_size):
        correct += int((net.forward(x[i:i + batch_size]).argmax(axis=1) == y[i:i + batch_size]).sum())
    return correct / len(x)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    edges = list(range(0, n, batch_size)) + [n]
    if len(edges) > 2 and edges[-1] - edges[-2] == 1:
        # a single leftover example cannot be batch-normalized; fold it in
        edges.pop(-2)
    return [order[a:b] for a, b in zip(edges, edges[1:])]


def train(config: TrainConfig, train_examples: list[LabeledExample],
          val_examples: list[LabeledExample] | None = None,
          ) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Train from scratch or fine-tune ``config.init_from``.

    Returns the checkpoint with the best validation accuracy (ties go to the
    later epoch; the final epoch when no validation data is given) and one
    :class:`EpochRecord` per epoch. When fine-tuning, an epoch-0 record holds
    the validation accuracy of the starting checkpoint as saved.
    """
    if not train_examples:
        raise ValueError("no training examples")
    preset = get_preset(config.preset)
    rng = np.random.default_rng(config.seed)
    images, labels = to_arrays(train_examples)

    init = None
    if config.init_from:
        init = config.init_from
        if not isinstance(init, ModelCheckpoint):
            init = load_checkpoint(init)
        if init.preset != config.preset:
            raise TrainingError(f"init_from checkpoint is preset {init.preset}, "
                                f"config wants {config.preset}")
    if config.normalization == "inherited":
        mean, std = init.norm_mean, init.norm_std
    else:
        mean, std = normalization_stats(images)

    net = network_from_checkpoint(init) if init else VGGNet.initialize(preset, rng)
    x = preprocess(images, mean, std)
    if val_examples:
        vimg, vy = to_arrays(val_examples)
        vx = preprocess(vimg, mean, std)
    opt = SGD(config.learning_rate, config.momentum, config.weight_decay,
              StepDecay(config.decay_factor, config.decay_every))

    history = []
    if init is not None and val_examples:
        # the starting checkpoint exactly as saved, i.e. with its own normalization
        acc0 = _accuracy(net, preprocess(vimg, init.norm_mean, init.norm_std), vy,
                         config.eval_batch_size)
        history.append(EpochRecord(0, math.nan, acc0, config.learning_rate))
        log.info("epoch 0: val acc %.4f (starting weights)", acc0)

    best, best_acc = None, -1.0
    start_epoch = init.epoch if init else 0
    for epoch in range(1, config.epochs + 1):
        lr = opt.set_epoch(epoch)
        total, seen = 0.0, 0
        for bi, idx in enumerate(_batches(len(x), config.batch_size, rng)):
            logits = net.forward(x[idx], train=True, rng=rng)
            loss, dlogits, _ = ops.softmax_cross_entropy(logits, labels[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            net.backward(dlogits)
            opt.step(net.params, net.grads)
            total += loss * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_acc = _accuracy(net, vx, vy, config.eval_batch_size) if val_examples else math.nan
        history.append(EpochRecord(epoch, train_loss, val_acc, lr))
        log.info("epoch %d: loss %.4f val acc %.4f lr %g", epoch, train_loss, val_acc, lr)
        score = val_acc if val_examples else epoch
        if score >= best_acc:
            best_acc = score
            best = checkpoint_from_network(net, mean, std, start_epoch + epoch)
    return best, history

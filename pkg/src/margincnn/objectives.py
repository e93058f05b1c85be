"""Classification heads: softmax cross-entropy and one-vs-all linear SVM.

The SVM heads treat the final dense layer's output as per-class margins
against targets in ``{-1, +1}`` (+1 only at the true class) and penalize
violations with either the plain hinge ``max(0, 1 - y*s)`` or its square.
Both carry a penalty weight ``C`` on the hinge sum and a quadratic penalty
on the final layer's weight matrix; both terms are averaged over the batch
so loss magnitudes are independent of the batch size.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


class HeadKind(enum.Enum):
    SOFTMAX_CE = "softmax"
    L2_SVM = "l2svm"
    L1_SVM = "l1svm"


@dataclass
class LossHead:
    """Choice of classification objective.

    ``penalty_c`` weighs the hinge sum (SVM heads only) and ``reg_coeff``
    the squared-norm term; ``reg_coeff=None`` means 1/batch_size.
    """

    kind: HeadKind
    penalty_c: float = 1.0
    reg_coeff: float | None = None

    def __post_init__(self):
        if self.kind is not HeadKind.SOFTMAX_CE and self.penalty_c <= 0:
            raise ConfigError(f"penalty C must be positive, got {self.penalty_c}")
        if self.reg_coeff is not None and self.reg_coeff < 0:
            raise ConfigError(f"reg_coeff must be nonnegative, got {self.reg_coeff}")


@dataclass
class TargetEncoding:
    """Integer labels plus their one-vs-all ``{-1, +1}`` translation."""

    labels: np.ndarray  # [n] ints in [0, num_classes)
    svm_targets: np.ndarray  # [n, num_classes] of -1.0 / +1.0


def encode_targets(labels: np.ndarray, num_classes: int = 10) -> TargetEncoding:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError(f"labels must be rank 1, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    targets = np.full((labels.shape[0], num_classes), -1.0)
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return TargetEncoding(labels=labels, svm_targets=targets)


def decode_targets(svm_targets: np.ndarray) -> np.ndarray:
    """Recover integer labels by locating the +1 entry per row."""
    return np.argmax(svm_targets, axis=1)


@dataclass
class LossValue:
    total: float
    data_term: float
    reg_term: float


def softmax_ce(scores: np.ndarray, labels: np.ndarray) -> tuple[LossValue, np.ndarray]:
    """Mean cross-entropy of the softmax over raw scores.

    Softmax is computed with per-row max subtraction; the gradient is
    ``(softmax - onehot) / n``.
    """
    labels = np.asarray(labels)
    n, k = scores.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = float(-log_p[np.arange(n), labels].sum() / n)
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return LossValue(total=loss, data_term=loss, reg_term=0.0), grad


def _reg(head: LossHead, w: np.ndarray, n: int) -> tuple[float, np.ndarray, float]:
    coeff = head.reg_coeff if head.reg_coeff is not None else 1.0 / n
    return coeff * float((w * w).sum()), 2.0 * coeff * w, coeff


def l2svm_loss(
    scores: np.ndarray, enc: TargetEncoding, head: LossHead, w: np.ndarray
) -> tuple[LossValue, np.ndarray, np.ndarray]:
    """Squared-hinge one-vs-all SVM loss on raw scores.

    data = (C/n) * sum max(0, 1 - y*s)^2, reg = coeff * sum(w^2); the reg
    gradient applies to the final dense weight ``w`` only.
    """
    if head.kind is not HeadKind.L2_SVM:
        raise ConfigError(f"l2svm_loss called with head kind {head.kind}")
    n = scores.shape[0]
    y = enc.svm_targets
    hinge = np.maximum(0.0, 1.0 - y * scores)
    scale = head.penalty_c / n
    data = scale * float((hinge * hinge).sum())
    grad_scores = scale * 2.0 * hinge * (-y)
    reg, grad_w, _ = _reg(head, w, n)
    return LossValue(total=data + reg, data_term=data, reg_term=reg), grad_scores, grad_w


def l1svm_loss(
    scores: np.ndarray, enc: TargetEncoding, head: LossHead, w: np.ndarray
) -> tuple[LossValue, np.ndarray, np.ndarray]:
    """Plain-hinge variant of :func:`l2svm_loss`; subgradient 0 at the hinge
    point."""
    if head.kind is not HeadKind.L1_SVM:
        raise ConfigError(f"l1svm_loss called with head kind {head.kind}")
    n = scores.shape[0]
    y = enc.svm_targets
    margin_violation = 1.0 - y * scores
    hinge = np.maximum(0.0, margin_violation)
    scale = head.penalty_c / n
    data = scale * float(hinge.sum())
    grad_scores = scale * (-y) * (margin_violation > 0)
    reg, grad_w, _ = _reg(head, w, n)
    return LossValue(total=data + reg, data_term=data, reg_term=reg), grad_scores, grad_w


def head_loss(
    scores: np.ndarray, enc: TargetEncoding, head: LossHead, w: np.ndarray
) -> tuple[LossValue, np.ndarray, np.ndarray | None]:
    """Dispatch to the configured head; the third element is the extra
    gradient for the final dense weight (None for softmax)."""
    if head.kind is HeadKind.SOFTMAX_CE:
        loss, grad = softmax_ce(scores, enc.labels)
        return loss, grad, None
    if head.kind is HeadKind.L2_SVM:
        return l2svm_loss(scores, enc, head, w)
    return l1svm_loss(scores, enc, head, w)


def predict(scores: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(scores, axis=1)


def accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of exact matches."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of empty prediction set is undefined")
    return float((pred == truth).mean())

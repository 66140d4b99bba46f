"""Distillation losses with analytic gradients.

All losses average over the batch (first axis) and return a
:class:`LossValue` whose ``grad`` is taken with respect to the student-side
argument. Teacher-side arguments are constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError, InputError
from .numeric import check_finite, matmul, one_hot

DEFAULT_T = 4.0


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


@dataclass
class JointLossValue:
    """Weighted KD + alignment loss; gradients go to two different places."""

    value: float
    grad_logits: np.ndarray
    grad_features: np.ndarray


def _check_T(T: float) -> None:
    if not T > 0:
        raise DomainError(f"temperature must be positive, got {T}")


def log_softmax_t(logits: np.ndarray, T: float = 1.0) -> np.ndarray:
    _check_T(T)
    z = logits / T
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_t(logits: np.ndarray, T: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / T``."""
    _check_T(T)
    z = logits / T
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 1:
        return one_hot(labels, num_classes)
    if labels.shape[1] != num_classes:
        raise DimensionError(f"labels {labels.shape} do not match {num_classes} classes")
    ok = np.all((labels == 0) | (labels == 1), axis=1) & (labels.sum(axis=1) == 1)
    if not ok.all():
        raise InputError(f"label row {int(np.argmin(ok))} is not one-hot")
    return labels.astype(np.float64)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> LossValue:
    """Mean of ``-log softmax(logits)[label]``; labels one-hot or integer."""
    y = _labels(labels, logits.shape[1])
    if y.shape[0] != logits.shape[0]:
        raise DimensionError(f"{logits.shape[0]} logits rows vs {y.shape[0]} labels")
    n = logits.shape[0]
    logp = log_softmax_t(logits, 1.0)
    value = float(-(y * logp).sum() / n)
    grad = (np.exp(logp) - y) / n
    return LossValue(value, check_finite(grad, "cross-entropy gradient"))


def kl_divergence(p: np.ndarray, log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    """Row-wise KL(p || q) given ``p`` with its log and ``log q``."""
    return np.where(p > 0, p * (log_p - log_q), 0.0).sum(axis=1)


def kd_loss_soft(student_logits, teacher_probs, labels, T: float = DEFAULT_T) -> LossValue:
    """KD loss against already-softened teacher probabilities."""
    _check_T(T)
    if student_logits.shape != teacher_probs.shape:
        raise DimensionError(f"student {student_logits.shape} vs teacher {teacher_probs.shape}")
    n = student_logits.shape[0]
    ce = cross_entropy(student_logits, labels)
    log_ps = log_softmax_t(student_logits, T)
    with np.errstate(divide="ignore"):
        log_pt = np.log(teacher_probs)
    kl = kl_divergence(teacher_probs, log_pt, log_ps).sum() / n
    value = ce.value + T * T * float(kl)
    # d/ds [T^2 KL] = T^2 * (p_s - p_t) / T
    grad = ce.grad + T * (np.exp(log_ps) - teacher_probs) / n
    return LossValue(value, grad)


def kd_loss(student_logits, teacher_logits, labels, T: float = DEFAULT_T) -> LossValue:
    """Cross entropy at T=1 plus ``T^2 * KL(p_t || p_s)`` at temperature T."""
    if student_logits.shape != teacher_logits.shape:
        raise DimensionError(f"student {student_logits.shape} vs teacher {teacher_logits.shape}")
    return kd_loss_soft(student_logits, softmax_t(teacher_logits, T), labels, T)


def simkd_loss(f_t: np.ndarray, f_s_proj: np.ndarray) -> LossValue:
    """Squared l2 distance summed over feature dims, averaged over the batch."""
    if f_t.shape != f_s_proj.shape:
        raise DimensionError(f"teacher features {f_t.shape} vs projected {f_s_proj.shape}")
    n = f_t.shape[0]
    diff = f_t - f_s_proj
    value = float((diff * diff).sum() / n)
    return LossValue(value, -2.0 * diff / n)


def joint_loss(alpha: float, kd: LossValue, simkd: LossValue) -> JointLossValue:
    """``(1 - alpha) * KD + alpha * SimKD``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    return JointLossValue(
        (1.0 - alpha) * kd.value + alpha * simkd.value,
        (1.0 - alpha) * kd.grad,
        alpha * simkd.grad,
    )


def _check_vectors(W_t, f_t, f_s):
    if f_t.shape != f_s.shape or f_t.ndim != 2:
        raise DimensionError(f"teacher features {f_t.shape} vs projected {f_s.shape}")
    if W_t.ndim != 2 or W_t.shape[1] != f_t.shape[1]:
        raise DimensionError(f"classifier weight {W_t.shape} vs features {f_t.shape}")


def output_l2_loss(W_t: np.ndarray, f_t: np.ndarray, f_s_proj: np.ndarray) -> LossValue:
    """Alignment measured after the (frozen) teacher classifier weight."""
    _check_vectors(W_t, f_t, f_s_proj)
    n = f_t.shape[0]
    diff = f_t - f_s_proj
    out = matmul(diff, W_t.T)
    value = float((out * out).sum() / n)
    return LossValue(value, -2.0 * matmul(out, W_t) / n)


def combined_l2_loss(W_t: np.ndarray, f_t: np.ndarray, f_s_proj: np.ndarray) -> LossValue:
    """Input-side plus output-side l2 alignment."""
    a = simkd_loss(f_t, f_s_proj)
    b = output_l2_loss(W_t, f_t, f_s_proj)
    return LossValue(a.value + b.value, a.grad + b.grad)


def nll(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of integer labels at T=1."""
    logp = log_softmax_t(logits, 1.0)
    return float(-logp[np.arange(len(labels)), labels].mean())

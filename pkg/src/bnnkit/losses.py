"""Training losses: softmax cross-entropy, temperature-softened KL
distillation loss, and their convex combination."""

from __future__ import annotations

import numpy as np


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy. Returns (loss, dloss/dlogits)."""
    n = logits.shape[0]
    logp = _log_softmax(logits.astype(np.float64))
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), (d / n).astype(logits.dtype)


def distributional_loss(logits_teacher: np.ndarray,
                        logits_student: np.ndarray, temperature: float):
    """Temperature-softened KL from teacher to student class distributions:

        (T^2 / N) * sum_i sum_j p_t[i,j] * log(p_t[i,j] / p_s[i,j])

    with p = softmax(logits / T). The teacher term is constant; gradients
    flow to the student only. Returns (loss, dloss/dlogits_student).
    """
    if logits_teacher.shape != logits_student.shape:
        raise ValueError(
            f"shape mismatch {logits_teacher.shape} vs {logits_student.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    t = float(temperature)
    n = logits_student.shape[0]
    logp_t = _log_softmax(logits_teacher.astype(np.float64) / t)
    logp_s = _log_softmax(logits_student.astype(np.float64) / t)
    p_t = np.exp(logp_t)
    loss = (t * t / n) * float((p_t * (logp_t - logp_s)).sum())
    dstudent = (t / n) * (np.exp(logp_s) - p_t)
    return loss, dstudent.astype(logits_student.dtype)


def total_loss(ce: float, distr: float, lam: float) -> float:
    """(1 - lambda) * cross-entropy + lambda * distillation."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return (1.0 - lam) * ce + lam * distr

"""Logit-level fusion of a neural LM with n-gram log-probabilities.

The fused next-token distribution is

    softmax(neural_logits + alpha * (log q + C))

where ``q`` is the n-gram distribution (floored before the log) and ``C`` is an
arbitrary constant that cancels in the softmax. Multiplying out the softmax
gives the equivalent re-weighted form ``q**alpha * exp(neural_logits) / Z``,
kept here as an independent computation path.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import log_softmax, softmax

DEFAULT_FLOOR = 1e-10
DEFAULT_ALPHA = 0.3
ALPHA_GRID = (0.05, 0.1, 0.2, 0.3, 0.5, 1.0)


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    alpha0: float = DEFAULT_ALPHA
    schedule: str = "constant"  # or "linear_anneal"
    anneal_steps: int = 2000
    prob_floor: float = DEFAULT_FLOOR
    inverse_softmax_constant: float = 0.0
    interp_lambda: float = 0.5

    def validate(self) -> None:
        if self.alpha0 < 0:
            raise FusionError(f"alpha0 must be >= 0, got {self.alpha0}")
        if self.schedule not in ("constant", "linear_anneal"):
            raise FusionError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "linear_anneal" and self.anneal_steps < 1:
            raise FusionError("anneal_steps must be >= 1 when annealing")
        if not 0 < self.prob_floor <= 1e-4:
            raise FusionError(f"prob_floor must be in (0, 1e-4], got {self.prob_floor}")
        if not 0.0 <= self.interp_lambda <= 1.0:
            raise FusionError(f"interp_lambda must be in [0, 1], got {self.interp_lambda}")

    def to_dict(self) -> dict:
        return asdict(self)


def alpha_at_step(config: FusionConfig, step: int) -> float:
    """Effective alpha after ``step`` optimizer updates."""
    if step < 0:
        raise FusionError(f"step must be >= 0, got {step}")
    if config.schedule == "constant":
        return config.alpha0
    return config.alpha0 * max(0.0, 1.0 - step / config.anneal_steps)


def inverse_softmax(p, constant: float = 0.0, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """``log(max(p, floor)) + constant``: a logit vector whose softmax is ``p``."""
    return np.log(np.maximum(np.asarray(p, dtype=np.float64), floor)) + constant


def _check_lengths(neural, ngram) -> None:
    if neural.shape != ngram.shape:
        raise FusionError(f"neural logits {neural.shape} and n-gram vector {ngram.shape} differ in shape")


def fuse_logits(neural_logits, ngram_logprobs, alpha: float, constant: float = 0.0) -> np.ndarray:
    neural = np.asarray(neural_logits, dtype=np.float64)
    ngram = np.asarray(ngram_logprobs, dtype=np.float64)
    _check_lengths(neural, ngram)
    if alpha == 0.0:
        return neural.copy()
    return neural + alpha * (ngram + constant)


def fused_distribution(neural_logits, ngram_logprobs, alpha: float, constant: float = 0.0) -> np.ndarray:
    """Log-distribution over the last axis of the fused logits."""
    return log_softmax(fuse_logits(neural_logits, ngram_logprobs, alpha, constant), axis=-1)


def reweight_form(neural_logits, ngram_probs, alpha: float, constant: float = 0.0) -> np.ndarray:
    """``q**alpha * exp(neural) / Z`` as a probability vector.

    The ``(e**C)**alpha`` factor is common to every component and cancels
    against ``Z``, so ``constant`` is accepted but has no numerical effect here.
    """
    neural = np.asarray(neural_logits, dtype=np.float64)
    q = np.asarray(ngram_probs, dtype=np.float64)
    _check_lengths(neural, q)
    if not np.isfinite(constant):
        raise FusionError("constant must be finite")
    if np.any(q <= 0):
        raise FusionError("reweight_form needs strictly positive (floored) n-gram probabilities")
    scores = q**alpha * np.exp(neural - neural.max(axis=-1, keepdims=True))
    return scores / scores.sum(axis=-1, keepdims=True)


def prob_interpolate(p_ngram, p_neural, lam: float) -> np.ndarray:
    p_ngram = np.asarray(p_ngram, dtype=np.float64)
    p_neural = np.asarray(p_neural, dtype=np.float64)
    _check_lengths(p_neural, p_ngram)
    if lam == 0.0:
        return p_neural.copy()
    if lam == 1.0:
        return p_ngram.copy()
    return lam * p_ngram + (1.0 - lam) * p_neural


def neural_distribution(neural_logits) -> np.ndarray:
    return softmax(np.asarray(neural_logits, dtype=np.float64), axis=-1)

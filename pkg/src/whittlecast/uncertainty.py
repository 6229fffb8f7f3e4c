"""Likelihood-ratio uncertainty score projected into the time domain.

The conditional log-likelihood of a forecast is a single number per
sequence; the window function localizes it per time step. Against the
extremes seen on the training set,

    lambda(n)   = -2 * (w(n) * ll_local(n) - ll_max),       clamped at 0,
    lambda_max  = -2 * (ll_min - ll_max),
    score(n)    = sqrt(lambda(n) / lambda_max),

so a step whose local likelihood is as bad as the worst training sequence
scores exactly 1, better steps score below 1, and worse steps above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateRangeError


@dataclass
class TrainLikelihoodStats:
    """Extreme conditional log-likelihoods observed on the training set."""

    ll_min: float
    ll_max: float

    def __post_init__(self):
        if not self.ll_min <= self.ll_max:
            raise ContractError("ll_min must not exceed ll_max")

    @property
    def lr_max(self) -> float:
        return -2.0 * (self.ll_min - self.ll_max)

    @classmethod
    def from_values(cls, lls) -> "TrainLikelihoodStats":
        lls = np.asarray(lls, dtype=float)
        if lls.size == 0:
            raise ContractError("need at least one training likelihood")
        return cls(ll_min=float(lls.min()), ll_max=float(lls.max()))


def likelihood_ratio(ll_local, stats: TrainLikelihoodStats, window_value) -> np.ndarray:
    """lambda = -2 * (w * ll_local - ll_max), clamped below at zero.

    Likelihoods above the training maximum would give a negative ratio;
    those steps are maximally confident, so the ratio clamps to 0.
    """
    if stats is None:
        raise ContractError("training likelihood stats are required")
    lam = -2.0 * (np.asarray(window_value, dtype=float) * np.asarray(ll_local, dtype=float)
                  - stats.ll_max)
    return np.maximum(lam, 0.0)


def llrs(ll_local, stats: TrainLikelihoodStats, window_value) -> np.ndarray:
    """Square-rooted ratio normalized by the worst training-set ratio."""
    if stats.lr_max <= 0.0:
        raise DegenerateRangeError(
            "all training likelihoods identical; the ratio scale is degenerate")
    lam = likelihood_ratio(ll_local, stats, window_value)
    return np.sqrt(lam / stats.lr_max)


def uncertainty_band(pred, score, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """(lower, upper) envelopes pred -+ scale * score, for plot emission."""
    pred = np.asarray(pred, dtype=float)
    score = np.asarray(score, dtype=float)
    if pred.shape != score.shape:
        raise ContractError("prediction and score curves must align")
    return pred - scale * score, pred + scale * score

"""Stabilized inverse-probability-weighted treatment effects.

The point estimate for the pair (t, s) is the Hajek-normalized contrast

    ate(t, s) = sum_i (w_it / sum_j w_jt - w_is / sum_j w_js) Y_i,
    w_it = 1{T_i = t} / q_t(X_i, theta_hat),

so the weights inside each arm sum to one: adding a constant to Y moves the
estimate by zero and rescaling the weights within an arm changes nothing.

Confidence intervals come from the percentile bootstrap: resample rows with
replacement, refit the propensity model on each resample (warm-started at
the full-sample estimate), recompute the contrast, and read off empirical
quantiles. Resamples where the refit fails (a treatment level missing from
the draw, separation, non-convergence) are dropped and counted; more than
10% of them failing is an error rather than a silently shifted interval.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    DegenerateWeightsError,
    EmptyGroupError,
    NotConvergedError,
    NumericError,
    TooManyFailedResamplesError,
)
from .estimation import fit_mle
from .models import Dataset, PropensityModel
from .rng import resolve_seed, substream

__all__ = ["PROB_FLOOR", "AteResult", "ipw_ate", "percentile_bootstrap", "percentile_bootstrap_pairs"]

logger = logging.getLogger(__name__)

#: fitted probabilities below this are clipped before weighting; finite
#: samples can violate overlap even when the population satisfies it
PROB_FLOOR = 1e-6

#: tag separating resampling draws from other users of a seed
_RESAMPLE_TAG = 2

MAX_DROP_FRACTION = 0.10


@dataclass
class AteResult:
    """Point estimate with a percentile-bootstrap interval."""

    pair: tuple[int, int]
    estimate: float
    se: float
    ci: tuple[float, float]
    B: int
    seed: int
    dropped: int = 0

    def __post_init__(self) -> None:
        if self.ci[0] > self.ci[1]:
            raise DataError(f"interval {self.ci} has lower > upper")


def _floored_probs(model: PropensityModel, X: np.ndarray) -> np.ndarray:
    probs = model.prob(X)
    low = probs < PROB_FLOOR
    count = int(np.count_nonzero(low))
    if count:
        logger.warning(
            "floored %d fitted probabilities below %g before weighting", count, PROB_FLOOR
        )
        probs = np.maximum(probs, PROB_FLOOR)
    return probs


def _hajek_arm(data: Dataset, probs: np.ndarray, t: int) -> float:
    """sum_i w_it Y_i / sum_i w_it with w_it = 1{T_i = t}/q_t(X_i)."""
    mask = data.T == t
    if not mask.any():
        raise EmptyGroupError(f"no observations at treatment level {t}")
    w = mask / probs[:, t]
    total = float(w.sum())
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateWeightsError(f"weights at level {t} sum to {total}")
    return float(w @ data.Y) / total


def ipw_ate(data: Dataset, family: str, theta_hat: np.ndarray, t: int, s: int) -> float:
    """Stabilized IPW contrast of treatment levels t and s."""
    if data.Y is None:
        raise DataError("ipw_ate needs an outcome column Y")
    for level in (t, s):
        if not 0 <= level <= data.J:
            raise DataError(f"treatment level {level} outside 0..{data.J}")
    model = PropensityModel(family, np.asarray(theta_hat, dtype=float), data.J)
    probs = _floored_probs(model, data.X)
    return _hajek_arm(data, probs, t) - _hajek_arm(data, probs, s)


def percentile_bootstrap_pairs(
    data: Dataset,
    family: str,
    pairs: list[tuple[int, int]],
    B: int = 499,
    alpha: float = 0.05,
    seed: int | None = None,
) -> list[AteResult]:
    """Percentile-bootstrap intervals for several level pairs at once.

    All pairs share the same resamples and the same refits, so the per-pair
    marginal cost is one weighted average. Replicate b draws its row indices
    from the substream (seed, 2, b); results do not depend on evaluation
    order.
    """
    if data.Y is None:
        raise DataError("percentile_bootstrap needs an outcome column Y")
    if B < 1:
        raise DataError(f"need B >= 1 resamples, got {B}")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    if not pairs:
        raise DataError("need at least one treatment-level pair")
    seed = resolve_seed(seed)
    fit = fit_mle(family, data)
    estimates = [ipw_ate(data, family, fit.theta_hat, t, s) for t, s in pairs]
    n = data.n
    boot: list[list[float]] = [[] for _ in pairs]
    dropped = 0
    for b in range(B):
        rng = substream(seed, _RESAMPLE_TAG, b)
        idx = rng.integers(0, n, size=n)
        sample = Dataset(data.X[idx], data.T[idx], data.Y[idx], J=data.J)
        try:
            refit = fit_mle(family, sample, init=fit.theta_hat)
            values = [ipw_ate(sample, family, refit.theta_hat, t, s) for t, s in pairs]
        except (DataError, NumericError, NotConvergedError):
            dropped += 1
            continue
        for k, value in enumerate(values):
            boot[k].append(value)
    if dropped > MAX_DROP_FRACTION * B:
        raise TooManyFailedResamplesError(
            f"{dropped} of {B} bootstrap refits failed (limit {MAX_DROP_FRACTION:.0%})"
        )
    results = []
    for (t, s), estimate, draws in zip(pairs, estimates, boot):
        arr = np.asarray(draws)
        lower, upper = np.quantile(arr, [alpha / 2.0, 1.0 - alpha / 2.0])
        se = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        results.append(
            AteResult(
                pair=(t, s),
                estimate=estimate,
                se=se,
                ci=(float(lower), float(upper)),
                B=B,
                seed=seed,
                dropped=dropped,
            )
        )
    return results


def percentile_bootstrap(
    data: Dataset,
    family: str,
    pair: tuple[int, int],
    B: int = 499,
    alpha: float = 0.05,
    seed: int | None = None,
) -> AteResult:
    """Percentile-bootstrap interval for one pair of treatment levels."""
    return percentile_bootstrap_pairs(data, family, [tuple(pair)], B=B, alpha=alpha, seed=seed)[0]

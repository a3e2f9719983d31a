"""Single-projection comparison tests.

These are the natural competitors to the double-projection statistic: the
residual at each level is marked by an indicator in the FITTED propensity
(one-dimensional, so no direction beta is integrated out), orthogonalized
against the score span exactly like the indicator class in dptest:

    P_n 1(u(X) <= u) = 1(u(X) <= u) - g_t(X)' Delta_t^{-1} Gbar_t(u),
    Gbar_t(u) = (1/n) sum_i g_t(X_i) 1(u(X_i) <= u),

    stat = sum_t (1/n) sum_i R_t(u(X_i))^2,
    R_t(u) = n^{-1/2} sum_j e_j(t) P_n 1(u(X_j) <= u).

Variants differ only in the indicator argument:

    binary               1(q1(X_j) <= q1(X_i)), one level t = 1
    multinomial_joint    product over s = 1..J of 1(q_s(X_j) <= q_s(X_i)),
                         the same matrix for every residual level
    multinomial_marginal 1(q_t(X_j) <= q_t(X_i)), own level only
    ordered              1(P(T<=t|X_j) <= P(T<=t|X_i)), cumulative
                         residuals, levels t = 0..J-1

Because these tests condition on one (or J) fitted directions instead of
all of them, they are consistent only against alternatives that show up in
those directions; the simulations exercise exactly that gap.

The bootstrap reuses the multiplier scheme of dptest with the projected
indicator weights held fixed, so for a shared seed the two tests see the
same multiplier draws, replicate by replicate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dptest import (
    DELTA_COND_LIMIT,
    TestResult,
    _critical_values,
    _multiplier_matrix,
    _pvalue,
    active_score_columns,
)
from .errors import DataError, SingularDeltaError
from .models import Dataset, PropensityModel
from .rng import resolve_seed

__all__ = ["FAMILY_BASELINES", "KIND_VARIANTS", "SpTestSpec", "sp_statistic", "sp_bootstrap"]

_VARIANTS = ("binary", "multinomial_joint", "multinomial_marginal", "ordered")

_VARIANT_FAMILIES = {
    "binary": ("binary_logit", "binary_probit"),
    "multinomial_joint": ("multinomial_logit",),
    "multinomial_marginal": ("multinomial_logit",),
    "ordered": ("ordered_logit",),
}

_VARIANT_KINDS = {
    "binary": "spro",
    "multinomial_joint": "spro1",
    "multinomial_marginal": "spro2",
    "ordered": "spro-o",
}

#: short statistic labels, e.g. for report columns, keyed back to variants
KIND_VARIANTS = {kind: variant for variant, kind in _VARIANT_KINDS.items()}

#: which single-projection statistics apply to each model family
FAMILY_BASELINES = {
    "binary_logit": ("spro",),
    "binary_probit": ("spro",),
    "multinomial_logit": ("spro1", "spro2"),
    "ordered_logit": ("spro-o",),
}


@dataclass
class SpTestSpec:
    """Which single-projection variant to run, and its bootstrap knobs."""

    variant: str
    levels: tuple[int, ...] | None = None
    B: int = 999
    seed: int | None = None
    law: str = "mammen"

    def __post_init__(self) -> None:
        if self.variant not in _VARIANTS:
            raise DataError(
                f"unknown variant {self.variant!r}; expected one of {_VARIANTS}"
            )
        if self.levels is not None:
            self.levels = tuple(int(t) for t in self.levels)


def _check_family(spec: SpTestSpec, family: str) -> None:
    allowed = _VARIANT_FAMILIES[spec.variant]
    if family not in allowed:
        raise DataError(
            f"variant {spec.variant!r} applies to {allowed}, not {family!r}"
        )


def _default_levels(variant: str, J: int) -> tuple[int, ...]:
    if variant == "binary":
        return (1,)
    if variant == "ordered":
        return tuple(range(J))
    return tuple(range(1, J + 1))


def _indicator(u: np.ndarray) -> np.ndarray:
    """Ind[j, i] = 1(u_j <= u_i); ties count, in both directions."""
    return (u[:, None] <= u[None, :]).astype(float)


def _sp_parts(
    model: PropensityModel, data: Dataset, spec: SpTestSpec
) -> tuple[tuple[int, ...], list[np.ndarray], list[np.ndarray]]:
    """Per level: raw residuals e_t and projected-indicator weights W_t,
    with W_t[j, i] = 1(u_j <= u_i) - g_t(X_j)' Delta_t^{-1} Gbar_t(u_i)."""
    n = data.n
    levels = spec.levels if spec.levels is not None else _default_levels(spec.variant, data.J)
    if spec.variant == "multinomial_joint":
        probs = model.prob(data.X)
        shared = np.ones((n, n))
        for s in range(1, data.J + 1):
            shared *= _indicator(probs[:, s])
    elif spec.variant == "multinomial_marginal":
        probs = model.prob(data.X)
    elif spec.variant == "ordered":
        cumuls = model.cumulative(data.X)
    else:
        q1 = model.prob(data.X)[:, 1]

    residuals = []
    weights = []
    for t in levels:
        if spec.variant == "multinomial_joint":
            ind = shared
        elif spec.variant == "multinomial_marginal":
            ind = _indicator(probs[:, t])
        elif spec.variant == "ordered":
            ind = _indicator(cumuls[:, t])
        else:
            ind = _indicator(q1)
        g = active_score_columns(model.score(data.X, t), t)
        e = model.residual(data.T, data.X, t)
        delta = g.T @ g / n
        cond = float(np.linalg.cond(delta))
        if not np.isfinite(cond) or cond > DELTA_COND_LIMIT:
            raise SingularDeltaError(
                f"Delta at level {t} has condition estimate {cond:.3e}"
            )
        try:
            chol = cho_factor(delta, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularDeltaError(f"Delta at level {t} is not positive definite") from exc
        gbar = g.T @ ind / n
        residuals.append(e)
        weights.append(ind - g @ cho_solve(chol, gbar))
    return tuple(levels), residuals, weights


def _statistic(n: int, residuals: list[np.ndarray], weights: list[np.ndarray]) -> float:
    total = 0.0
    for e, w in zip(residuals, weights):
        v = e @ w
        total += float(v @ v)
    return total / (n * n)


def sp_statistic(
    family: str, theta_hat: np.ndarray, data: Dataset, spec: SpTestSpec
) -> float:
    """The single-projection statistic for a fitted model."""
    _check_family(spec, family)
    model = PropensityModel(family, np.asarray(theta_hat, dtype=float), data.J)
    levels, residuals, weights = _sp_parts(model, data, spec)
    return _statistic(data.n, residuals, weights)


def sp_bootstrap(
    family: str, theta_hat: np.ndarray, data: Dataset, spec: SpTestSpec
) -> TestResult:
    """Multiplier bootstrap of the single-projection statistic.

    Replicate b rescales the raw residuals by the multiplier vector V_b and
    re-evaluates the statistic with the projected indicator weights fixed:

        stat*_b = sum_t ||(V_b o e_t)' W_t||^2 / n^2 = V_b' K V_b / n^2,
        K = sum_t (e_t e_t') o (W_t W_t'),

    the same collapsed quadratic form used by the double-projection
    bootstrap, so the marginal cost per replicate is one vector product.
    """
    _check_family(spec, family)
    if spec.B < 1:
        raise DataError(f"need B >= 1 bootstrap replicates, got {spec.B}")
    seed = resolve_seed(spec.seed)
    model = PropensityModel(family, np.asarray(theta_hat, dtype=float), data.J)
    levels, residuals, weights = _sp_parts(model, data, spec)
    n = data.n
    stat = _statistic(n, residuals, weights)
    K = np.zeros((n, n))
    for e, w in zip(residuals, weights):
        K += (w @ w.T) * np.outer(e, e)
    V = _multiplier_matrix(spec.B, n, spec.law, seed)
    boot = np.einsum("bi,bi->b", V @ K, V) / (n * n)
    return TestResult(
        kind=_VARIANT_KINDS[spec.variant],
        statistic=stat,
        p_value=_pvalue(stat, boot),
        critical_values=_critical_values(boot),
        boot_stats=boot,
        B=spec.B,
        seed=seed,
        multiplier_law=spec.law,
        levels=levels,
        weights=tuple(1.0 for _ in levels),
        family=family,
        n=n,
        d_x=data.d_x,
    )

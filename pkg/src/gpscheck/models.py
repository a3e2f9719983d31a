"""Parametric generalized propensity score families.

Four families are supported, each mapping a covariate row x and parameter
vector theta to probabilities over treatment levels 0..J:

* ``binary_logit``      P(T=1|x) = L(x'theta), J = 1
* ``binary_probit``     P(T=1|x) = Phi(x'theta), J = 1
* ``multinomial_logit`` P(T=t|x) = exp(x'theta_t) / sum_s exp(x'theta_s),
                        reference level 0 with theta_0 = 0
* ``ordered_logit``     P(T<=t|x) = L(alpha_t - x'delta), proportional odds

where L is the logistic CDF and Phi the standard normal CDF. The parameter
layout is flat: binary theta has one coefficient per covariate column;
multinomial theta stacks J per-level blocks; ordered theta is the J
cutpoints followed by the common slope vector.

Every family exposes level probabilities, analytic scores (the gradient of
the level or cumulative probability with respect to the full theta) and
generalized residuals, all vectorized over rows of X.

Linear indices are clamped to [-INDEX_CLAMP, INDEX_CLAMP] before link
evaluation. Within the clamp every probability stays strictly positive in
double precision (complements are evaluated through the link at -eta, never
as 1 - p), which is what logs and inverse weights downstream require. The
logistic link also stays strictly below one; the normal CDF rounds to 1.0
past eta ~ 8.3, which is harmless on that side. Scores are the analytic
derivatives evaluated at the clamped index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr

from .errors import DataError

__all__ = [
    "FAMILIES",
    "INDEX_CLAMP",
    "Dataset",
    "LevelSet",
    "PropensityModel",
]

FAMILIES = ("binary_logit", "binary_probit", "multinomial_logit", "ordered_logit")

# Bound on linear indices before link evaluation. expit(-35) ~ 6.3e-16 and
# ndtr(-35) ~ 1.1e-268 are both strictly positive doubles, so clamped
# probabilities never underflow to zero.
INDEX_CLAMP = 35.0

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def clamp_index(eta: np.ndarray) -> np.ndarray:
    return np.clip(eta, -INDEX_CLAMP, INDEX_CLAMP)


def logistic_density(z: np.ndarray) -> np.ndarray:
    # L(z)(1 - L(z)), written as a product of expits for stability
    return expit(z) * expit(-z)


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / _SQRT_2PI


@dataclass
class Dataset:
    """A sample of covariates, integer treatment levels and optional outcome.

    X includes an explicit intercept column when the model demands one
    (binary and multinomial designs); the ordered family absorbs the
    location into its cutpoints and expects no constant column.
    """

    X: np.ndarray
    T: np.ndarray
    Y: np.ndarray | None = None
    J: int | None = None

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        if X.ndim != 2:
            raise DataError(f"X must be a 2-d matrix, got ndim={X.ndim}")
        if not np.all(np.isfinite(X)):
            bad = np.argwhere(~np.isfinite(X))[0]
            raise DataError(f"X has a non-finite entry at row {bad[0]}, column {bad[1]}")
        T_raw = np.asarray(self.T)
        if T_raw.ndim != 1 or T_raw.shape[0] != X.shape[0]:
            raise DataError("T must be a vector with one entry per row of X")
        T = np.asarray(T_raw, dtype=float)
        if not np.all(np.isfinite(T)) or np.any(T != np.floor(T)):
            bad = int(np.flatnonzero(~np.isfinite(T) | (T != np.floor(T)))[0])
            raise DataError(f"treatment values must be integers; row {bad} has {T_raw[bad]!r}")
        T = T.astype(np.int64)
        if T.min(initial=0) < 0:
            raise DataError("treatment levels must be non-negative integers")
        J = int(T.max()) if self.J is None else int(self.J)
        if J < 1:
            raise DataError("need at least two treatment levels (J >= 1)")
        if T.max(initial=0) > J:
            raise DataError(f"treatment level {int(T.max())} exceeds J={J}")
        if X.shape[0] < X.shape[1] + 1:
            raise DataError(
                f"need n >= d_x + 1 observations, got n={X.shape[0]}, d_x={X.shape[1]}"
            )
        if self.Y is not None:
            Y = np.asarray(self.Y, dtype=float)
            if Y.shape != (X.shape[0],):
                raise DataError("Y must be a vector with one entry per row of X")
            if not np.all(np.isfinite(Y)):
                bad = int(np.flatnonzero(~np.isfinite(Y))[0])
                raise DataError(f"Y has a non-finite entry at row {bad}")
            self.Y = Y
        self.X = X
        self.T = T
        self.J = J

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    def levels_present(self) -> bool:
        """True when every level 0..J occurs at least once."""
        return np.array_equal(np.unique(self.T), np.arange(self.J + 1))


@dataclass(frozen=True)
class LevelSet:
    """Treatment levels entering the statistic with non-negative weights a(t)."""

    levels: tuple[int, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        levels = tuple(int(t) for t in self.levels)
        if not levels:
            raise DataError("LevelSet needs at least one level")
        if len(set(levels)) != len(levels):
            raise DataError("LevelSet levels must be distinct")
        weights = tuple(float(w) for w in self.weights) or (1.0,) * len(levels)
        if len(weights) != len(levels):
            raise DataError("LevelSet weights must match levels")
        if min(weights) < 0.0 or sum(weights) <= 0.0:
            raise DataError("LevelSet weights must be non-negative with positive sum")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def default_for(cls, family: str, J: int, include_reference: bool = False) -> "LevelSet":
        """Default level sets: {1} for binary, {1..J} for multinomial
        (optionally with the reference level 0), cumulative {0..J-1} for
        ordered. Weights are constant one."""
        if family in ("binary_logit", "binary_probit"):
            levels: tuple[int, ...] = (1,)
        elif family == "multinomial_logit":
            levels = tuple(range(0 if include_reference else 1, J + 1))
        elif family == "ordered_logit":
            levels = tuple(range(J))
        else:
            raise DataError(f"unknown family {family!r}")
        return cls(levels)


@dataclass
class PropensityModel:
    """A family name plus a parameter vector, ready to evaluate.

    residual_kind is derived from the family: 'cumulative' for
    ordered_logit (e(t) = 1(T<=t) - P(T<=t|x)) and 'level' otherwise
    (e(t) = 1(T=t) - q_t(x)).
    """

    family: str
    theta: np.ndarray
    J: int = 1
    residual_kind: str = field(default="", repr=False)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        theta = np.asarray(self.theta, dtype=float).ravel()
        if not np.all(np.isfinite(theta)):
            raise DataError("theta has non-finite entries")
        self.theta = theta
        self.J = int(self.J)
        if self.family.startswith("binary"):
            if self.J != 1:
                raise DataError("binary families require J = 1")
        elif self.J < 1:
            raise DataError("J must be at least 1")
        if self.family == "multinomial_logit" and theta.size % self.J != 0:
            raise DataError(
                f"multinomial theta length {theta.size} is not divisible by J={self.J}"
            )
        if self.family == "ordered_logit":
            if theta.size <= self.J:
                raise DataError("ordered theta must hold J cutpoints plus slopes")
            alpha = theta[: self.J]
            if np.any(np.diff(alpha) <= 0.0):
                raise DataError(f"cutpoints must be strictly increasing, got {alpha}")
        if not self.residual_kind:
            self.residual_kind = "cumulative" if self.family == "ordered_logit" else "level"
        if self.residual_kind not in ("level", "cumulative"):
            raise DataError(f"unknown residual_kind {self.residual_kind!r}")
        if self.residual_kind == "cumulative" and self.family != "ordered_logit":
            raise DataError("cumulative residuals are only defined for ordered_logit")

    # -- parameter layout -------------------------------------------------

    @property
    def n_params(self) -> int:
        return self.theta.size

    def n_covariates(self) -> int:
        if self.family == "multinomial_logit":
            return self.theta.size // self.J
        if self.family == "ordered_logit":
            return self.theta.size - self.J
        return self.theta.size

    def _as_rows(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        X = np.asarray(x, dtype=float)
        squeeze = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_covariates():
            raise DataError(
                f"covariate row length {X.shape[1]} does not match model "
                f"dimension {self.n_covariates()}"
            )
        return X, squeeze

    # -- probabilities -----------------------------------------------------

    def prob(self, x: np.ndarray) -> np.ndarray:
        """Probabilities of all J+1 levels; shape (J+1,) for a single row,
        (n, J+1) for a matrix."""
        X, squeeze = self._as_rows(x)
        if self.family in ("binary_logit", "binary_probit"):
            eta = clamp_index(X @ self.theta)
            # evaluate the complement through the link at -eta; 1 - p1
            # rounds to exactly zero once eta passes ~8 for the probit
            link = expit if self.family == "binary_logit" else ndtr
            out = np.column_stack([link(-eta), link(eta)])
        elif self.family == "multinomial_logit":
            out = self._multinomial_prob(X)
        else:
            out = self._ordered_level_prob(X)
        return out[0] if squeeze else out

    def cumulative(self, x: np.ndarray) -> np.ndarray:
        """P(T<=t|x) for t = 0..J-1 (ordered_logit only)."""
        if self.family != "ordered_logit":
            raise DataError("cumulative probabilities are only defined for ordered_logit")
        X, squeeze = self._as_rows(x)
        C = self._ordered_index(X)
        out = expit(C)
        return out[0] if squeeze else out

    def _multinomial_prob(self, X: np.ndarray) -> np.ndarray:
        d = self.n_covariates()
        blocks = self.theta.reshape(self.J, d)
        H = clamp_index(X @ blocks.T)
        M = np.column_stack([np.zeros(X.shape[0]), H])
        M -= M.max(axis=1, keepdims=True)
        np.exp(M, out=M)
        M /= M.sum(axis=1, keepdims=True)
        return M

    def _ordered_index(self, X: np.ndarray) -> np.ndarray:
        alpha = self.theta[: self.J]
        delta = self.theta[self.J:]
        eta = clamp_index(X @ delta)
        return alpha[np.newaxis, :] - eta[:, np.newaxis]

    def _ordered_level_prob(self, X: np.ndarray) -> np.ndarray:
        # Adjacent differences of logistic CDFs computed via
        #   L(b) - L(a) = L(a) L(-b) (exp(b - a) - 1),   b > a,
        # which stays positive in floating point for strictly increasing
        # cutpoints instead of cancelling to zero in the tails.
        C = self._ordered_index(X)
        n = X.shape[0]
        out = np.empty((n, self.J + 1))
        out[:, 0] = expit(C[:, 0])
        for t in range(1, self.J):
            a = C[:, t - 1]
            b = C[:, t]
            out[:, t] = expit(a) * expit(-b) * np.expm1(b - a)
        out[:, self.J] = expit(-C[:, self.J - 1])
        return out

    # -- scores ------------------------------------------------------------

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        """Gradient of the level-t probability (or cumulative probability
        for the ordered family) with respect to the full theta."""
        X, squeeze = self._as_rows(x)
        t = int(t)
        if self.family in ("binary_logit", "binary_probit"):
            if t not in (0, 1):
                raise DataError(f"binary level must be 0 or 1, got {t}")
            eta = clamp_index(X @ self.theta)
            dens = logistic_density(eta) if self.family == "binary_logit" else _norm_pdf(eta)
            G = dens[:, np.newaxis] * X
            if t == 0:
                G = -G
        elif self.family == "multinomial_logit":
            if not 0 <= t <= self.J:
                raise DataError(f"level must be in 0..{self.J}, got {t}")
            P = self._multinomial_prob(X)
            qt = P[:, t]
            cols = []
            for s in range(1, self.J + 1):
                coef = qt * ((1.0 if s == t else 0.0) - P[:, s])
                cols.append(coef[:, np.newaxis] * X)
            G = np.hstack(cols)
        else:
            if not 0 <= t <= self.J - 1:
                raise DataError(f"cumulative level must be in 0..{self.J - 1}, got {t}")
            C = self._ordered_index(X)
            lam = logistic_density(C[:, t])
            G = np.zeros((X.shape[0], self.n_params))
            G[:, t] = lam
            G[:, self.J:] = -lam[:, np.newaxis] * X
        return G[0] if squeeze else G

    # -- residuals -----------------------------------------------------------

    def residual(self, t_obs: np.ndarray, x: np.ndarray, t: int) -> np.ndarray:
        """Generalized residual e(t) per observation.

        level kind: 1(t_obs = t) - q_t(x); cumulative kind:
        1(t_obs <= t) - P(T<=t|x).
        """
        X, squeeze = self._as_rows(x)
        T = np.atleast_1d(np.asarray(t_obs, dtype=np.int64))
        if T.shape[0] != X.shape[0]:
            raise DataError("t_obs must have one entry per covariate row")
        t = int(t)
        if self.residual_kind == "level":
            e = (T == t).astype(float) - self.prob(X)[:, t]
        else:
            if not 0 <= t <= self.J - 1:
                raise DataError(f"cumulative level must be in 0..{self.J - 1}, got {t}")
            e = (T <= t).astype(float) - self.cumulative(X)[:, t]
        return e[0] if squeeze else e

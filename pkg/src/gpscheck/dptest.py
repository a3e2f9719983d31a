"""Double-projection specification test for generalized propensity scores.

The statistic aggregates, over the chosen treatment levels t, quadratic
forms of projected residuals in the solid-angle kernel A_n:

    CvM = sum_t a(t) * (1/n^2) * e_pro_t' A_n e_pro_t,

where the projected residual removes the component of the raw residual
explained by the score,

    e_pro_i(t) = e_i(t) - g_t(X_i)' Delta_t^{-1} (1/n) sum_s g_t(X_s) e_s(t),
    Delta_t    = (1/n) sum_i g_t(X_i) g_t(X_i)'.

Critical values come from a multiplier bootstrap: each replicate rescales
the raw residuals by i.i.d. mean-zero unit-variance multipliers V, then
re-applies the same projection and the same kernel. Nothing is refit and
the kernel is built once. Writing the projection as the symmetric matrix
P_t = I - G_t Delta_t^{-1} G_t'/n, replicate b evaluates

    sum_t a(t) (V_b o e_t)' P_t A_n P_t (V_b o e_t) / n^2
        = V_b' K V_b / n^2,   K = sum_t a(t) (e_t e_t') o (P_t A_n P_t),

so the whole bootstrap is one matrix product against the precomputed K.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import sqrt

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError, SingularDeltaError
from .estimation import FitResult, fit_mle
from .geometry import ProjectionKernel, an_matrix
from .models import Dataset, LevelSet, PropensityModel
from .rng import resolve_seed, substream

__all__ = [
    "MAMMEN_KAPPA",
    "ProjectedResiduals",
    "TestConfig",
    "TestResult",
    "active_score_columns",
    "cvm_statistic",
    "draw_multipliers",
    "kernel_covariates",
    "multiplier_bootstrap",
    "projected_residuals",
    "run_test",
]

MAMMEN_KAPPA = (sqrt(5.0) + 1.0) / 2.0
_MAMMEN_P_LOW = MAMMEN_KAPPA / sqrt(5.0)  # P(V = 1 - kappa) ~ 0.7236
_LAWS = ("mammen", "rademacher")

#: tag separating the bootstrap multiplier stream from other users of a seed
_MULTIPLIER_TAG = 1

DELTA_COND_LIMIT = 1e12

CRITICAL_ALPHAS = (0.10, 0.05, 0.01)


@dataclass
class ProjectedResiduals:
    """Raw and projected residuals with the per-level score geometry."""

    levels: tuple[int, ...]
    e: np.ndarray  # (L, n) raw residuals
    e_pro: np.ndarray  # (L, n) projected residuals
    gmats: tuple[np.ndarray, ...]  # per level (n, q) score matrices
    deltas: tuple[np.ndarray, ...]  # per level (q, q) Delta_{n,t}
    delta_cond: tuple[float, ...]
    _chols: tuple = field(repr=False, default=())

    @property
    def n(self) -> int:
        return self.e.shape[1]


@dataclass
class TestResult:
    """A statistic with its bootstrap reference distribution."""

    __test__ = False  # keep pytest from collecting the Test* name

    kind: str
    statistic: float
    p_value: float
    critical_values: dict[float, float]
    boot_stats: np.ndarray
    B: int
    seed: int
    multiplier_law: str
    levels: tuple[int, ...]
    weights: tuple[float, ...]
    family: str
    n: int
    d_x: int
    delta_cond: tuple[float, ...] = ()
    fit: FitResult | None = None


@dataclass
class TestConfig:
    """Options for run_test; defaults follow the reference simulation
    settings (B = 999 Mammen multiplier draws, constant unit weights)."""

    __test__ = False

    levels: tuple[int, ...] | None = None
    weights: tuple[float, ...] | None = None
    B: int = 999
    seed: int | None = None
    law: str = "mammen"
    dup_tol: float = 1e-12
    include_reference: bool = False
    theta: np.ndarray | None = None
    tol: float = 1e-8
    max_iter: int = 100
    kernel: ProjectionKernel | None = None
    kernel_X: np.ndarray | None = None
    workers: int = 1


def active_score_columns(g: np.ndarray, t: int) -> np.ndarray:
    """Drop score coordinates that are identically zero.

    A cumulative-model score at level t is exactly zero in every other
    cutpoint coordinate, which would make Delta_t singular by construction;
    a zero column spans nothing, so removing it leaves the projection
    unchanged.
    """
    keep = np.any(g != 0.0, axis=0)
    if not keep.any():
        raise SingularDeltaError(f"score at level {t} is identically zero")
    return g if keep.all() else g[:, keep]


def projected_residuals(
    model: PropensityModel, data: Dataset, levels: LevelSet | tuple[int, ...]
) -> ProjectedResiduals:
    """Residuals orthogonalized against the score span, level by level.

    Delta_t is solved through its Cholesky factorization with one step of
    iterative refinement; the explicit inverse is never formed.
    """
    level_set = levels if isinstance(levels, LevelSet) else LevelSet(tuple(levels))
    n = data.n
    e_rows = []
    pro_rows = []
    gmats = []
    deltas = []
    conds = []
    chols = []
    for t in level_set.levels:
        g = active_score_columns(model.score(data.X, t), t)
        e = model.residual(data.T, data.X, t)
        delta = g.T @ g / n
        cond = float(np.linalg.cond(delta))
        if not np.isfinite(cond) or cond > DELTA_COND_LIMIT:
            raise SingularDeltaError(
                f"Delta at level {t} has condition estimate {cond:.3e}; "
                "scores are collinear (duplicated or constant columns?)"
            )
        try:
            chol = cho_factor(delta, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularDeltaError(f"Delta at level {t} is not positive definite") from exc
        b = g.T @ e / n
        c = cho_solve(chol, b)
        c += cho_solve(chol, b - delta @ c)
        e_rows.append(e)
        pro_rows.append(e - g @ c)
        gmats.append(g)
        deltas.append(delta)
        conds.append(cond)
        chols.append(chol)
    return ProjectedResiduals(
        levels=level_set.levels,
        e=np.asarray(e_rows),
        e_pro=np.asarray(pro_rows),
        gmats=tuple(gmats),
        deltas=tuple(deltas),
        delta_cond=tuple(conds),
        _chols=tuple(chols),
    )


def _check_weights(pr: ProjectedResiduals, weights: LevelSet | None) -> np.ndarray:
    if weights is None:
        return np.ones(len(pr.levels))
    if tuple(weights.levels) != tuple(pr.levels):
        raise DataError(
            f"weight levels {weights.levels} do not match residual levels {pr.levels}"
        )
    return np.asarray(weights.weights, dtype=float)


def cvm_statistic(
    pr: ProjectedResiduals, kernel: ProjectionKernel, weights: LevelSet | None = None
) -> float:
    """sum_t a(t) e_pro_t' A_n e_pro_t / n^2."""
    if kernel.n != pr.n:
        raise DataError(f"kernel built for n={kernel.n}, residuals have n={pr.n}")
    a = _check_weights(pr, weights)
    total = 0.0
    for w, e_pro in zip(a, pr.e_pro):
        total += w * float(e_pro @ (kernel.A @ e_pro))
    return total / (pr.n * pr.n)


# ---------------------------------------------------------------------------
# multiplier bootstrap
# ---------------------------------------------------------------------------


def _map_uniforms(u: np.ndarray, law: str) -> np.ndarray:
    if law == "mammen":
        # two-point law: 1-kappa with probability kappa/sqrt(5), else kappa;
        # mean 0 and variance 1 because kappa^2 = kappa + 1
        return np.where(u < _MAMMEN_P_LOW, 1.0 - MAMMEN_KAPPA, MAMMEN_KAPPA)
    if law == "rademacher":
        return np.where(u < 0.5, -1.0, 1.0)
    raise DataError(f"unknown multiplier law {law!r}; expected one of {_LAWS}")


def draw_multipliers(n: int, law: str, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. multiplier draws from the given law."""
    if n < 1:
        raise DataError("need n >= 1 multipliers")
    return _map_uniforms(rng.random(n), law)


def _multiplier_matrix(B: int, n: int, law: str, seed: int) -> np.ndarray:
    """All B replicate multiplier vectors, drawn in one pass.

    Replicate b owns row b of the matrix; the rows are a fixed function of
    (seed, b) through the stream position, so results do not depend on how
    replicates are scheduled or batched.
    """
    rng = substream(seed, _MULTIPLIER_TAG)
    return _map_uniforms(rng.random((B, n)), law)


def _projected_kernel(
    pr: ProjectedResiduals, kernel: ProjectionKernel, level_index: int
) -> np.ndarray:
    """P_t A_n P_t without forming P_t, via rank-q updates."""
    U = pr.gmats[level_index]
    chol = pr._chols[level_index]
    n = pr.n
    M1 = cho_solve(chol, U.T @ kernel.A) / n  # Delta^{-1} U'A / n
    CA = U @ M1
    M2 = cho_solve(chol, U.T @ CA.T) / n
    CAC = U @ M2
    return kernel.A - CA - CA.T + CAC


def _quadratic_kernel(
    pr: ProjectedResiduals, kernel: ProjectionKernel, a: np.ndarray
) -> np.ndarray:
    K = np.zeros((pr.n, pr.n))
    for idx, w in enumerate(a):
        if w == 0.0:
            continue
        apro = _projected_kernel(pr, kernel, idx)
        e = pr.e[idx]
        K += w * (apro * np.outer(e, e))
    return K


def _pvalue(stat: float, boot: np.ndarray) -> float:
    return (1.0 + int(np.sum(boot >= stat))) / (boot.size + 1.0)


def _critical_values(boot: np.ndarray) -> dict[float, float]:
    return {
        alpha: float(np.quantile(boot, 1.0 - alpha, method="inverted_cdf"))
        for alpha in CRITICAL_ALPHAS
    }


def multiplier_bootstrap(
    pr: ProjectedResiduals,
    kernel: ProjectionKernel,
    weights: LevelSet | None = None,
    B: int = 999,
    seed: int | None = None,
    law: str = "mammen",
) -> TestResult:
    """Bootstrap the CvM statistic with multiplier-rescaled residuals.

    One multiplier vector per replicate, shared across levels. The kernel,
    the score matrices and the Delta factorizations are reused unchanged;
    no refitting happens here.
    """
    if B < 1:
        raise DataError(f"need B >= 1 bootstrap replicates, got {B}")
    if law not in _LAWS:
        raise DataError(f"unknown multiplier law {law!r}; expected one of {_LAWS}")
    seed = resolve_seed(seed)
    a = _check_weights(pr, weights)
    n = pr.n
    stat = cvm_statistic(pr, kernel, weights)
    K = _quadratic_kernel(pr, kernel, a)
    V = _multiplier_matrix(B, n, law, seed)
    boot = np.einsum("bi,bi->b", V @ K, V) / (n * n)
    return TestResult(
        kind="dpro",
        statistic=stat,
        p_value=_pvalue(stat, boot),
        critical_values=_critical_values(boot),
        boot_stats=boot,
        B=B,
        seed=seed,
        multiplier_law=law,
        levels=pr.levels,
        weights=tuple(float(w) for w in a),
        family="",
        n=n,
        d_x=kernel.d_x,
        delta_cond=pr.delta_cond,
    )


def kernel_covariates(X: np.ndarray) -> np.ndarray:
    """Columns of X that actually vary.

    A constant column (an intercept) contributes zero to every pairwise
    difference, so it only rescales the kernel through the surface-area
    constant; dropping it leaves every p-value unchanged.
    """
    keep = np.ptp(X, axis=0) > 0.0
    if not keep.any():
        raise DataError("all covariate columns are constant; the kernel is undefined")
    return X if keep.all() else X[:, keep]


def default_levels(family: str, J: int, config: TestConfig) -> LevelSet:
    if config.levels is not None:
        weights = tuple(config.weights) if config.weights is not None else ()
        return LevelSet(tuple(config.levels), weights)
    ls = LevelSet.default_for(family, J, include_reference=config.include_reference)
    if config.weights is not None:
        return LevelSet(ls.levels, tuple(config.weights))
    return ls


def run_test(data: Dataset, family: str, config: TestConfig | None = None) -> TestResult:
    """Fit the family (unless a theta is supplied), build the kernel, and
    run the double-projection test end to end."""
    config = config or TestConfig()
    seed = resolve_seed(config.seed)
    if config.theta is not None:
        fit = None
        model = PropensityModel(family, np.asarray(config.theta, dtype=float), data.J)
    else:
        fit = fit_mle(family, data, tol=config.tol, max_iter=config.max_iter)
        model = fit.model()
    levels = default_levels(family, data.J, config)
    kernel = config.kernel
    if kernel is None:
        if config.kernel_X is None:
            kx = kernel_covariates(data.X)
        else:
            kx = np.asarray(config.kernel_X, dtype=float)
            if kx.shape[0] != data.n:
                raise DataError("kernel_X must have one row per observation")
        kernel = an_matrix(kx, dup_tol=config.dup_tol, workers=config.workers)
    elif kernel.n != data.n:
        raise DataError(f"precomputed kernel has n={kernel.n}, data has n={data.n}")
    pr = projected_residuals(model, data, levels)
    result = multiplier_bootstrap(pr, kernel, levels, B=config.B, seed=seed, law=config.law)
    return replace(result, family=family, fit=fit)

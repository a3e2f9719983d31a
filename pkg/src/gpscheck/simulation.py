"""Monte Carlo designs and the experiment runner.

Fifteen designs, five per family. The family under test, the null status,
and the true treatment effects are fixed properties of the design id:

    1-5    binary probit fit; design 1 satisfies the null
    6-10   multinomial logit fit (J = 2); design 6 satisfies the null
    11-15  ordered logit fit (J = 2); design 11 satisfies the null

Within each block the misspecifications escalate: an omitted interaction,
a multi-way interaction, omitted squares, and a heteroskedastic index that
no index model with the assumed link can absorb.

Reproducibility scheme: replicate r of a (design, n) cell derives every
random draw from the key (master_seed, design id, n, r), split into one
child seed each for data generation, the test bootstrap, and the effect
bootstrap. Replicates are therefore independent of scheduling and can run
in any order or on any number of workers with identical output; per-cell
aggregation always walks replicates in index order and uses compensated
summation, so reports are bit-identical across parallelism settings.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .baselines import KIND_VARIANTS, SpTestSpec, sp_bootstrap
from .dptest import kernel_covariates, multiplier_bootstrap, projected_residuals
from .effects import percentile_bootstrap_pairs
from .errors import (
    DataError,
    GpscheckError,
    TooManyFailedResamplesError,
)
from .estimation import fit_mle
from .geometry import an_matrix
from .models import Dataset, LevelSet
from .rng import child_seeds, resolve_seed, substream

__all__ = [
    "DGP_IDS",
    "H0_IDS",
    "DgpSpec",
    "SimulatedSample",
    "SimulationReport",
    "CellResult",
    "FAMILY_KINDS",
    "generate",
    "run_experiment",
]

DGP_IDS = tuple(range(1, 16))
H0_IDS = (1, 6, 11)

_SQRT2 = math.sqrt(2.0)
_ORDERED_SCALE = math.pi / math.sqrt(3.0)

# Cholesky factor of [[2, 1, -1], [1, 1, -0.5], [-1, -0.5, 1]]; closed form,
# so the draw is identical on every platform
_TRIVARIATE_CHOL = np.array(
    [
        [_SQRT2, 0.0, 0.0],
        [1.0 / _SQRT2, 1.0 / _SQRT2, 0.0],
        [-1.0 / _SQRT2, 0.0, 1.0 / _SQRT2],
    ]
)

_MULTI_BETA0 = np.array([-6.0, -6.0, -6.0, 6.0, 6.0, 6.0])
_MULTI_BETA2 = np.full(6, 4.0)
_ORDERED_BETA0 = np.array([-4.0] * 5 + [4.0] * 5)
_ORDERED_BETA2 = np.full(10, 3.0)

_THREE_ARM_PAIRS = ((1, 0), (2, 0), (2, 1))
_THREE_ARM_ATES = {(1, 0): 1.0, (2, 0): 2.0, (2, 1): 1.0}

#: statistics the runner knows how to score for each fitted family
FAMILY_KINDS = {
    "binary_probit": ("dpro", "spro"),
    "multinomial_logit": ("dpro", "spro1", "spro2"),
    "ordered_logit": ("dpro", "spro-o"),
}


def family_for(dgp: int) -> str:
    if 1 <= dgp <= 5:
        return "binary_probit"
    if 6 <= dgp <= 10:
        return "multinomial_logit"
    if 11 <= dgp <= 15:
        return "ordered_logit"
    raise DataError(f"unknown design id {dgp}; expected 1..15")


@dataclass(frozen=True)
class DgpSpec:
    """One cell of the study: a design id and a sample size."""

    id: int
    n: int

    def __post_init__(self) -> None:
        family_for(self.id)
        if self.n < 50:
            raise DataError(f"need n >= 50, got {self.n}")

    @property
    def family(self) -> str:
        return family_for(self.id)

    @property
    def h0(self) -> bool:
        return self.id in H0_IDS

    @property
    def true_ates(self) -> dict[tuple[int, int], float]:
        if self.family == "binary_probit":
            return {(1, 0): 1.0}
        return dict(_THREE_ARM_ATES)


@dataclass
class SimulatedSample:
    """A generated dataset plus everything the runner needs to score it."""

    dgp: int
    data: Dataset
    family: str
    h0: bool
    true_ates: dict[tuple[int, int], float]


def _ten_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    """X1 = Z1, X2 = (Z1 + Z2)/sqrt(2), Xk = Zk for k = 3..10."""
    z = rng.standard_normal((n, 10))
    x = z.copy()
    x[:, 1] = (z[:, 0] + z[:, 1]) / _SQRT2
    return x


def _six_covariates(rng: np.random.Generator, n: int) -> np.ndarray:
    """Correlated trivariate normal block, then uniform, chi-square,
    Bernoulli; drawn in that fixed order."""
    x123 = rng.standard_normal((n, 3)) @ _TRIVARIATE_CHOL.T
    x4 = rng.uniform(-3.0, 3.0, n)
    x5 = rng.chisquare(1.0, n)
    x6 = (rng.random(n) < 0.5).astype(float)
    return np.column_stack([x123, x4, x5, x6])


def _binary_index(dgp: int, x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1)
    if dgp == 1:
        return -s / 6.0
    if dgp == 2:
        return -1.0 - s / 10.0 + x[:, 0] * x[:, 1] / 2.0
    if dgp == 3:
        return -1.0 - s / 10.0 + x[:, 0] * x[:, 1:5].sum(axis=1) / 4.0
    if dgp == 4:
        return -1.5 - s / 6.0 + np.square(x).sum(axis=1) / 10.0
    return (-0.1 + 0.1 * x[:, :5].sum(axis=1)) / np.exp(-0.2 * s)


def _multinomial_logits(dgp: int, x: np.ndarray) -> np.ndarray:
    s = x.sum(axis=1)
    x1, x2, x3, x4, x5, x6 = (x[:, k] for k in range(6))
    if dgp == 6:
        phi1 = -1.0 + 0.4 * s
        phi2 = -1.0 + 0.2 * s
    elif dgp == 7:
        phi1 = -0.2 * s + x1 * x6
        phi2 = -0.1 * s + x1 * x4
    elif dgp == 8:
        phi1 = 0.3 * s
        phi2 = -0.5 + 0.1 * np.square(x).sum(axis=1)
    elif dgp == 9:
        phi1 = -0.1 + s / 5.0 + x6 * (x1 + x2 + x3) / 2.0
        phi2 = -0.3 * s - x6 * (x4 + x5) / 2.0
    else:
        phi1 = np.sin(s) + (x1 + x2 + x3)
        phi2 = 2.0 * np.sin(s) + 0.5 * (x1 + x2 + x3)
    return np.column_stack([np.zeros_like(s), phi1, phi2])


def _ordered_parts(dgp: int, x: np.ndarray):
    s = x.sum(axis=1)
    gamma = np.ones_like(s)
    if dgp == 11:
        phi = -s / 8.0
        alphas = (-1.0, 0.5)
    elif dgp == 12:
        phi = s / 10.0 - x[:, 0] * x[:, 1]
        alphas = (-1.2, 0.0)
    elif dgp == 13:
        phi = -s / 10.0 + x[:, 0] * x[:, 1:5].sum(axis=1) / 2.0
        alphas = (0.0, 1.5)
    elif dgp == 14:
        phi = -s / 6.0 + np.square(x).sum(axis=1) / 10.0
        alphas = (0.0, 1.5)
    else:
        phi = 0.1 * x[:, :5].sum(axis=1)
        gamma = np.exp(-0.2 * s)
        alphas = (-0.5, 1.0)
    return phi, gamma, alphas


def _pick_observed(rng: np.random.Generator, cumulative: np.ndarray, ys: np.ndarray):
    """Sample T by inverting the cumulative distribution (strict >, so a
    uniform draw exactly on a boundary takes the lower level), then read
    off the matching potential outcome."""
    n = cumulative.shape[0]
    u = rng.random(n)
    T = np.zeros(n, dtype=np.int64)
    for col in range(cumulative.shape[1]):
        T += u > cumulative[:, col]
    Y = ys[np.arange(n), T]
    return T, Y


def generate(spec: DgpSpec, rng: np.random.Generator) -> SimulatedSample:
    """Draw one dataset from a design.

    Draw order is part of the reproducibility contract: covariates first
    (column blocks in their displayed order), then the treatment noise,
    then one outcome noise column per arm.
    """
    n = spec.n
    family = spec.family
    if family == "binary_probit":
        x = _ten_covariates(rng, n)
        index = _binary_index(spec.id, x)
        eps = rng.standard_normal(n)
        T = (index - eps > 0.0).astype(np.int64)
        u = rng.standard_normal((n, 2))
        m1 = 1.0 + x.sum(axis=1)
        Y = np.where(T == 1, 2.0 * m1 + u[:, 1], m1 + u[:, 0])
        X = np.column_stack([np.ones(n), x])
    elif family == "multinomial_logit":
        x = _six_covariates(rng, n)
        logits = _multinomial_logits(spec.id, x)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        cumulative = np.column_stack([probs[:, 0], probs[:, 0] + probs[:, 1]])
        u = rng.standard_normal((n, 3))
        ys = np.column_stack(
            [
                1.0 + x @ _MULTI_BETA0 + u[:, 0],
                20.0 - x @ _MULTI_BETA0 + u[:, 1],
                6.0 + x @ _MULTI_BETA2 + u[:, 2],
            ]
        )
        T, Y = _pick_observed(rng, cumulative, ys)
        X = np.column_stack([np.ones(n), x])
    else:
        x = _ten_covariates(rng, n)
        phi, gamma, alphas = _ordered_parts(spec.id, x)
        cumulative = np.column_stack(
            [expit(_ORDERED_SCALE * (a - phi) / gamma) for a in alphas]
        )
        u = rng.standard_normal((n, 3))
        ys = np.column_stack(
            [
                1.0 + x @ _ORDERED_BETA0 + u[:, 0],
                2.0 - x @ _ORDERED_BETA0 + u[:, 1],
                3.0 + x @ _ORDERED_BETA2 + u[:, 2],
            ]
        )
        T, Y = _pick_observed(rng, cumulative, ys)
        X = x
    data = Dataset(X=X, T=T, Y=Y, J=1 if family == "binary_probit" else 2)
    return SimulatedSample(
        dgp=spec.id, data=data, family=family, h0=spec.h0, true_ates=spec.true_ates
    )


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------

#: tags for the three per-replicate random streams
_DATA_STREAM, _TEST_STREAM, _ATE_STREAM = 0, 1, 2

MAX_FAILURE_FRACTION = 0.01


@dataclass
class CellResult:
    """Aggregates for one (design, n) cell."""

    dgp: int
    n: int
    family: str
    h0: bool
    completed: int
    failed: int
    statistics: dict[str, dict]
    ates: dict[str, dict]


@dataclass
class SimulationReport:
    master_seed: int
    reps: int
    B: int
    ate_B: int
    alphas: tuple[float, ...]
    cells: list[CellResult]
    wall_time_s: float

    def to_json_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "reps": self.reps,
            "B": self.B,
            "ate_B": self.ate_B,
            "alphas": list(self.alphas),
            "cells": [
                {
                    "dgp": c.dgp,
                    "n": c.n,
                    "family": c.family,
                    "h0": c.h0,
                    "completed": c.completed,
                    "failed": c.failed,
                    "statistics": c.statistics,
                    "ates": c.ates,
                }
                for c in self.cells
            ],
            "wall_time_s": self.wall_time_s,
        }

    def to_csv_rows(self) -> list[list[str]]:
        """One row per (design, n, statistic); effect columns repeat on
        every row of the cell. Timing is deliberately left out so equal
        runs emit equal bytes."""
        pair_keys: list[str] = []
        for cell in self.cells:
            for key in cell.ates:
                if key not in pair_keys:
                    pair_keys.append(key)
        pair_keys.sort()
        header = ["dgp", "n", "statistic"]
        header += [f"reject_rate_{int(round(alpha * 100)):02d}" for alpha in self.alphas]
        for key in pair_keys:
            suffix = key.replace("-", "_")
            header += [f"bias_{suffix}", f"rmse_{suffix}", f"cov_{suffix}"]
        rows = [header]
        for cell in self.cells:
            for kind, stats in cell.statistics.items():
                row = [str(cell.dgp), str(cell.n), kind]
                for alpha in self.alphas:
                    row.append(format(stats["reject_rate"][str(alpha)], ".17g"))
                for key in pair_keys:
                    ate = cell.ates.get(key)
                    if ate is None:
                        row += ["", "", ""]
                    else:
                        row += [
                            format(ate["bias"], ".17g"),
                            format(ate["rmse"], ".17g"),
                            format(ate["coverage"], ".17g"),
                        ]
                rows.append(row)
        return rows


def _kinds_for(family: str, statistics) -> tuple[str, ...]:
    if statistics is None:
        return FAMILY_KINDS[family]
    for kind in statistics:
        if kind != "dpro" and kind not in KIND_VARIANTS:
            raise DataError(
                f"unknown statistic kind {kind!r}; expected 'dpro' or one of "
                f"{sorted(KIND_VARIANTS)}"
            )
    return tuple(k for k in statistics if k in FAMILY_KINDS[family])


def _run_replicate(task: tuple) -> dict:
    """One replicate: generate, fit once, run every requested statistic off
    the shared fit and kernel, then the effect bootstrap. Returns plain
    floats so results cross process boundaries cheaply."""
    master_seed, dgp, n, rep, B, ate_B, kinds, want_ate = task
    data_seed, test_seed, ate_seed = child_seeds(3, master_seed, dgp, n, rep)
    spec = DgpSpec(dgp, n)
    sample = generate(spec, substream(data_seed))
    out: dict = {"rep": rep, "error": None, "p_values": {}, "ates": {}}
    try:
        fit = fit_mle(sample.family, sample.data)
        model = fit.model()
        if "dpro" in kinds:
            kernel = an_matrix(kernel_covariates(sample.data.X))
            levels = LevelSet.default_for(sample.family, sample.data.J)
            pr = projected_residuals(model, sample.data, levels)
            result = multiplier_bootstrap(pr, kernel, levels, B=B, seed=test_seed)
            out["p_values"]["dpro"] = result.p_value
        for kind in kinds:
            if kind == "dpro":
                continue
            spec_sp = SpTestSpec(
                variant=KIND_VARIANTS[kind], B=B, seed=test_seed
            )
            result = sp_bootstrap(sample.family, fit.theta_hat, sample.data, spec_sp)
            out["p_values"][kind] = result.p_value
        if want_ate:
            pairs = sorted(sample.true_ates)
            for ate in percentile_bootstrap_pairs(
                sample.data, sample.family, pairs, B=ate_B, seed=ate_seed
            ):
                t, s = ate.pair
                out["ates"][f"{t}-{s}"] = {
                    "estimate": ate.estimate,
                    "lower": ate.ci[0],
                    "upper": ate.ci[1],
                }
    except GpscheckError as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}", "p_values": {}, "ates": {}}
    return out


def _aggregate_cell(
    spec: DgpSpec,
    kinds: tuple[str, ...],
    want_ate: bool,
    results: list[dict],
    alphas: tuple[float, ...],
) -> CellResult:
    ok = [r for r in results if r["error"] is None]
    failed = len(results) - len(ok)
    statistics: dict[str, dict] = {}
    for kind in kinds:
        p_values = [r["p_values"][kind] for r in ok]
        rates = {}
        for alpha in alphas:
            hits = math.fsum(1.0 for p in p_values if p <= alpha)
            rates[str(alpha)] = hits / len(p_values) if p_values else float("nan")
        statistics[kind] = {"reject_rate": rates, "p_values": p_values}
    ates: dict[str, dict] = {}
    if want_ate:
        for (t, s), true_value in sorted(spec.true_ates.items()):
            key = f"{t}-{s}"
            draws = [r["ates"][key] for r in ok]
            if draws:
                errors = [d["estimate"] - true_value for d in draws]
                bias = math.fsum(errors) / len(errors)
                rmse = math.sqrt(math.fsum(e * e for e in errors) / len(errors))
                coverage = math.fsum(
                    1.0 for d in draws if d["lower"] <= true_value <= d["upper"]
                ) / len(draws)
            else:
                bias = rmse = coverage = float("nan")
            ates[key] = {
                "true": true_value,
                "bias": bias,
                "rmse": rmse,
                "coverage": coverage,
                "estimates": [d["estimate"] for d in draws],
            }
    return CellResult(
        dgp=spec.id,
        n=spec.n,
        family=spec.family,
        h0=spec.h0,
        completed=len(ok),
        failed=failed,
        statistics=statistics,
        ates=ates,
    )


def run_experiment(
    dgp_ids,
    ns,
    reps: int = 500,
    B: int = 299,
    alphas: tuple[float, ...] = (0.10, 0.05, 0.01),
    statistics=None,
    master_seed: int | None = None,
    parallelism: int = 1,
    ate_B: int = 499,
    include_ate: bool = True,
) -> SimulationReport:
    """Run a grid of (design, n) cells and aggregate the table quantities.

    Cells run in the order given; replicates inside a cell are independent
    tasks keyed by replicate index. Any per-replicate error is recorded
    rather than raised, but a cell whose failures exceed 1% of reps aborts
    the experiment: that is no longer bad luck but a broken configuration.
    """
    if reps < 1:
        raise DataError(f"need reps >= 1, got {reps}")
    if parallelism < 1:
        raise DataError(f"need parallelism >= 1, got {parallelism}")
    master_seed = resolve_seed(master_seed)
    t0 = time.perf_counter()
    cells = []
    for dgp in dgp_ids:
        family = family_for(dgp)
        kinds = _kinds_for(family, statistics)
        for n in ns:
            spec = DgpSpec(dgp, n)
            tasks = [
                (master_seed, dgp, n, rep, B, ate_B, kinds, include_ate)
                for rep in range(reps)
            ]
            if parallelism == 1:
                results = [_run_replicate(task) for task in tasks]
            else:
                with ProcessPoolExecutor(max_workers=parallelism) as pool:
                    results = list(pool.map(_run_replicate, tasks, chunksize=8))
            results.sort(key=lambda r: r["rep"])
            cell = _aggregate_cell(spec, kinds, include_ate, results, tuple(alphas))
            if cell.failed > MAX_FAILURE_FRACTION * reps:
                examples = [r["error"] for r in results if r["error"] is not None]
                raise TooManyFailedResamplesError(
                    f"design {dgp}, n={n}: {cell.failed} of {reps} replicates failed; "
                    f"first error: {examples[0]}"
                )
            cells.append(cell)
    return SimulationReport(
        master_seed=master_seed,
        reps=reps,
        B=B,
        ate_B=ate_B,
        alphas=tuple(alphas),
        cells=cells,
        wall_time_s=time.perf_counter() - t0,
    )

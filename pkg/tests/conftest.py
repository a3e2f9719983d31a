"""Shared helpers for the test suite.

Datasets used across tests are simulated from the model family under test
(so the null holds by construction) with seeds fixed per call site; the
``fitted`` helper caches (dataset, fit) pairs because several tests probe
different properties of the same fitted instance.
"""

from __future__ import annotations

import numpy as np

from gpscheck import FAMILIES, Dataset, PropensityModel, fit_mle

__all__ = [
    "make_rng",
    "random_model",
    "simulate_treatment",
    "random_dataset",
    "fitted",
    "FAMILY_CASES",
]

#: one representative configuration per family: (family, d_x, J)
FAMILY_CASES = (
    ("binary_logit", 4, 1),
    ("binary_probit", 4, 1),
    ("multinomial_logit", 3, 2),
    ("ordered_logit", 4, 2),
)


def make_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def random_model(
    family: str, d_x: int, J: int, rng: np.random.Generator, scale: float = 0.6
) -> PropensityModel:
    """A random parameter draw with mild slopes, so simulated indices stay
    in the well-conditioned range of the links."""
    if family in ("binary_logit", "binary_probit"):
        theta = scale * rng.standard_normal(d_x)
        return PropensityModel(family, theta, 1)
    if family == "multinomial_logit":
        theta = scale * rng.standard_normal(J * d_x)
        return PropensityModel(family, theta, J)
    cuts = np.sort(rng.uniform(-1.5, 1.5, J))
    while np.any(np.diff(cuts) < 0.2):
        cuts = np.sort(rng.uniform(-1.5, 1.5, J))
    theta = np.concatenate([cuts, scale * rng.standard_normal(d_x)])
    return PropensityModel(family, theta, J)


def simulate_treatment(model: PropensityModel, X: np.ndarray, rng) -> np.ndarray:
    """Draw T from the model's own conditional law by CDF inversion."""
    probs = model.prob(X)
    cum = np.cumsum(probs, axis=1)[:, :-1]
    u = rng.random(X.shape[0])
    return (u[:, None] > cum).sum(axis=1).astype(np.int64)


def random_dataset(
    family: str,
    n: int,
    d_x: int,
    J: int,
    rng: np.random.Generator,
    outcome: bool = False,
    scale: float = 0.6,
):
    """A correctly specified dataset: covariates, a random model, and T
    simulated from it. Redraws until every level is observed."""
    for _ in range(200):
        if family == "ordered_logit":
            X = rng.standard_normal((n, d_x))
        else:
            X = np.column_stack([np.ones(n), rng.standard_normal((n, d_x - 1))])
        model = random_model(family, d_x, J, rng, scale=scale)
        T = simulate_treatment(model, X, rng)
        if np.array_equal(np.unique(T), np.arange(J + 1)):
            Y = rng.standard_normal(n) + T if outcome else None
            return Dataset(X=X, T=T, Y=Y, J=J), model
    raise AssertionError("could not draw a dataset with all levels present")


_FIT_CACHE: dict = {}


def fitted(family: str, seed: int, n: int = 150, d_x: int = 4, J: int = 2):
    """A cached (dataset, FitResult) pair for a correctly specified draw."""
    J = 1 if family.startswith("binary") else J
    key = (family, seed, n, d_x, J)
    if key not in _FIT_CACHE:
        data, _ = random_dataset(family, n, d_x, J, make_rng(seed, FAMILIES.index(family)))
        _FIT_CACHE[key] = (data, fit_mle(family, data))
    return _FIT_CACHE[key]

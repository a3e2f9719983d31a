"""Maximum likelihood fitting for all propensity families.

Dense Newton iteration with analytic gradients and Hessians. Parameter
counts in the designs we target stay below a few dozen, so forming and
factorizing the full Hessian each step is both the fastest and the most
reliable choice. The line search is plain backtracking with an Armijo
condition; when the Hessian is not negative definite the step direction
falls back to the gradient.

The ordered logit is optimized in the reparameterized space
(alpha_0, log(alpha_1 - alpha_0), ..., delta), which keeps the cutpoints
monotone without constraints; fitted parameters are reported on the
natural (alpha, delta) scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_ndtr

from .errors import (
    DataError,
    NotConvergedError,
    NumericError,
    SeparationError,
    SingularHessianError,
)
from .models import (
    FAMILIES,
    INDEX_CLAMP,
    Dataset,
    PropensityModel,
    clamp_index,
    logistic_density,
)

__all__ = ["FitResult", "fit_mle", "loglik", "loglik_gradient"]

ARMIJO_C = 1e-4
MIN_STEP = 1e-14


@dataclass
class FitResult:
    """Outcome of a maximum likelihood fit.

    gradient_norm is the sup-norm of the gradient in the parameterization
    the optimizer works in (natural parameters except for the ordered
    family, which uses the monotone reparameterization); converged means
    gradient_norm <= tol. covariance_proxy is the inverse negative Hessian
    at the optimum in natural parameters, for diagnostics only.
    """

    theta_hat: np.ndarray
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    covariance_proxy: np.ndarray
    family: str
    J: int

    def model(self) -> PropensityModel:
        return PropensityModel(self.family, self.theta_hat, self.J)


# ---------------------------------------------------------------------------
# per-family log-likelihood, gradient and Hessian in natural parameters
# ---------------------------------------------------------------------------


def _binary_parts(family: str, theta: np.ndarray, X: np.ndarray, y: np.ndarray):
    eta = clamp_index(X @ theta)
    if family == "binary_logit":
        ll = float(np.sum(y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))
        p = expit(eta)
        grad = X.T @ (y - p)
        w = logistic_density(eta)
    else:
        ll = float(np.sum(y * log_ndtr(eta) + (1.0 - y) * log_ndtr(-eta)))
        # phi/Phi ratios computed in log space; both weight terms are
        # non-negative, so the negative Hessian is positive semidefinite
        log_phi = -0.5 * eta * eta - 0.5 * np.log(2.0 * np.pi)
        m_pos = np.exp(log_phi - log_ndtr(eta))
        m_neg = np.exp(log_phi - log_ndtr(-eta))
        grad = X.T @ (y * m_pos - (1.0 - y) * m_neg)
        w = y * m_pos * (eta + m_pos) + (1.0 - y) * m_neg * (m_neg - eta)
    hess = -(X * w[:, np.newaxis]).T @ X
    return ll, grad, hess


def _multinomial_parts(theta: np.ndarray, X: np.ndarray, T: np.ndarray, J: int):
    n, d = X.shape
    blocks = theta.reshape(J, d)
    H = clamp_index(X @ blocks.T)
    M = np.column_stack([np.zeros(n), H])
    mx = M.max(axis=1)
    lse = mx + np.log(np.exp(M - mx[:, np.newaxis]).sum(axis=1))
    ll = float(np.sum(M[np.arange(n), T] - lse))
    P = np.exp(M - lse[:, np.newaxis])
    grad = np.empty(J * d)
    for s in range(1, J + 1):
        grad[(s - 1) * d : s * d] = X.T @ ((T == s).astype(float) - P[:, s])
    hess = np.empty((J * d, J * d))
    for s in range(1, J + 1):
        for u in range(s, J + 1):
            w = P[:, s] * ((1.0 if s == u else 0.0) - P[:, u])
            block = -(X * w[:, np.newaxis]).T @ X
            hess[(s - 1) * d : s * d, (u - 1) * d : u * d] = block
            if u != s:
                hess[(u - 1) * d : u * d, (s - 1) * d : s * d] = block.T
    return ll, grad, hess


def _ordered_natural_parts(alpha: np.ndarray, delta: np.ndarray, X, T, J: int):
    """Log-likelihood, gradient and Hessian of the proportional odds model
    in (alpha, delta). Observation i with level t contributes
    log(L(c_t) - L(c_{t-1})) with c_t = alpha_t - x'delta, c_{-1} = -inf,
    c_J = +inf."""
    n, d = X.shape
    eta = clamp_index(X @ delta)
    q = J + d
    ll = 0.0
    grad = np.zeros(q)
    hess = np.zeros((q, q))
    for t in range(J + 1):
        idx = np.flatnonzero(T == t)
        if idx.size == 0:
            continue
        Xt = X[idx]
        et = eta[idx]
        has_up = t < J
        has_lo = t > 0
        cu = alpha[t] - et if has_up else None
        cl = alpha[t - 1] - et if has_lo else None
        if not has_lo:
            ll += float(np.sum(log_expit(cu)))
            p = expit(cu)
        elif not has_up:
            ll += float(np.sum(log_expit(-cl)))
            p = expit(-cl)
        else:
            gap = cu - cl
            ll += float(np.sum(log_expit(cl) + log_expit(-cu) + np.log(np.expm1(gap))))
            p = expit(cl) * expit(-cu) * np.expm1(gap)
        A = logistic_density(cu) if has_up else np.zeros(idx.size)
        Bv = logistic_density(cl) if has_lo else np.zeros(idx.size)
        # derivative of the logistic density: lambda'(c) = lambda(c)(1-2L(c))
        Ap = A * (1.0 - 2.0 * expit(cu)) if has_up else np.zeros(idx.size)
        Bp = Bv * (1.0 - 2.0 * expit(cl)) if has_lo else np.zeros(idx.size)
        ra = A / p
        rb = Bv / p
        r = ra - rb
        if has_up:
            grad[t] += float(np.sum(ra))
            hess[t, t] += float(np.sum(Ap / p - ra * ra))
            had = Xt.T @ (-Ap / p + ra * r)
            hess[t, J:] += had
            hess[J:, t] += had
        if has_lo:
            grad[t - 1] -= float(np.sum(rb))
            hess[t - 1, t - 1] += float(np.sum(-Bp / p - rb * rb))
            had = Xt.T @ (Bp / p - rb * r)
            hess[t - 1, J:] += had
            hess[J:, t - 1] += had
        if has_up and has_lo:
            cross = float(np.sum(ra * rb))
            hess[t, t - 1] += cross
            hess[t - 1, t] += cross
        grad[J:] -= Xt.T @ r
        w = (Ap - Bp) / p - r * r
        hess[J:, J:] += (Xt * w[:, np.newaxis]).T @ Xt
    return ll, grad, hess


def _alpha_to_psi(alpha: np.ndarray) -> np.ndarray:
    gaps = np.diff(alpha)
    if np.any(gaps <= 0.0):
        raise DataError(f"cutpoints must be strictly increasing, got {alpha}")
    return np.concatenate([[alpha[0]], np.log(gaps)])


def _psi_to_alpha(psi_head: np.ndarray) -> np.ndarray:
    alpha = np.empty(psi_head.size)
    alpha[0] = psi_head[0]
    if psi_head.size > 1:
        alpha[1:] = psi_head[0] + np.cumsum(np.exp(psi_head[1:]))
    return alpha


def _ordered_psi_parts(psi: np.ndarray, X: np.ndarray, T: np.ndarray, J: int):
    d = X.shape[1]
    alpha = _psi_to_alpha(psi[:J])
    delta = psi[J:]
    ll, g_nat, h_nat = _ordered_natural_parts(alpha, delta, X, T, J)
    # chain rule through alpha_m = psi_0 + sum_{k<=m} exp(psi_k)
    q = J + d
    Tm = np.eye(q)
    for m in range(J):
        Tm[m, 0] = 1.0
        for k in range(1, m + 1):
            Tm[m, k] = np.exp(psi[k])
    grad = Tm.T @ g_nat
    hess = Tm.T @ h_nat @ Tm
    for k in range(1, J):
        hess[k, k] += np.exp(psi[k]) * float(np.sum(g_nat[k:J]))
    return ll, grad, hess


def _parts(family: str, theta: np.ndarray, data: Dataset):
    """(loglik, gradient, hessian) in the optimizer parameterization."""
    if family in ("binary_logit", "binary_probit"):
        return _binary_parts(family, theta, data.X, (data.T == 1).astype(float))
    if family == "multinomial_logit":
        return _multinomial_parts(theta, data.X, data.T, data.J)
    return _ordered_psi_parts(theta, data.X, data.T, data.J)


# ---------------------------------------------------------------------------
# public evaluation helpers (natural parameters)
# ---------------------------------------------------------------------------


def loglik(family: str, theta: np.ndarray, data: Dataset) -> float:
    """Log-likelihood sum_i log q_{T_i}(X_i, theta) at natural parameters."""
    _check_family(family)
    theta = np.asarray(theta, dtype=float).ravel()
    if family == "ordered_logit":
        alpha = theta[: data.J]
        ll, _, _ = _ordered_natural_parts(_checked_alpha(alpha), theta[data.J :], data.X, data.T, data.J)
        return ll
    ll, _, _ = _parts(family, theta, data)
    return ll


def loglik_gradient(family: str, theta: np.ndarray, data: Dataset) -> np.ndarray:
    """Analytic gradient of ``loglik`` in natural parameters."""
    _check_family(family)
    theta = np.asarray(theta, dtype=float).ravel()
    if family == "ordered_logit":
        alpha = theta[: data.J]
        _, g, _ = _ordered_natural_parts(_checked_alpha(alpha), theta[data.J :], data.X, data.T, data.J)
        return g
    _, g, _ = _parts(family, theta, data)
    return g


def _checked_alpha(alpha: np.ndarray) -> np.ndarray:
    if np.any(np.diff(alpha) <= 0.0):
        raise DataError(f"cutpoints must be strictly increasing, got {alpha}")
    return alpha


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise DataError(f"unknown family {family!r}; expected one of {FAMILIES}")


# ---------------------------------------------------------------------------
# initialization and the Newton driver
# ---------------------------------------------------------------------------


def _constant_column(X: np.ndarray) -> tuple[int, float] | None:
    for j in range(X.shape[1]):
        col = X[:, j]
        if col[0] != 0.0 and np.all(col == col[0]):
            return j, float(col[0])
    return None


def _default_init(family: str, data: Dataset) -> np.ndarray:
    """Zero slopes; intercepts or cutpoints matched to the marginal
    treatment frequencies."""
    n, d = data.X.shape
    if family == "ordered_logit":
        counts = np.bincount(data.T, minlength=data.J + 1)
        cum = np.cumsum(counts)[: data.J] / n
        cum = np.clip(cum, 1.0 / (n + 1.0), 1.0 - 1.0 / (n + 1.0))
        alpha = np.log(cum / (1.0 - cum))
        # frequencies are strictly increasing when every level is present
        return np.concatenate([alpha, np.zeros(d)])
    const = _constant_column(data.X)
    if family in ("binary_logit", "binary_probit"):
        theta = np.zeros(d)
        if const is not None:
            j, c = const
            pbar = float(np.clip(np.mean(data.T == 1), 1.0 / (n + 1.0), 1.0 - 1.0 / (n + 1.0)))
            if family == "binary_logit":
                theta[j] = np.log(pbar / (1.0 - pbar)) / c
            else:
                from scipy.special import ndtri

                theta[j] = ndtri(pbar) / c
        return theta
    theta = np.zeros(data.J * d)
    if const is not None:
        j, c = const
        counts = np.maximum(np.bincount(data.T, minlength=data.J + 1), 0.5)
        for s in range(1, data.J + 1):
            theta[(s - 1) * d + j] = np.log(counts[s] / counts[0]) / c
    return theta


def _newton(objective, theta0: np.ndarray, tol: float, max_iter: int):
    theta = theta0.copy()
    ll, grad, hess = objective(theta)
    if not np.isfinite(ll):
        raise NumericError("log-likelihood is not finite at the initial point")
    iters = 0
    converged = bool(np.max(np.abs(grad)) <= tol)
    while not converged and iters < max_iter:
        try:
            L = np.linalg.cholesky(-hess)
            direction = np.linalg.solve(L.T, np.linalg.solve(L, grad))
        except np.linalg.LinAlgError:
            direction = grad.copy()
        slope = float(grad @ direction)
        if slope <= 0.0:
            direction = grad.copy()
            slope = float(grad @ grad)
        # near the optimum the true improvement drops below the rounding
        # noise of the log-likelihood itself; without this slack the line
        # search rejects perfectly good Newton steps and stalls with the
        # gradient a hair above tol
        noise = 4.0 * np.finfo(float).eps * (1.0 + abs(ll))
        step = 1.0
        while step >= MIN_STEP:
            cand = theta + step * direction
            ll_new, grad_new, hess_new = objective(cand)
            if np.isfinite(ll_new) and ll_new >= ll + ARMIJO_C * step * slope - noise:
                break
            step *= 0.5
        else:
            break  # no acceptable step; report non-convergence below
        theta, ll, grad, hess = cand, ll_new, grad_new, hess_new
        iters += 1
        converged = bool(np.max(np.abs(grad)) <= tol)
    return theta, ll, grad, hess, iters, converged


def _clamp_active(family: str, theta: np.ndarray, data: Dataset) -> bool:
    if family in ("binary_logit", "binary_probit"):
        eta = data.X @ theta
    elif family == "multinomial_logit":
        eta = data.X @ theta.reshape(data.J, data.d_x).T
    else:
        eta = data.X @ theta[data.J :]
    return bool(np.any(np.abs(eta) >= INDEX_CLAMP))


def fit_mle(
    family: str,
    data: Dataset,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> FitResult:
    """Fit a propensity family by Newton maximum likelihood.

    init is in natural parameters; when omitted, slopes start at zero with
    intercepts or cutpoints matched to the marginal frequencies. Raises
    SeparationError when the iteration stalls with fitted indices pinned at
    the clamp, NotConvergedError when max_iter is exhausted otherwise, and
    SingularHessianError when the curvature at the optimum cannot be
    factorized.
    """
    _check_family(family)
    if not data.levels_present():
        missing = sorted(set(range(data.J + 1)) - set(np.unique(data.T).tolist()))
        raise DataError(f"treatment levels {missing} are absent; cannot fit")
    if family.startswith("binary") and data.J != 1:
        raise DataError(f"{family} requires J = 1, data has J = {data.J}")

    theta_nat = _default_init(family, data) if init is None else np.asarray(init, dtype=float).ravel()
    expected = _default_init(family, data).size
    if theta_nat.size != expected:
        raise DataError(f"init has length {theta_nat.size}, expected {expected}")

    if family == "ordered_logit":
        theta0 = np.concatenate([_alpha_to_psi(theta_nat[: data.J]), theta_nat[data.J :]])
    else:
        theta0 = theta_nat

    objective = lambda th: _parts(family, th, data)
    theta, ll, grad, hess, iters, converged = _newton(objective, theta0, tol, max_iter)

    gradient_norm = float(np.max(np.abs(grad)))
    if _clamp_active(family, _to_natural(family, theta, data), data):
        # a fitted index pinned at the clamp means the likelihood is being
        # maximized at the artificial boundary, i.e. the unclamped problem
        # has no maximizer; with separated data the clamped gradient still
        # drains below tol, so this must be checked even on "convergence"
        raise SeparationError(
            "fitted linear indices reached the clamp with gradient norm "
            f"{gradient_norm:.3e} after {iters} iterations; "
            "data are (quasi-)separated"
        )
    if not converged:
        raise NotConvergedError(
            f"Newton did not converge in {max_iter} iterations "
            f"(gradient sup-norm {gradient_norm:.3e})"
        )

    theta_hat = _to_natural(family, theta, data)
    if family == "ordered_logit":
        _, _, hess_nat = _ordered_natural_parts(
            theta_hat[: data.J], theta_hat[data.J :], data.X, data.T, data.J
        )
    else:
        hess_nat = hess
    try:
        L = np.linalg.cholesky(-hess_nat)
        eye = np.eye(hess_nat.shape[0])
        cov = np.linalg.solve(L.T, np.linalg.solve(L, eye))
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(
            "negative Hessian at the optimum is not positive definite"
        ) from exc

    return FitResult(
        theta_hat=theta_hat,
        loglik=float(ll),
        gradient_norm=gradient_norm,
        iterations=iters,
        converged=converged,
        covariance_proxy=cov,
        family=family,
        J=data.J,
    )


def _to_natural(family: str, theta_opt: np.ndarray, data: Dataset) -> np.ndarray:
    if family != "ordered_logit":
        return theta_opt
    return np.concatenate([_psi_to_alpha(theta_opt[: data.J]), theta_opt[data.J :]])

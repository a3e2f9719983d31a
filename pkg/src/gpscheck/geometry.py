"""Solid-angle kernel of the projected indicator covariance.

For sample points X_i, X_j, X_r in R^{d_x} the kernel entry is the surface
measure of directions beta on the unit sphere for which both X_i and X_j
project weakly below X_r:

    A_ijr = measure{ beta : beta'(X_i - X_r) <= 0 and beta'(X_j - X_r) <= 0 }.

It has a closed form: with c(d) = pi^(d/2 - 1) / Gamma(d/2),

    A_ijr = A0 * c(d_x),
    A0 = 2*pi                     if X_i = X_j = X_r,
         pi                      if exactly the pair (i,j), (i,r) or (j,r)
                                 coincides,
         pi - arccos(cos_ijr)    otherwise,

where cos_ijr is the cosine of the angle between X_i - X_r and X_j - X_r.
The arccos branch is continuous into the X_i = X_j case (cosine 1 gives
pi), so the case split only matters for coincidences with X_r.

Point coincidence is decided by Euclidean distance <= dup_tol. Both the
scalar ``aijr`` and the O(n^3) matrix builder ``an_matrix`` share one case
convention, including the tolerance corner where X_i and X_j both sit
within dup_tol of X_r without being within dup_tol of each other (treated
as the triple coincidence). The builder works off the Gram matrix
G = X X', using (X_i - X_r)'(X_j - X_r) = G_ij - G_ir - G_jr + G_rr, so no
n^2 x d_x difference tensors are formed.

Cosines within COS_SNAP of +-1 are snapped to exactly +-1 before the
arccos. Near collinearity the computed cosine carries rounding error that
arccos amplifies by 1/sin (unboundedly), so without the snap the scalar
and matrix paths disagree at the 1e-6 level on collinear geometry -- and
with one covariate every triple is collinear.
"""

from __future__ import annotations

import hashlib
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import gamma, pi

import numpy as np

from .errors import DataError, KernelSizeError

__all__ = [
    "ProjectionKernel",
    "aijr",
    "an_matrix",
    "cached_an_matrix",
    "load_kernel",
    "save_kernel",
]

#: dense n x n storage means 8 n^2 bytes; past this the matrix alone tops 3 GB
MAX_KERNEL_N = 20_000

#: r rows per accumulation chunk; fixed so that the reduction tree (and the
#: floating point result) is identical for every worker count
R_CHUNK = 64

#: cosines this close to +-1 are treated as exactly collinear (angle 0 or pi)
COS_SNAP = 1e-9

_CACHE_MAGIC = b"GPSKERN1"


def sphere_constant(d_x: int) -> float:
    """c(d_x) = pi^(d_x/2 - 1) / Gamma(d_x/2), the constant that carries
    the arc measure on S^1 to the surface measure on the d_x-sphere."""
    if d_x < 1:
        raise DataError(f"d_x must be at least 1, got {d_x}")
    return pi ** (d_x / 2.0 - 1.0) / gamma(d_x / 2.0)


@dataclass
class ProjectionKernel:
    """Aggregated kernel A[i,j] = sum_r A_ijr, exactly symmetric."""

    A: np.ndarray
    n: int
    d_x: int
    dup_tolerance: float


def aijr(
    x_i: np.ndarray,
    x_j: np.ndarray,
    x_r: np.ndarray,
    d_x: int | None = None,
    dup_tol: float = 1e-12,
) -> float:
    """Single kernel entry by the closed form above."""
    xi = np.asarray(x_i, dtype=float).ravel()
    xj = np.asarray(x_j, dtype=float).ravel()
    xr = np.asarray(x_r, dtype=float).ravel()
    if not (xi.size == xj.size == xr.size):
        raise DataError("aijr rows must have equal length")
    if d_x is None:
        d_x = xi.size
    elif d_x != xi.size:
        raise DataError(f"d_x={d_x} does not match row length {xi.size}")
    scale = sphere_constant(d_x)

    di = xi - xr
    dj = xj - xr
    tol2 = dup_tol * dup_tol
    ndi = float(di @ di)
    ndj = float(dj @ dj)
    zi = ndi <= tol2
    zj = ndj <= tol2
    if zi and zj:
        return 2.0 * pi * scale
    if zi or zj:
        return pi * scale
    dij = xi - xj
    if float(dij @ dij) <= tol2:
        return pi * scale
    cos = float(di @ dj) / (np.sqrt(ndi) * np.sqrt(ndj))
    cos = min(1.0, max(-1.0, cos))
    if cos >= 1.0 - COS_SNAP:
        return pi * scale
    if cos <= -1.0 + COS_SNAP:
        return 0.0
    return (pi - float(np.arccos(cos))) * scale


def _chunk_sum(G, diag, dup_mask, tol2, r_lo, r_hi):
    """Sum of A0 slices over r in [r_lo, r_hi), in increasing r order."""
    n = G.shape[0]
    acc = np.zeros((n, n))
    for r in range(r_lo, r_hi):
        gr = G[:, r]
        grr = G[r, r]
        S = G - gr[:, np.newaxis] - gr[np.newaxis, :] + grr
        d2 = np.maximum(diag - 2.0 * gr + grr, 0.0)
        sd = np.sqrt(d2)
        with np.errstate(divide="ignore", invalid="ignore"):
            cos = S / np.outer(sd, sd)
        if dup_mask is not None:
            cos[dup_mask] = 1.0
        np.fill_diagonal(cos, 1.0)
        np.clip(cos, -1.0, 1.0, out=cos)
        cos[cos >= 1.0 - COS_SNAP] = 1.0
        cos[cos <= -1.0 + COS_SNAP] = -1.0
        M = np.arccos(cos)
        np.subtract(pi, M, out=M)
        zero = d2 <= tol2
        if zero.any():
            M[zero, :] = pi
            M[:, zero] = pi
            M[np.ix_(zero, zero)] = 2.0 * pi
        acc += M
    return acc


def an_matrix(
    X: np.ndarray,
    dup_tol: float = 1e-12,
    workers: int = 1,
    strict: bool = False,
) -> ProjectionKernel:
    """Build the aggregated kernel A_n for all rows of X.

    The r loop runs over fixed-size chunks whose partial sums are reduced
    in chunk order, so the result is bit-identical for any worker count.
    strict=True forces one serial accumulation over r instead (the
    reference summation order); it may differ from the chunked sum in the
    last bits.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim != 2:
        raise DataError("X must be a 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("X has non-finite entries")
    n, d_x = X.shape
    if d_x < 1:
        raise DataError("X needs at least one column")
    if n > MAX_KERNEL_N:
        raise KernelSizeError(
            f"n={n} exceeds the dense kernel cap of {MAX_KERNEL_N} "
            f"({8 * n * n / 1e9:.1f} GB); subsample or raise the cap in source"
        )

    G = X @ X.T
    G = 0.5 * (G + G.T)
    diag = np.diag(G).copy()
    tol2 = dup_tol * dup_tol

    # pairwise coincidences among (i, j); forces the arccos branch onto
    # cosine 1 exactly so duplicates match the scalar path bit for bit
    nij2 = np.maximum(diag[:, np.newaxis] - 2.0 * G + diag[np.newaxis, :], 0.0)
    dup_mask = nij2 <= tol2
    np.fill_diagonal(dup_mask, False)
    if not dup_mask.any():
        dup_mask = None

    if strict:
        A = _chunk_sum(G, diag, dup_mask, tol2, 0, n)
    else:
        chunks = [(lo, min(lo + R_CHUNK, n)) for lo in range(0, n, R_CHUNK)]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(
                    pool.map(lambda c: _chunk_sum(G, diag, dup_mask, tol2, *c), chunks)
                )
        else:
            parts = [_chunk_sum(G, diag, dup_mask, tol2, lo, hi) for lo, hi in chunks]
        A = parts[0]
        for part in parts[1:]:
            A += part

    A *= sphere_constant(d_x)
    upper = np.triu(A)
    A = upper + np.triu(A, 1).T
    return ProjectionKernel(A=A, n=n, d_x=d_x, dup_tolerance=dup_tol)


# ---------------------------------------------------------------------------
# binary cache
# ---------------------------------------------------------------------------


def save_kernel(kernel: ProjectionKernel, path: str | os.PathLike) -> None:
    """Write a kernel as magic | u64 n | u64 d_x | f64 dup_tol | A
    (little-endian, row-major)."""
    header = _CACHE_MAGIC + struct.pack(
        "<QQd", kernel.n, kernel.d_x, kernel.dup_tolerance
    )
    body = np.ascontiguousarray(kernel.A, dtype="<f8").tobytes()
    tmp = f"{os.fspath(path)}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(body)
    os.replace(tmp, path)


def load_kernel(path: str | os.PathLike) -> ProjectionKernel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_CACHE_MAGIC))
        if magic != _CACHE_MAGIC:
            raise DataError(f"{path}: not a kernel cache file (bad magic {magic!r})")
        n, d_x, dup_tol = struct.unpack("<QQd", fh.read(24))
        body = fh.read()
    expected = 8 * n * n
    if len(body) != expected:
        raise DataError(
            f"{path}: truncated kernel cache ({len(body)} bytes, expected {expected})"
        )
    A = np.frombuffer(body, dtype="<f8").astype(float).reshape(n, n)
    return ProjectionKernel(A=A, n=int(n), d_x=int(d_x), dup_tolerance=float(dup_tol))


def _content_key(X: np.ndarray, dup_tol: float) -> str:
    h = hashlib.sha256()
    h.update(struct.pack("<QQd", X.shape[0], X.shape[1], dup_tol))
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    return h.hexdigest()[:24]


def cached_an_matrix(
    X: np.ndarray,
    dup_tol: float = 1e-12,
    cache_dir: str | os.PathLike | None = None,
    workers: int = 1,
) -> ProjectionKernel:
    """an_matrix with an optional on-disk cache keyed by the content of X."""
    if cache_dir is None:
        return an_matrix(X, dup_tol=dup_tol, workers=workers)
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(os.fspath(cache_dir), f"an_{_content_key(X, dup_tol)}.kern")
    if os.path.exists(path):
        kernel = load_kernel(path)
        if kernel.n == X.shape[0] and kernel.d_x == X.shape[1]:
            return kernel
    kernel = an_matrix(X, dup_tol=dup_tol, workers=workers)
    save_kernel(kernel, path)
    return kernel

"""Low-rank matrix factorization kernels.

Truncated SVD with an absolute Frobenius truncation budget, an economy QR
with a numerical-rank estimate, and a matrix-free spectral-norm estimator.
These are the primitives the tensor-train sweeps are built from.
"""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg

from .dense import DenseMatrix
from .errors import ConfigError, DataError

# |R_ii| below this multiple of max |R_jj| counts as numerically zero when
# estimating rank from a triangular factor.
QR_RANK_RTOL = 1e-14


def _as_2d(m) -> np.ndarray:
    if isinstance(m, DenseMatrix):
        return m.to_numpy()
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


def _svd(arr: np.ndarray, accurate: bool = False):
    # gesdd is fast but its small singular values carry O(eps * sigma_1)
    # noise; gesvd resolves them properly, which matters when the
    # truncation budget sits near the noise floor
    first, second = ("gesvd", "gesdd") if accurate else ("gesdd", "gesvd")
    try:
        return scipy.linalg.svd(arr, full_matrices=False, lapack_driver=first)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(arr, full_matrices=False, lapack_driver=second)


def svd_truncation_rank(singular_values: np.ndarray, delta: float) -> int:
    """Smallest rank whose discarded tail has root-sum-square <= ``delta``.

    Floor of 1: even an all-zero spectrum keeps one (zero) singular triplet
    so downstream rank chains stay well formed.
    """
    sq = np.asarray(singular_values, dtype=np.float64) ** 2
    # tail[r] = sum of squares of the values discarded when keeping r
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    budget = float(delta) ** 2
    # tail is nonincreasing and tail[-1] == 0, so a qualifying rank exists
    r = int(np.nonzero(tail <= budget)[0][0])
    return max(r, 1)


@dataclass(frozen=True)
class TruncatedSVD:
    """Rank-``r`` factorization ``M ~ U @ diag(s) @ V.T``.

    ``discarded_energy`` is the root-sum-square of the dropped singular
    values, i.e. the Frobenius norm of the approximation error.
    """

    U: DenseMatrix
    singular_values: np.ndarray
    V: DenseMatrix
    discarded_energy: float

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)

    def reconstruct(self) -> np.ndarray:
        u = self.U.to_numpy()
        v = self.V.to_numpy()
        return (u * self.singular_values) @ v.T


def _truncated_svd_arrays(arr: np.ndarray, delta: float):
    """numpy-level truncated SVD used by the tensor-train sweeps.

    Returns ``(U, s, Vt, discarded_energy)`` with the smallest rank whose
    discarded tail energy is within ``delta``.
    """
    if delta < 0:
        raise ConfigError(f"truncation budget must be >= 0, got {delta}")
    if not np.isfinite(arr).all():
        raise DataError("matrix contains non-finite entries")
    accurate = 0.0 < delta < 1e-12 * float(np.linalg.norm(arr))
    u, s, vt = _svd(arr, accurate=accurate)
    r = svd_truncation_rank(s, delta)
    discarded = float(np.sqrt(np.sum(s[r:] ** 2)))
    return u[:, :r], s[:r].copy(), vt[:r, :], discarded


def truncated_svd(m, delta: float) -> TruncatedSVD:
    """SVD truncated to the smallest rank meeting an absolute Frobenius budget.

    Discards the largest tail of singular values whose root-sum-square is
    still <= ``delta`` (the Frobenius-optimal truncation rule); when the tail
    energy ties the budget exactly the smaller rank wins.  The rank never
    drops below 1.
    """
    arr = _as_2d(m)
    u, s, vt, discarded = _truncated_svd_arrays(arr, delta)
    return TruncatedSVD(
        U=DenseMatrix.from_numpy(u),
        singular_values=s,
        V=DenseMatrix.from_numpy(vt.T),
        discarded_energy=discarded,
    )


def triangular_rank(r_diag: np.ndarray) -> int:
    """Numerical rank from a triangular factor's diagonal.

    Entries with magnitude <= QR_RANK_RTOL * max |R_jj| count as zero;
    floor of 1.
    """
    mags = np.abs(np.asarray(r_diag, dtype=np.float64))
    if mags.size == 0:
        return 1
    cutoff = QR_RANK_RTOL * float(mags.max())
    return max(int(np.sum(mags > cutoff)), 1)


def _qr_arrays(arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise DataError("matrix contains non-finite entries")
    q, r = np.linalg.qr(arr, mode="reduced")
    rank = triangular_rank(np.diag(r))
    return q, r, rank


def rank_revealing_qr(m):
    """Economy QR plus a numerical-rank estimate.

    Returns ``(Q, R, rank)`` with ``Q @ R == M`` (Q has orthonormal columns,
    R is upper triangular).  The rank comes from R's diagonal via
    :func:`triangular_rank`; callers that truncate should keep the first
    ``rank`` columns of Q and rows of R.
    """
    wrap = isinstance(m, DenseMatrix)
    q, r, rank = _qr_arrays(_as_2d(m))
    if wrap:
        return DenseMatrix.from_numpy(q), DenseMatrix.from_numpy(r), rank
    return q, r, rank


class SpectralEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def spectral_norm_estimate(
    apply: Callable[[np.ndarray], np.ndarray],
    apply_transpose: Callable[[np.ndarray], np.ndarray],
    dims,
    tol: float = 1e-3,
    max_iterations: int = 500,
    seed: Optional[int] = 0,
) -> SpectralEstimate:
    """Largest singular value of an operator given only matvec oracles.

    Power iteration on ``A^T A`` from a random start vector.  The iterates
    increase monotonically with geometrically decaying steps, so the
    remaining error is projected from the ratio of successive differences;
    iteration stops once both the last step and the projection are below
    ``tol`` relative.  On hitting the iteration cap the best estimate is
    returned with ``converged=False``.
    """
    if not 0 < tol < 1:
        raise ConfigError(f"tolerance must be in (0, 1), got {tol}")
    _, n = dims
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    nv = np.linalg.norm(v)
    if nv == 0.0:  # pragma: no cover - standard_normal never returns all zeros
        v = np.ones(n)
        nv = math.sqrt(n)
    v /= nv
    estimate = 0.0
    prev_diff = None
    for it in range(1, max_iterations + 1):
        u = np.asarray(apply(v), dtype=np.float64)
        sigma = float(np.linalg.norm(u))
        if sigma == 0.0:
            return SpectralEstimate(0.0, True, it)
        w = np.asarray(apply_transpose(u / sigma), dtype=np.float64)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return SpectralEstimate(sigma, True, it)
        v = w / nw
        if it > 1:
            diff = abs(sigma - estimate)
            if diff == 0.0:
                return SpectralEstimate(sigma, True, it)
            if prev_diff is not None and diff < tol * sigma:
                rate = min(diff / prev_diff, 0.999) if prev_diff > 0 else 0.0
                projected = diff * rate / (1.0 - rate)
                if projected < tol * sigma:
                    return SpectralEstimate(sigma, True, it)
            prev_diff = diff
        estimate = sigma
    return SpectralEstimate(estimate, False, max_iterations)

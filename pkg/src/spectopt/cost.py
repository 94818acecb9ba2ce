"""Design cost functions on the 6x6 identification normal matrix.

The primary cost is the normalised inverse determinant; the alternatives
(entrywise p-norm condition number, Frobenius condition number, minimum
strain-space point distance) are retained for comparison studies. All
condition-number costs are invariant to the overall strain level.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist
from scipy.special import logsumexp

from .errors import DegenerateSystemError, ParameterError

N_F = 6


def log_det_spd(M: np.ndarray) -> float:
    """Log determinant via Cholesky; raises on an indefinite matrix.

    Accumulating in the log keeps the widely varying determinant magnitudes
    representable across mesh scales.
    """
    try:
        L = scipy.linalg.cholesky(M, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise DegenerateSystemError(
            "normal matrix is not positive definite (disconnected topology?)"
        ) from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass(frozen=True)
class CostContext:
    """Reference state captured at the first evaluation of a run."""

    A_eqb_init: np.ndarray
    log_det_init: float
    kappa_p_init: float
    p: int = 8

    @property
    def det_init(self) -> float:
        return float(np.exp(self.log_det_init))

    @classmethod
    def capture(cls, A_eqb: np.ndarray, p: int = 8) -> "CostContext":
        return cls(
            A_eqb_init=np.array(A_eqb, dtype=float),
            log_det_init=log_det_spd(A_eqb),
            kappa_p_init=p_norm_cond(A_eqb, p),
            p=p,
        )


def det_cost(A_eqb: np.ndarray, ctx: CostContext) -> float:
    """Normalised inverse determinant det(init)/det(current)."""
    return float(np.exp(ctx.log_det_init - log_det_spd(A_eqb)))


def unnormalised_det_cost(A_eqb: np.ndarray) -> float:
    """1/det of the normal matrix, in mm^-12."""
    return float(np.exp(-log_det_spd(A_eqb)))


def matrix_entry_norm(M: np.ndarray, p: float) -> float:
    """Entrywise p-norm of a matrix."""
    return float(np.sum(np.abs(M) ** p) ** (1.0 / p))


def _checked_inverse(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    try:
        inv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSystemError("normal matrix is singular") from exc
    if not np.all(np.isfinite(inv)):
        raise DegenerateSystemError("normal matrix inverse overflowed")
    return inv


def p_norm_cond(M: np.ndarray, p: float) -> float:
    """Condition number in the entrywise p-norm."""
    if p < 2:
        raise ParameterError(f"p must be >= 2, got {p!r}")
    return matrix_entry_norm(M, p) * matrix_entry_norm(_checked_inverse(M), p)


def cost_alt1(A_eqb: np.ndarray, ctx: CostContext) -> float:
    """Normalised p-norm condition cost (kappa_p / kappa_p_init)^p."""
    return float((p_norm_cond(A_eqb, ctx.p) / ctx.kappa_p_init) ** ctx.p)


def frobenius_cond(M: np.ndarray) -> float:
    """Condition number in the Frobenius norm."""
    return matrix_entry_norm(M, 2.0) * matrix_entry_norm(_checked_inverse(M), 2.0)


def two_norm_cond(M: np.ndarray) -> float:
    """Spectral condition number (ratio of extreme singular values)."""
    sv = np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)
    if sv[-1] <= 0.0 or not np.isfinite(sv[0] / sv[-1]):
        raise DegenerateSystemError("normal matrix is numerically singular")
    return float(sv[0] / sv[-1])


def condition_bound_factor(p: float, n_f: int = N_F) -> float:
    """Factor making the entrywise p-norm condition an upper-bound proxy.

    kappa_2 <= kappa_F <= n_f^(2(1 - 2/p)) * kappa_p holds entrywise for any
    invertible n_f x n_f matrix, so minimising kappa_p pushes kappa_2 down.
    """
    return float(n_f ** (2.0 * (1.0 - 2.0 / p)))


def principal_strains(strains: np.ndarray) -> np.ndarray:
    """In-plane principal strains of Voigt strain vectors (..., 3) -> (..., 2)."""
    strains = np.asarray(strains, dtype=float)
    mean = 0.5 * (strains[..., 0] + strains[..., 1])
    radius = np.sqrt(
        (0.5 * (strains[..., 0] - strains[..., 1])) ** 2 + (0.5 * strains[..., 2]) ** 2
    )
    return np.stack([mean + radius, mean - radius], axis=-1)


def min_distance_cost(points: np.ndarray, p: float, d_min_init: float) -> float:
    """Smooth surrogate of the (negated) minimum pairwise point distance.

    ``points`` are strain-space samples, one row per Gauss point. The p-norm
    aggregation over all unique pairwise distances replaces the min operator
    to keep the cost differentiable. Requires a strictly positive reference
    distance, which rules out evenly initialised designs.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ParameterError("need at least two strain-space points")
    if not d_min_init > 0.0:
        raise ParameterError("initial minimum distance must be positive (use a noisy start)")
    d = pdist(points)
    with np.errstate(divide="ignore"):
        log_terms = p * (np.log(d) - np.log(d_min_init))
    return float(-np.exp(logsumexp(log_terms) / p))

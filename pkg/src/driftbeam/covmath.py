"""Hermitian covariance utilities for spatial statistics.

Gaussian divergence between zero-mean complex distributions, diagonal
loading, and the closed-form effect of random per-microphone delay offsets
on steering-vector covariances.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

# Relative tolerance for the Hermitian-symmetry check of covariance bins.
HERMITIAN_RTOL = 1e-12
# Eigenvalues may undershoot zero by this fraction of the mean eigenvalue.
PSD_RTOL = 1e-10
# Condition-number guard for covariance inversion.
CONDITION_LIMIT = 1e12
# Default diagonal-loading fraction of the mean eigenvalue.
DEFAULT_EPSILON_REL = 1e-3


class IllConditionedError(ValueError):
    """Raised when a covariance matrix is too ill-conditioned to invert."""


@dataclass(frozen=True)
class HermitianSpectrum:
    """One Hermitian PSD matrix per frequency bin.

    Attributes:
        bins: complex array of shape (F, M, M)
        frequencies: physical frequency of each bin in rad/s, shape (F,)
    """

    bins: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        freqs = np.asarray(self.frequencies, dtype=np.float64)
        if bins.ndim != 3 or bins.shape[1] != bins.shape[2]:
            raise ValueError(f"bins must have shape (F, M, M), got {bins.shape}")
        if freqs.shape != (bins.shape[0],):
            raise ValueError(
                f"frequencies length {freqs.shape} does not match bin count {bins.shape[0]}"
            )
        defect = np.abs(bins - bins.conj().transpose(0, 2, 1)).max(axis=(1, 2))
        scale = np.abs(bins).max(axis=(1, 2))
        bad = defect > HERMITIAN_RTOL * np.maximum(scale, np.finfo(float).tiny)
        if bad.any():
            raise ValueError(f"bins not Hermitian at indices {np.flatnonzero(bad)[:8]}")
        eigs = np.linalg.eigvalsh(bins)
        mean_eig = np.trace(bins, axis1=1, axis2=2).real / bins.shape[1]
        bad = eigs[:, 0] < -PSD_RTOL * np.maximum(mean_eig, 0.0)
        if bad.any():
            raise ValueError(
                f"bins not positive semidefinite at indices {np.flatnonzero(bad)[:8]}"
            )
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "frequencies", freqs)

    @property
    def bin_count(self) -> int:
        return self.bins.shape[0]

    @property
    def mic_count(self) -> int:
        return self.bins.shape[1]


@dataclass(frozen=True)
class SteeringVector:
    """Unit-modulus arrival-phase vector of a far-field plane wave.

    Attributes:
        entries: complex array of shape (M,), each entry of magnitude one
        frequency: rad/s
    """

    entries: np.ndarray
    frequency: float

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.complex128)
        if entries.ndim != 1:
            raise ValueError(f"entries must be a vector, got shape {entries.shape}")
        if np.abs(np.abs(entries) - 1.0).max() > 1e-12:
            raise ValueError("steering vector entries must have unit magnitude")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "frequency", float(self.frequency))

    @property
    def mic_count(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class PerturbationModel:
    """Independent zero-mean Gaussian delay offsets, one per microphone.

    sigma is the standard deviation of the offsets in seconds.
    """

    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "sigma", float(self.sigma))


def _square(r, name):
    r = np.asarray(r, dtype=np.complex128)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {r.shape}")
    return r


def _check_invertible(r2):
    eigs = np.linalg.eigvalsh(r2)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > CONDITION_LIMIT:
        raise IllConditionedError(
            "covariance is singular or has condition number above 1e12; "
            "apply regularize() before inverting"
        )


def _whitened_eigvals(r1, r2):
    # Eigenvalues of R2^{-1/2} (R1 - R2) R2^{-H/2}; real and >= -1 for PSD r1.
    chol = np.linalg.cholesky(r2)
    half = solve_triangular(chol, r1 - r2, lower=True)
    sym = solve_triangular(chol, half.conj().T, lower=True).conj().T
    sym = 0.5 * (sym + sym.conj().T)
    return np.linalg.eigvalsh(sym)


def gaussian_divergence(r1, r2) -> float:
    """Divergence in nats between zero-mean Gaussians with covariances r1, r2.

    Equal to 0.5 * [trace(R1 R2^{-1} - I) - ln(det R1 / det R2)], evaluated
    as 0.5 * sum(lam - log1p(lam)) over the eigenvalues lam of the whitened
    difference R2^{-1/2} (R1 - R2) R2^{-H/2}. The log1p form stays accurate
    when r1 and r2 are nearly equal, where the trace and log-determinant
    terms would cancel catastrophically.
    """
    r1 = _square(r1, "r1")
    r2 = _square(r2, "r2")
    if r1.shape != r2.shape:
        raise ValueError(f"dimension mismatch: {r1.shape} vs {r2.shape}")
    _check_invertible(r2)
    lam = _whitened_eigvals(r1, r2)
    lam = np.maximum(lam, -1.0 + 1e-18)
    return float(0.5 * np.sum(lam - np.log1p(lam)))


def gaussian_divergence_stack(r1_stack, r2) -> np.ndarray:
    """Divergence of each matrix in r1_stack (..., M, M) against a single r2."""
    r1_stack = np.asarray(r1_stack, dtype=np.complex128)
    r2 = _square(r2, "r2")
    if r1_stack.shape[-2:] != r2.shape:
        raise ValueError(f"dimension mismatch: {r1_stack.shape[-2:]} vs {r2.shape}")
    _check_invertible(r2)
    inv_chol = np.linalg.inv(np.linalg.cholesky(r2))
    sym = inv_chol @ (r1_stack - r2) @ inv_chol.conj().T
    sym = 0.5 * (sym + sym.conj().transpose(*range(sym.ndim - 2), -1, -2))
    lam = np.linalg.eigvalsh(sym)
    lam = np.maximum(lam, -1.0 + 1e-18)
    return 0.5 * np.sum(lam - np.log1p(lam), axis=-1)


def perturbed_covariance(r, omega, model: PerturbationModel) -> np.ndarray:
    """Ensemble covariance of a unit-diagonal source covariance under random delays.

    With each microphone delayed by an independent N(0, sigma^2) offset, every
    off-diagonal entry shrinks by exp(-(omega*sigma)^2) and the lost energy
    moves onto the diagonal, which is preserved exactly:

        out = exp(-omega^2 sigma^2) * r + (1 - exp(-omega^2 sigma^2)) * I
    """
    r = _square(r, "r")
    if np.abs(np.diagonal(r) - 1.0).max() > 1e-8:
        raise ValueError("perturbed_covariance expects a unit-diagonal (power-normalized) matrix")
    att = np.exp(-((omega * model.sigma) ** 2))
    out = att * r + (1.0 - att) * np.eye(r.shape[0])
    np.fill_diagonal(out, np.diagonal(r))
    return out


def far_field_divergence(a1: SteeringVector, a2: SteeringVector, model: PerturbationModel) -> float:
    """Closed-form divergence between two randomly-offset rank-one source covariances.

    Both covariances are the perturbed outer products of unit-modulus steering
    vectors, so their determinants coincide and the divergence reduces to

        (M^2 - |a1^H a2|^2) / (2 (e^x - 1) (e^x - 1 + M)),   x = (omega*sigma)^2.

    Decreasing in frequency and in sigma; zero when the steering vectors match.
    """
    if model.sigma <= 0:
        raise ValueError(
            "sigma must be positive: the unperturbed covariances are rank one "
            "and the divergence is unbounded"
        )
    if a1.entries.shape != a2.entries.shape:
        raise ValueError(
            f"steering dimension mismatch: {a1.entries.shape} vs {a2.entries.shape}"
        )
    if a1.frequency != a2.frequency:
        raise ValueError(f"frequency mismatch: {a1.frequency} vs {a2.frequency}")
    m = a1.mic_count
    x = (a1.frequency * model.sigma) ** 2
    em1 = np.expm1(x)
    overlap = np.abs(np.vdot(a1.entries, a2.entries)) ** 2
    numerator = max(m * m - overlap, 0.0)
    return float(numerator / (2.0 * em1 * (em1 + m)))


def regularize(r, epsilon_rel: float = DEFAULT_EPSILON_REL) -> np.ndarray:
    """Diagonal loading: r + eps*I with eps = epsilon_rel * trace(r)/M.

    Falls back to the absolute floor eps = epsilon_rel for zero-trace input.
    Accepts a single matrix or a stack (..., M, M).
    """
    if epsilon_rel <= 0:
        raise ValueError("epsilon_rel must be positive")
    r = np.asarray(r, dtype=np.complex128)
    if r.ndim < 2 or r.shape[-1] != r.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {r.shape}")
    m = r.shape[-1]
    tr = np.trace(r, axis1=-2, axis2=-1).real
    eps = np.where(tr > 0, epsilon_rel * tr / m, epsilon_rel)
    return r + eps[..., None, None] * np.eye(m)

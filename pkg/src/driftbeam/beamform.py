"""Multichannel Wiener filters built from trained covariance sets.

Row n of each per-bin weight matrix estimates source n as observed at the
reference microphone:

    W[f] = [e_ref^T R_n[f]]_n  (sum_k R_k[f] + R_v[f])^{-1}

The static bank uses the state-averaged (ensemble) covariances, the dynamic
bank holds one weight set per motion state and looks it up frame by frame,
and the rank-one variant replaces each ensemble covariance by its principal
eigenpair before solving.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .covmath import (
    CONDITION_LIMIT,
    DEFAULT_EPSILON_REL,
    HermitianSpectrum,
    IllConditionedError,
    regularize,
)
from .covest import CovarianceSet
from .scene import StateSequence
from .stft import SpectralFrameTensor

MODES = ("static", "dynamic", "rank_one_static")


class StarvedStateError(ValueError):
    """Raised when the dynamic beamformer lacks training data for some state."""


@dataclass(frozen=True)
class BeamformerBank:
    """Per-frequency weight matrices, keyed by motion state for dynamic mode.

    weights maps a state index to an (F, N, M) array; static banks store one
    entry under key 0 and ignore state sequences when applied.
    """

    mode: str
    weights: dict
    reference: int
    frequencies: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for state, w in self.weights.items():
            if not np.isfinite(w).all():
                raise ValueError(f"non-finite beamformer weights for state {state}")

    @property
    def source_count(self) -> int:
        return next(iter(self.weights.values())).shape[1]

    @property
    def mic_count(self) -> int:
        return next(iter(self.weights.values())).shape[2]


def mwf_weights(source_covs, noise_cov: HermitianSpectrum, reference: int,
                epsilon_rel: float = DEFAULT_EPSILON_REL, threads: int = 1) -> np.ndarray:
    """Wiener weights (F, N, M) from per-source and noise covariance spectra.

    The summed covariance is diagonally loaded by epsilon_rel before
    inversion (pass 0 to disable, e.g. with exact model covariances).
    """
    if not source_covs:
        raise ValueError("at least one source covariance is required")
    f_count = noise_cov.bin_count
    m_count = noise_cov.mic_count
    for cov in source_covs:
        if cov.bins.shape != noise_cov.bins.shape:
            raise ValueError("source and noise covariances must share one bin grid")
        if not np.allclose(cov.frequencies, noise_cov.frequencies):
            raise ValueError("source and noise covariances must share one bin grid")
    if not 0 <= reference < m_count:
        raise ValueError(f"reference index {reference} out of range")

    total = noise_cov.bins.copy()
    for cov in source_covs:
        total += cov.bins
    if epsilon_rel > 0:
        total = regularize(total, epsilon_rel)
    eigs = np.linalg.eigvalsh(total)
    bad = (eigs[:, 0] <= 0) | (eigs[:, -1] > CONDITION_LIMIT * eigs[:, 0])
    if bad.any():
        raise IllConditionedError(
            f"summed covariance is ill-conditioned after loading at bins "
            f"{np.flatnonzero(bad)[:8].tolist()}"
        )

    rows = np.stack([cov.bins[:, reference, :] for cov in source_covs], axis=1)  # (F, N, M)
    weights = np.empty_like(rows)

    def solve_block(lo, hi):
        inv = np.linalg.inv(total[lo:hi])
        weights[lo:hi] = rows[lo:hi] @ inv

    if threads <= 1:
        solve_block(0, f_count)
    else:
        edges = np.linspace(0, f_count, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(solve_block, lo, hi)
                for lo, hi in zip(edges[:-1], edges[1:])
                if hi > lo
            ]
            for future in futures:
                future.result()
    return weights


def _principal_component(spectrum: HermitianSpectrum) -> HermitianSpectrum:
    eigvals, eigvecs = np.linalg.eigh(spectrum.bins)
    lam = np.maximum(eigvals[:, -1], 0.0)  # (F,)
    u = eigvecs[:, :, -1]  # (F, M)
    rank_one = lam[:, None, None] * np.einsum("fm,fn->fmn", u, u.conj())
    return HermitianSpectrum(rank_one, spectrum.frequencies)


def build(covs: CovarianceSet, mode: str, reference: int = 0,
          epsilon_rel: float = DEFAULT_EPSILON_REL, threads: int = 1) -> BeamformerBank:
    """Build a beamformer bank of the requested mode from trained covariances."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose one of {MODES}")
    sources = sorted(covs.ensemble)
    if mode == "dynamic":
        missing = [
            (n, state)
            for n in sources
            for state in range(covs.state_count)
            if (n, state) not in covs.per_state
        ]
        if missing:
            raise StarvedStateError(
                f"no training frames for (source, state) pairs: {missing}"
            )
        weights = {
            state: mwf_weights(
                [covs.per_state[(n, state)] for n in sources],
                covs.noise, reference, epsilon_rel, threads,
            )
            for state in range(covs.state_count)
        }
    elif mode == "static":
        weights = {0: mwf_weights([covs.ensemble[n] for n in sources],
                                  covs.noise, reference, epsilon_rel, threads)}
    else:
        rank_one = [_principal_component(covs.ensemble[n]) for n in sources]
        weights = {0: mwf_weights(rank_one, covs.noise, reference, epsilon_rel, threads)}
    return BeamformerBank(
        mode=mode,
        weights=weights,
        reference=reference,
        frequencies=covs.frequencies.copy(),
    )


def apply_bank(bank: BeamformerBank, mixture: SpectralFrameTensor,
               states: StateSequence | None = None) -> np.ndarray:
    """Filter the mixture, returning source estimates of shape (T, F, N).

    Dynamic banks require a state label for every frame; static banks ignore
    the state argument.
    """
    x = mixture.frames
    if x.shape[1] != bank.frequencies.shape[0]:
        raise ValueError("mixture bin grid does not match the beamformer bank")
    if x.shape[2] != bank.mic_count:
        raise ValueError("mixture channel count does not match the beamformer bank")
    if bank.mode != "dynamic":
        return np.einsum("fnm,tfm->tfn", bank.weights[0], x)
    if states is None:
        raise ValueError("a dynamic bank needs a state sequence to apply")
    if states.frame_count != x.shape[0]:
        raise ValueError("state sequence length does not match the mixture")
    missing = sorted(set(states.labels.tolist()) - set(bank.weights))
    if missing:
        raise ValueError(f"no weights for states {missing}")
    out = np.empty((x.shape[0], x.shape[1], bank.source_count), dtype=np.complex128)
    for state in np.unique(states.labels):
        mask = states.labels == state
        out[mask] = np.einsum("fnm,tfm->tfn", bank.weights[int(state)], x[mask])
    return out

"""Sample spatial covariance estimation from training renders, plus
pilot-band identification of the array pose at test time.

Training expects one render per source with that source isolated (plus the
shared diffuse noise) and one source-free render for the noise statistics.
Per-state covariances are accumulated from the frames labeled with each
state; the ensemble covariance is their frame-count-weighted average.
"""

from dataclasses import dataclass

import numpy as np

from .covmath import (
    HermitianSpectrum,
    gaussian_divergence_stack,
    regularize,
)
from .scene import RenderedScene, StateSequence
from .stft import SpectralFrameTensor

# Loading applied to near-rank-one pilot snapshots before matching.
PILOT_EPSILON_REL = 1e-2
# Frames averaged on each side of the current frame when matching.
PILOT_SMOOTHING = 2


@dataclass
class CovarianceSet:
    """Trained second-order statistics of a scene.

    per_state maps (source, state) to the covariance spectrum conditioned on
    that state; ensemble maps source to the state-averaged spectrum; noise is
    estimated from a source-free render. frame_counts records how many
    training frames entered each (source, state) cell. per_state may be empty
    when only static beamforming is needed (continuous-state motion).
    """

    per_state: dict
    ensemble: dict
    noise: HermitianSpectrum
    frame_counts: dict
    state_count: int

    def __post_init__(self):
        for n, ens in self.ensemble.items():
            keys = [key for key in self.per_state if key[0] == n]
            if not keys:
                continue
            total = sum(self.frame_counts[key] for key in keys)
            avg = sum(self.frame_counts[key] * self.per_state[key].bins for key in keys)
            avg /= total
            scale = np.abs(ens.bins).max()
            if np.abs(avg - ens.bins).max() > 1e-9 * max(scale, np.finfo(float).tiny):
                raise ValueError(
                    f"ensemble covariance of source {n} is not the weighted "
                    "average of its per-state covariances"
                )

    @property
    def source_count(self) -> int:
        return len(self.ensemble)

    @property
    def frequencies(self) -> np.ndarray:
        return self.noise.frequencies

    @property
    def mic_count(self) -> int:
        return self.noise.mic_count


def sample_covariance(frames, frequencies) -> HermitianSpectrum:
    """Per-bin average of frame outer products: (1/T) sum_t x[t,f] x[t,f]^H.

    frames: complex (T, F, M) with T >= 1.
    """
    frames = np.asarray(frames, dtype=np.complex128)
    if frames.ndim != 3:
        raise ValueError(f"frames must have shape (T, F, M), got {frames.shape}")
    if frames.shape[0] == 0:
        raise ValueError("cannot estimate a covariance from an empty frame subset")
    x = frames.transpose(1, 2, 0)  # (F, M, T)
    acc = x @ x.conj().transpose(0, 2, 1) / frames.shape[0]
    return HermitianSpectrum(acc, frequencies)


def train(source_renders, noise_render: RenderedScene, per_state: bool = True) -> CovarianceSet:
    """Estimate per-state, ensemble and noise covariances from training renders.

    source_renders: one RenderedScene per source, each with exactly that
    source active. noise_render: a render with no active sources. Set
    per_state=False for continuous-state motion (per-frame jitter), where
    materializing one covariance per frame would be useless and enormous.
    """
    if not source_renders:
        raise ValueError("at least one source render is required")
    for render in source_renders:
        if len(render.active_sources) != 1:
            raise ValueError(
                f"training renders must have exactly one active source, "
                f"got {render.active_sources}"
            )
    if noise_render.active_sources:
        raise ValueError("the noise render must have no active sources")
    indices = sorted(r.active_sources[0] for r in source_renders)
    if indices != list(range(len(source_renders))):
        raise ValueError(f"source renders must cover sources 0..N-1, got {indices}")

    state_count = source_renders[0].truth_states.state_count
    omega = source_renders[0].mixture.bin_omega
    per_state_covs = {}
    ensembles = {}
    counts = {}
    for render in source_renders:
        n = render.active_sources[0]
        if render.truth_states.state_count != state_count:
            raise ValueError("training renders disagree on the number of states")
        frames = render.mixture.frames
        labels = render.truth_states.labels
        if per_state:
            sums = {}
            for state in np.unique(labels):
                subset = frames[labels == state]
                counts[(n, int(state))] = subset.shape[0]
                sums[int(state)] = np.einsum("tfm,tfn->fmn", subset, subset.conj())
                per_state_covs[(n, int(state))] = HermitianSpectrum(
                    sums[int(state)] / subset.shape[0], omega
                )
            total = sum(counts[(n, s)] for s in sums)
            ensembles[n] = HermitianSpectrum(
                sum(counts[(n, s)] * per_state_covs[(n, s)].bins for s in sums) / total,
                omega,
            )
        else:
            ensembles[n] = sample_covariance(frames, omega)
    noise = sample_covariance(noise_render.mixture.frames, omega)
    return CovarianceSet(
        per_state=per_state_covs,
        ensemble=ensembles,
        noise=noise,
        frame_counts=counts,
        state_count=state_count,
    )


def pilot_templates(source_renders) -> dict:
    """Per-state covariance templates at the pilot bins, one spectrum per state.

    Template bin n of state theta is the sample covariance of source n's
    training frames in state theta at that source's pilot bin, so a test
    frame (all pilots active at once) can be matched bin by bin.
    """
    if not source_renders or any(r.pilot_bins is None for r in source_renders):
        raise ValueError("pilot templates require training renders with pilots enabled")
    state_count = source_renders[0].truth_states.state_count
    omega_grid = source_renders[0].mixture.bin_omega
    renders = sorted(source_renders, key=lambda r: r.active_sources[0])
    bins = [r.pilot_bins[r.active_sources[0]] for r in renders]
    omega = omega_grid[list(bins)]

    missing = []
    templates = {}
    for state in range(state_count):
        mats = []
        for render, pilot_bin in zip(renders, bins):
            mask = render.truth_states.labels == state
            if not mask.any():
                missing.append((render.active_sources[0], state))
                continue
            x = render.mixture.frames[mask][:, pilot_bin, :]  # (T', M)
            mats.append(x.T @ x.conj() / x.shape[0])
        if len(mats) == len(renders):
            templates[state] = HermitianSpectrum(np.stack(mats), omega)
    if missing:
        raise ValueError(f"no training frames for (source, state) pairs: {missing}")
    return templates


def estimate_states(mixture: SpectralFrameTensor, templates: dict,
                    smoothing: int = PILOT_SMOOTHING,
                    epsilon_rel: float = PILOT_EPSILON_REL,
                    oracle: StateSequence | None = None) -> StateSequence:
    """Classify each frame's motion state from the pilot bins.

    Each frame's pilot-bin outer product, averaged over +-smoothing frames
    and diagonally loaded, is compared against every state template with the
    Gaussian divergence; the state with the smallest total divergence wins,
    ties going to the lower state index. Pass oracle to bypass estimation.
    """
    if oracle is not None:
        return oracle
    if not templates:
        raise ValueError("state estimation requires pilot templates (pilot disabled?)")
    state_count = max(templates) + 1
    any_template = next(iter(templates.values()))
    omega_grid = mixture.bin_omega
    bins = [int(np.argmin(np.abs(omega_grid - w))) for w in any_template.frequencies]
    spacing = omega_grid[1] - omega_grid[0]
    if np.abs(omega_grid[bins] - any_template.frequencies).max() > 0.5 * spacing:
        raise ValueError("template frequencies do not lie on the mixture bin grid")

    x = mixture.frames[:, bins, :]  # (T, B, M)
    inst = np.einsum("tbm,tbn->tbmn", x, x.conj())
    window = np.ones(2 * smoothing + 1)
    counts = np.convolve(np.ones(inst.shape[0]), window, mode="same")
    summed = np.apply_along_axis(
        lambda v: np.convolve(v, window, mode="same"), 0, inst.reshape(inst.shape[0], -1)
    ).reshape(inst.shape)
    smoothed = regularize(summed / counts[:, None, None, None], epsilon_rel)

    scores = np.zeros((inst.shape[0], state_count))
    scores[:, [s for s in range(state_count) if s not in templates]] = np.inf
    for state, template in templates.items():
        loaded = regularize(template.bins, epsilon_rel)
        for b in range(len(bins)):
            scores[:, state] += gaussian_divergence_stack(smoothed[:, b], loaded[b])
    return StateSequence(np.argmin(scores, axis=1), state_count)

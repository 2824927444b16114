"""Far-field scene simulator for arrays whose microphones move relative to
each other.

Rendering happens directly in the STFT domain: each source image is the
source's reference-channel spectrum multiplied by a per-state steering
vector, diffuse noise is independent complex Gaussian in every
(frame, bin, channel) cell, and optional near-Nyquist pilot tones are
emitted from the source positions so the array pose can be identified frame
by frame. Steering phases are taken relative to the reference microphone,
so the desired signal of every source equals its unmodified spectrum.
"""

from dataclasses import dataclass

import numpy as np

from .covmath import SteeringVector
from .stft import DEFAULT_SAMPLE_RATE, SpectralFrameTensor, StftConfig, analyze

SPEED_OF_SOUND = 343.0

# Spawn keys for the per-purpose RNG streams derived from a scene seed.
_NOISE_STREAM = 1
_JITTER_STREAM = 2
TRAINING_SIGNAL_STREAM = 3
TEST_SIGNAL_STREAM = 4

# Frames are rendered in blocks of this size to bound peak memory.
_FRAME_BLOCK = 256


@dataclass(frozen=True)
class StateSequence:
    """Discrete motion-state label per frame."""

    labels: np.ndarray
    state_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError(f"labels must be 1-D, got shape {labels.shape}")
        if self.state_count < 1:
            raise ValueError("state_count must be at least 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.state_count):
            raise ValueError("state labels out of range")
        object.__setattr__(self, "labels", labels)

    @property
    def frame_count(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class ArrayGeometry:
    """Per-state microphone positions in the horizontal plane.

    state_positions has shape (state_count, M, 2) in meters. The reference
    microphone keeps channel index `reference` in every state.
    """

    state_positions: np.ndarray
    reference: int = 0

    def __post_init__(self):
        pos = np.asarray(self.state_positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise ValueError(
                f"state_positions must have shape (S, M, 2), got {pos.shape}"
            )
        if pos.shape[0] < 1:
            raise ValueError("at least one state is required")
        if not 0 <= self.reference < pos.shape[1]:
            raise ValueError(f"reference index {self.reference} out of range")
        object.__setattr__(self, "state_positions", pos)

    @property
    def state_count(self) -> int:
        return self.state_positions.shape[0]

    @property
    def mic_count(self) -> int:
        return self.state_positions.shape[1]

    @classmethod
    def fixed(cls, positions, reference: int = 0) -> "ArrayGeometry":
        """Single-state geometry from one (M, 2) position array."""
        positions = np.asarray(positions, dtype=np.float64)
        return cls(positions[None, :, :], reference)

    @classmethod
    def rotations(cls, positions, angles_deg, reference: int = 0) -> "ArrayGeometry":
        """One state per angle: all microphones except the reference rotate
        about the centroid of the moving microphones."""
        base = np.asarray(positions, dtype=np.float64)
        moving = np.ones(base.shape[0], dtype=bool)
        moving[reference] = False
        center = base[moving].mean(axis=0)
        states = np.empty((len(angles_deg), base.shape[0], 2))
        for k, angle in enumerate(np.asarray(angles_deg, dtype=np.float64)):
            rad = np.deg2rad(angle)
            rot = np.array([[np.cos(rad), -np.sin(rad)], [np.sin(rad), np.cos(rad)]])
            states[k] = base
            states[k, moving] = (base[moving] - center) @ rot.T + center
        return cls(states, reference)


def linear_positions(mic_count: int = 12, spacing: float = 0.03, reference: int = 0):
    """Reference microphone at the origin, the rest on an x-axis line centered
    on the origin. Returns an (M, 2) array."""
    if mic_count < 1:
        raise ValueError("mic_count must be positive")
    offsets = (np.arange(mic_count - 1) - (mic_count - 2) / 2.0) * spacing
    positions = np.zeros((mic_count, 2))
    others = [m for m in range(mic_count) if m != reference]
    positions[others, 0] = offsets
    return positions


def arc_positions(mic_count: int = 12, radius: float = 0.15, span_deg: float = 180.0,
                  reference: int = 0):
    """Reference microphone at the origin, the rest evenly spread on an arc."""
    if mic_count < 2:
        raise ValueError("arc layout needs at least two microphones")
    angles = np.deg2rad(np.linspace(0.0, span_deg, mic_count - 1))
    positions = np.zeros((mic_count, 2))
    others = [m for m in range(mic_count) if m != reference]
    positions[others, 0] = radius * np.cos(angles)
    positions[others, 1] = radius * np.sin(angles)
    return positions


@dataclass(frozen=True)
class MotionModel:
    """How the array pose evolves over frames.

    kinds:
        static          -- one state, no movement
        gaussian_jitter -- every frame redraws i.i.d. position offsets of
                           std sigma_pos per axis; the state set is
                           effectively continuous (one label per frame)
        rotation_sweep  -- continuous triangle sweep of the array angle
                           between min_deg and max_deg with the given
                           period; the discrete states are the quantization
                           of that angle to state_count levels, so frames
                           within one state still differ by up to half a
                           quantization step (residual deformation)
    """

    kind: str
    sigma_pos: float = 0.0
    jitter_reference: bool = False
    min_deg: float = 0.0
    max_deg: float = 0.0
    period_s: float = 0.0
    state_count: int = 1

    def __post_init__(self):
        if self.kind not in ("static", "gaussian_jitter", "rotation_sweep"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.kind == "gaussian_jitter" and self.sigma_pos < 0:
            raise ValueError("sigma_pos must be nonnegative")
        if self.kind == "rotation_sweep":
            if self.state_count < 2:
                raise ValueError("rotation_sweep needs at least two states")
            if self.period_s <= 0:
                raise ValueError("rotation_sweep needs a positive period")

    @staticmethod
    def static() -> "MotionModel":
        return MotionModel(kind="static")

    @staticmethod
    def gaussian_jitter(sigma_pos: float, jitter_reference: bool = False) -> "MotionModel":
        return MotionModel(kind="gaussian_jitter", sigma_pos=sigma_pos,
                           jitter_reference=jitter_reference)

    @staticmethod
    def rotation_sweep(min_deg: float, max_deg: float, period_s: float,
                       state_count: int) -> "MotionModel":
        return MotionModel(kind="rotation_sweep", min_deg=min_deg, max_deg=max_deg,
                           period_s=period_s, state_count=state_count)

    def sweep_angles(self) -> np.ndarray:
        """The quantized rotation angles, endpoints included."""
        if self.kind != "rotation_sweep":
            raise ValueError("sweep_angles is only defined for rotation_sweep")
        return np.linspace(self.min_deg, self.max_deg, self.state_count)


@dataclass(frozen=True)
class Pilot:
    """Near-Nyquist pilot tone configuration.

    Each source emits one tone; source n uses the bin two steps above source
    n-1, starting at the bin nearest frequency_hz. level_db is relative to
    the source's own broadband power.
    """

    frequency_hz: float
    level_db: float = -20.0


@dataclass(frozen=True)
class Source:
    """A far-field source: arrival azimuth in degrees and its sample signal."""

    azimuth_deg: float
    signal: np.ndarray

    def __post_init__(self):
        signal = np.asarray(self.signal, dtype=np.float64)
        if signal.ndim != 1:
            raise ValueError("source signals must be mono")
        object.__setattr__(self, "signal", signal)


@dataclass(frozen=True)
class SceneSpec:
    """Complete description of a simulated capture."""

    geometry: ArrayGeometry
    sources: tuple
    motion: MotionModel
    noise_level_db: float | None = -30.0
    pilot: Pilot | None = None
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        sources = tuple(self.sources)
        azimuths = [s.azimuth_deg for s in sources]
        if len(set(azimuths)) != len(azimuths):
            raise ValueError("source azimuths must be distinct")
        if self.motion.kind == "rotation_sweep":
            if self.geometry.state_count != self.motion.state_count:
                raise ValueError(
                    f"geometry has {self.geometry.state_count} states but the "
                    f"rotation sweep expects {self.motion.state_count}"
                )
        elif self.geometry.state_count != 1:
            raise ValueError(f"{self.motion.kind} motion requires a single-state geometry")
        object.__setattr__(self, "sources", sources)

    @property
    def source_count(self) -> int:
        return len(self.sources)


@dataclass(frozen=True)
class RenderedScene:
    """Simulator output: the mixture, its additive parts, and ground truth.

    mixture = sum(images) + noise holds entrywise by construction. `desired`
    holds each active source as observed at the reference microphone, shape
    (T, F, n_active).
    """

    mixture: SpectralFrameTensor
    images: tuple
    noise: SpectralFrameTensor
    truth_states: StateSequence
    desired: np.ndarray
    active_sources: tuple
    pilot_bins: tuple | None


def propagation_delays(positions, azimuth_deg, c: float = SPEED_OF_SOUND):
    """Arrival delay of a plane wave from azimuth_deg at each position (seconds).

    Azimuth 0 points along +x; delays grow toward the source direction, so a
    microphone farther along the arrival direction hears the wave earlier in
    relative terms.
    """
    rad = np.deg2rad(azimuth_deg)
    toward = np.array([np.cos(rad), np.sin(rad)])
    return np.asarray(positions, dtype=np.float64) @ toward / c


def steering_vector(positions, azimuth_deg, omega, c: float = SPEED_OF_SOUND) -> SteeringVector:
    """Far-field steering vector exp(j*omega*tau) for the given positions."""
    tau = propagation_delays(positions, azimuth_deg, c)
    return SteeringVector(np.exp(1j * omega * tau), omega)


def _sweep_angle_series(motion: MotionModel, frame_count: int, frame_rate: float):
    """Continuous triangle-wave angle per frame, in degrees."""
    times = np.arange(frame_count) / frame_rate
    phase = (times % motion.period_s) / motion.period_s
    tri = np.where(phase < 0.5, 2.0 * phase, 2.0 * (1.0 - phase))
    return motion.min_deg + tri * (motion.max_deg - motion.min_deg)


def state_sequence(motion: MotionModel, frame_count: int, frame_rate: float) -> StateSequence:
    """Assign one motion state to each of frame_count frames.

    rotation_sweep quantizes the continuous triangle-wave angle to the
    nearest sweep angle; gaussian_jitter treats every frame as a fresh state.
    """
    if frame_count < 1:
        raise ValueError("frame_count must be at least 1")
    if motion.kind == "static":
        return StateSequence(np.zeros(frame_count, dtype=np.int64), 1)
    if motion.kind == "gaussian_jitter":
        return StateSequence(np.arange(frame_count, dtype=np.int64), frame_count)
    angles = _sweep_angle_series(motion, frame_count, frame_rate)
    span = motion.max_deg - motion.min_deg
    labels = np.rint((angles - motion.min_deg) / span * (motion.state_count - 1))
    labels = labels.astype(np.int64)
    return StateSequence(np.clip(labels, 0, motion.state_count - 1), motion.state_count)


def pseudorandom_signals(count: int, samples: int, seed: int,
                         stream: int = TRAINING_SIGNAL_STREAM):
    """Seeded unit-variance white Gaussian source signals, one per source.

    stream separates independent signal families drawn from one scene seed
    (training versus test material).
    """
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, n)))
        .standard_normal(samples)
        for n in range(count)
    ]


def _pilot_bins(spec: SceneSpec, cfg: StftConfig, sample_rate: float):
    if spec.pilot is None:
        return None
    nyquist = sample_rate / 2.0
    if not 0.8 * nyquist < spec.pilot.frequency_hz < nyquist:
        raise ValueError(
            f"pilot frequency {spec.pilot.frequency_hz} Hz must lie in "
            f"({0.8 * nyquist:.0f}, {nyquist:.0f}) Hz"
        )
    bin_width = sample_rate / cfg.fft_size
    base = int(round(spec.pilot.frequency_hz / bin_width))
    bins = tuple(base + 2 * n for n in range(spec.source_count))
    if bins and bins[-1] >= cfg.bin_count - 1:
        raise ValueError(
            f"pilot bins {bins} run past the last usable bin {cfg.bin_count - 2}; "
            "lower the pilot frequency"
        )
    return bins


def _relative_positions(geometry: ArrayGeometry):
    pos = geometry.state_positions
    return pos - pos[:, geometry.reference:geometry.reference + 1, :]


def render(spec: SceneSpec, duration_s: float, cfg: StftConfig = StftConfig(),
           sample_rate: float = DEFAULT_SAMPLE_RATE, seed: int = 0,
           active_sources=None) -> RenderedScene:
    """Simulate the array capture of the configured scene.

    active_sources selects which sources contribute images (default all);
    inactive sources still define the diffuse-noise power reference, so
    isolated-source and noise-only training renders share one noise level.
    """
    n_samples = int(round(duration_s * sample_rate))
    if n_samples < cfg.fft_size:
        raise ValueError(f"duration {duration_s} s is shorter than one frame")
    for n, src in enumerate(spec.sources):
        if src.signal.shape[0] < n_samples:
            raise ValueError(
                f"source {n} signal has {src.signal.shape[0]} samples, "
                f"need {n_samples}"
            )
    if active_sources is None:
        active = tuple(range(spec.source_count))
    else:
        active = tuple(sorted(active_sources))
        if any(not 0 <= n < spec.source_count for n in active):
            raise ValueError(f"active_sources {active} out of range")

    # Reference-channel spectra of every source, (T, F) each.
    spectra = [
        analyze(src.signal[:n_samples], cfg, sample_rate).frames[:, :, 0]
        for src in spec.sources
    ]
    t_count = spectra[0].shape[0]
    f_count = spectra[0].shape[1]
    m_count = spec.geometry.mic_count
    omega = 2.0 * np.pi * np.fft.rfftfreq(cfg.fft_size, d=1.0 / sample_rate)

    states = state_sequence(spec.motion, t_count, sample_rate / cfg.hop)
    pilot_bins = _pilot_bins(spec, cfg, sample_rate)

    # Noise power reference over all configured sources, taken before pilot
    # injection so renders with different active sets share one noise level.
    noise_cell_power = float(np.mean([np.mean(np.abs(s) ** 2) for s in spectra]))

    # Inject pilot tones into the reference spectra so that images, mixture
    # and desired signals all carry them consistently.
    if pilot_bins is not None:
        frame_advance = np.arange(t_count)[:, None] * cfg.hop
        for n in active:
            power = np.mean(np.sum(np.abs(spectra[n]) ** 2, axis=1))
            amp = np.sqrt(power * 10.0 ** (spec.pilot.level_db / 10.0))
            digital = 2.0 * np.pi * pilot_bins[n] / cfg.fft_size
            tone = amp * np.exp(1j * digital * frame_advance[:, 0])
            spectra[n] = spectra[n].copy()
            spectra[n][:, pilot_bins[n]] += tone

    frame_rel = _frame_relative_positions(
        spec, t_count, sample_rate / cfg.hop, seed
    )  # (T, M, 2) for moving scenes, None for static
    images = []
    for n in active:
        image = np.empty((t_count, f_count, m_count), dtype=np.complex128)
        if frame_rel is None:
            rel = _relative_positions(spec.geometry)[0]
            tau = propagation_delays(rel, spec.sources[n].azimuth_deg,
                                     spec.speed_of_sound)
            phases = np.exp(1j * omega[:, None] * tau[None, :])  # (F, M)
            image[:] = spectra[n][:, :, None] * phases[None, :, :]
        else:
            tau = _frame_delays(frame_rel, spec.sources[n].azimuth_deg,
                                spec.speed_of_sound)  # (T, M)
            for start in range(0, t_count, _FRAME_BLOCK):
                stop = min(start + _FRAME_BLOCK, t_count)
                phases = np.exp(1j * omega[None, :, None] * tau[start:stop, None, :])
                image[start:stop] = spectra[n][start:stop, :, None] * phases
        images.append(image)

    noise = _diffuse_noise(spec, noise_cell_power, (t_count, f_count, m_count), seed)
    mixture = noise.copy()
    for image in images:
        mixture += image

    def tensor(data):
        return SpectralFrameTensor(data, sample_rate, cfg.fft_size, cfg.hop)

    desired = np.stack([spectra[n] for n in active], axis=-1) if active else \
        np.zeros((t_count, f_count, 0), dtype=np.complex128)
    return RenderedScene(
        mixture=tensor(mixture),
        images=tuple(tensor(image) for image in images),
        noise=tensor(noise),
        truth_states=states,
        desired=desired,
        active_sources=active,
        pilot_bins=pilot_bins,
    )


def _frame_relative_positions(spec: SceneSpec, t_count: int, frame_rate: float,
                              seed: int):
    """Per-frame microphone positions relative to the reference channel.

    Returns (T, M, 2) for moving scenes, or None for static ones (where the
    single-state geometry applies to every frame).
    """
    motion = spec.motion
    ref = spec.geometry.reference
    if motion.kind == "static":
        return None
    if motion.kind == "gaussian_jitter":
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(_JITTER_STREAM,))
        )
        offsets = rng.standard_normal((t_count, spec.geometry.mic_count, 2))
        offsets *= motion.sigma_pos
        if not motion.jitter_reference:
            offsets[:, ref, :] = 0.0
        absolute = spec.geometry.state_positions[0][None, :, :] + offsets
        return absolute - absolute[:, ref:ref + 1, :]
    # rotation_sweep: rotate the moving microphones continuously about their
    # centroid; state_positions[0] holds the pose at min_deg.
    angles = _sweep_angle_series(motion, t_count, frame_rate) - motion.min_deg
    base = spec.geometry.state_positions[0]
    moving = np.ones(base.shape[0], dtype=bool)
    moving[ref] = False
    center = base[moving].mean(axis=0)
    rad = np.deg2rad(angles)
    cos, sin = np.cos(rad), np.sin(rad)
    q = base[moving] - center  # (Mm, 2)
    absolute = np.repeat(base[None, :, :], t_count, axis=0)
    absolute[:, moving, 0] = cos[:, None] * q[:, 0] - sin[:, None] * q[:, 1] + center[0]
    absolute[:, moving, 1] = sin[:, None] * q[:, 0] + cos[:, None] * q[:, 1] + center[1]
    return absolute - absolute[:, ref:ref + 1, :]


def _frame_delays(frame_rel, azimuth_deg, c):
    # Relative arrival delays for every frame, (T, M).
    rad = np.deg2rad(azimuth_deg)
    toward = np.array([np.cos(rad), np.sin(rad)])
    return frame_rel @ toward / c


def _diffuse_noise(spec: SceneSpec, cell_power: float, shape, seed: int):
    t_count, f_count, m_count = shape
    if spec.noise_level_db is None:
        return np.zeros(shape, dtype=np.complex128)
    variance = cell_power * 10.0 ** (spec.noise_level_db / 10.0)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_NOISE_STREAM,)))
    draws = rng.standard_normal((t_count, f_count, m_count, 2))
    noise = (draws[..., 0] + 1j * draws[..., 1]) * np.sqrt(variance / 2.0)
    # DC and Nyquist bins of a real signal carry no quadrature component.
    noise[:, 0, :] = draws[:, 0, :, 0] * np.sqrt(variance)
    noise[:, -1, :] = draws[:, -1, :, 0] * np.sqrt(variance)
    return noise

import numpy as np
import pytest

from driftbeam import covest, covmath, scene
from driftbeam.stft import StftConfig

CFG = StftConfig(fft_size=256, hop=128)
FS = 16000


def build_spec(mic_count=4, azimuths=(30.0, 120.0), duration=2.0, motion=None,
               noise_level_db=-30.0, pilot=None, spacing=0.04, seed=0):
    samples = int(duration * FS)
    signals = scene.pseudorandom_signals(len(azimuths), samples, seed)
    motion = motion or scene.MotionModel.static()
    if motion.kind == "rotation_sweep":
        geometry = scene.ArrayGeometry.rotations(
            scene.linear_positions(mic_count, spacing), motion.sweep_angles()
        )
    else:
        geometry = scene.ArrayGeometry.fixed(scene.linear_positions(mic_count, spacing))
    return scene.SceneSpec(
        geometry=geometry,
        sources=tuple(scene.Source(az, s) for az, s in zip(azimuths, signals)),
        motion=motion,
        noise_level_db=noise_level_db,
        pilot=pilot,
    )


def training_renders(spec, duration, seed=100):
    count = spec.source_count
    renders = [
        scene.render(spec, duration, CFG, FS, seed=seed + n, active_sources=[n])
        for n in range(count)
    ]
    noise = scene.render(spec, duration, CFG, FS, seed=seed + count, active_sources=[])
    return renders, noise


class TestSampleCovariance:
    def test_single_frame_is_outer_product(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 5, 3)) + 1j * rng.standard_normal((1, 5, 3))
        cov = covest.sample_covariance(x, np.arange(5.0))
        for f in range(5):
            np.testing.assert_allclose(cov.bins[f], np.outer(x[0, f], x[0, f].conj()),
                                       atol=1e-14)

    def test_white_noise_converges_to_identity(self):
        rng = np.random.default_rng(1)
        t, m = 100_000, 4
        x = (rng.standard_normal((t, 1, m)) + 1j * rng.standard_normal((t, 1, m)))
        x /= np.sqrt(2.0)
        cov = covest.sample_covariance(x, np.zeros(1))
        se = 1.0 / np.sqrt(t)
        assert np.abs(cov.bins[0] - np.eye(m)).max() < 3.0 * se

    def test_static_source_principal_eigenvector_matches_steering(self):
        spec = build_spec(azimuths=(80.0,), noise_level_db=-40.0, duration=4.0)
        rendered = scene.render(spec, 4.0, CFG, FS, seed=2)
        cov = covest.sample_covariance(rendered.mixture.frames, rendered.mixture.bin_omega)
        rel = spec.geometry.state_positions[0] - spec.geometry.state_positions[0][0]
        for f in (20, 60, 100):
            sv = scene.steering_vector(rel, 80.0, rendered.mixture.bin_omega[f]).entries
            principal = np.linalg.eigh(cov.bins[f])[1][:, -1]
            cosine = np.abs(np.vdot(sv, principal)) / np.linalg.norm(sv)
            assert cosine > 0.999

    def test_empty_subset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            covest.sample_covariance(np.zeros((0, 4, 2), complex), np.zeros(4))


class TestTrain:
    def test_static_scene_per_state_equals_ensemble(self):
        spec = build_spec()
        renders, noise = training_renders(spec, 2.0)
        covs = covest.train(renders, noise)
        assert covs.state_count == 1
        for n in range(2):
            np.testing.assert_allclose(
                covs.per_state[(n, 0)].bins, covs.ensemble[n].bins, atol=1e-12
            )

    def test_rotation_sweep_populates_all_states(self):
        motion = scene.MotionModel.rotation_sweep(-45.0, 45.0, period_s=4.0, state_count=10)
        spec = build_spec(motion=motion, duration=4.0)
        renders, noise = training_renders(spec, 4.0)
        covs = covest.train(renders, noise)
        for n in range(2):
            for state in range(10):
                assert (n, state) in covs.per_state
                assert covs.frame_counts[(n, state)] > 0

    def test_ensemble_is_weighted_average(self):
        motion = scene.MotionModel.rotation_sweep(-45.0, 45.0, period_s=3.0, state_count=5)
        spec = build_spec(motion=motion, duration=3.0)
        renders, noise = training_renders(spec, 3.0)
        covs = covest.train(renders, noise)
        for n in range(2):
            total = sum(covs.frame_counts[(n, s)] for s in range(5))
            avg = sum(
                covs.frame_counts[(n, s)] * covs.per_state[(n, s)].bins
                for s in range(5)
            ) / total
            scale = np.abs(covs.ensemble[n].bins).max()
            assert np.abs(avg - covs.ensemble[n].bins).max() < 1e-9 * scale

    def test_split_half_ensembles_agree(self):
        # Two disjoint halves of the training data give ensemble estimates
        # within sampling error of each other.
        spec = build_spec(duration=40.0, noise_level_db=-30.0)
        rendered = scene.render(spec, 40.0, CFG, FS, seed=3, active_sources=[0])
        frames = rendered.mixture.frames
        half = frames.shape[0] // 2
        omega = rendered.mixture.bin_omega
        first = covest.sample_covariance(frames[:half], omega)
        second = covest.sample_covariance(frames[half:2 * half], omega)
        hz = omega / (2.0 * np.pi)
        low = hz < 2000.0
        for f in np.flatnonzero(low):
            d = covmath.gaussian_divergence(
                covmath.regularize(first.bins[f], 1e-3),
                covmath.regularize(second.bins[f], 1e-3),
            )
            assert d < 0.1

    def test_per_state_false_skips_materialization(self):
        motion = scene.MotionModel.gaussian_jitter(0.004)
        spec = build_spec(motion=motion)
        renders, noise = training_renders(spec, 2.0)
        covs = covest.train(renders, noise, per_state=False)
        assert covs.per_state == {}
        assert set(covs.ensemble) == {0, 1}

    def test_multi_source_render_rejected(self):
        spec = build_spec()
        bad = scene.render(spec, 1.0, CFG, FS, seed=4)
        noise = scene.render(spec, 1.0, CFG, FS, seed=5, active_sources=[])
        with pytest.raises(ValueError, match="exactly one"):
            covest.train([bad, bad], noise)

    def test_noise_render_must_be_source_free(self):
        spec = build_spec()
        renders, _ = training_renders(spec, 1.0)
        with pytest.raises(ValueError, match="no active sources"):
            covest.train(renders, renders[0])

    def test_inconsistent_ensemble_rejected(self):
        rng = np.random.default_rng(6)
        freq = np.arange(3.0)
        bins = np.stack([np.eye(2, dtype=complex)] * 3)
        good = covmath.HermitianSpectrum(bins, freq)
        wrong = covmath.HermitianSpectrum(2.0 * bins, freq)
        with pytest.raises(ValueError, match="weighted"):
            covest.CovarianceSet(
                per_state={(0, 0): good},
                ensemble={0: wrong},
                noise=good,
                frame_counts={(0, 0): 10},
                state_count=1,
            )


@pytest.fixture(scope="module")
def rotation_setup():
    motion = scene.MotionModel.rotation_sweep(-45.0, 45.0, period_s=20.0,
                                              state_count=10)
    spec = build_spec(mic_count=6, azimuths=(30.0, 120.0), duration=20.0,
                      motion=motion, noise_level_db=None,
                      pilot=scene.Pilot(7000.0, -10.0), spacing=0.02)
    cfg = StftConfig()
    renders = [
        scene.render(spec, 20.0, cfg, FS, seed=400 + n, active_sources=[n])
        for n in range(2)
    ]
    templates = covest.pilot_templates(renders)
    test = scene.render(spec, 20.0, cfg, FS, seed=444)
    return templates, test


class TestEstimateStates:
    def test_static_scene_constant_estimate(self):
        spec = build_spec(pilot=scene.Pilot(7000.0, -10.0), noise_level_db=None,
                          duration=4.0)
        renders, _ = training_renders(spec, 4.0)
        templates = covest.pilot_templates(renders)
        test = scene.render(spec, 4.0, CFG, FS, seed=7)
        est = covest.estimate_states(test.mixture, templates)
        assert est.state_count == 1
        assert not est.labels.any()

    def test_rotation_sweep_accuracy(self, rotation_setup):
        templates, test = rotation_setup
        est = covest.estimate_states(test.mixture, templates)
        agreement = (est.labels == test.truth_states.labels).mean()
        assert agreement >= 0.95

    def test_oracle_bypass(self, rotation_setup):
        templates, test = rotation_setup
        est = covest.estimate_states(test.mixture, templates, oracle=test.truth_states)
        assert est is test.truth_states

    def test_missing_templates_rejected(self):
        spec = build_spec()
        test = scene.render(spec, 1.0, CFG, FS, seed=8)
        with pytest.raises(ValueError, match="pilot"):
            covest.estimate_states(test.mixture, {})

    def test_templates_require_pilots(self):
        spec = build_spec(pilot=None)
        renders, _ = training_renders(spec, 1.0)
        with pytest.raises(ValueError, match="pilot"):
            covest.pilot_templates(renders)

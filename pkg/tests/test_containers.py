import numpy as np
import pytest

from driftbeam import beamform, containers, covest, covmath, scene
from driftbeam.stft import StftConfig

CFG = StftConfig(fft_size=256, hop=128)
FS = 16000


@pytest.fixture(scope="module")
def trained():
    motion = scene.MotionModel.rotation_sweep(-30.0, 30.0, period_s=2.0, state_count=4)
    geometry = scene.ArrayGeometry.rotations(
        scene.linear_positions(3, 0.04), motion.sweep_angles()
    )
    samples = 2 * FS
    signals = scene.pseudorandom_signals(2, samples, 0)
    spec = scene.SceneSpec(
        geometry=geometry,
        sources=(scene.Source(30.0, signals[0]), scene.Source(120.0, signals[1])),
        motion=motion,
        noise_level_db=-30.0,
        pilot=scene.Pilot(7000.0),
    )
    renders = [
        scene.render(spec, 2.0, CFG, FS, seed=10 + n, active_sources=[n])
        for n in range(2)
    ]
    noise = scene.render(spec, 2.0, CFG, FS, seed=20, active_sources=[])
    covs = covest.train(renders, noise)
    templates = covest.pilot_templates(renders)
    return covs, templates


def test_covariance_round_trip(trained, tmp_path):
    covs, templates = trained
    path = tmp_path / "covs.npz"
    containers.save_covariances(path, covs, templates)
    loaded, loaded_templates = containers.load_covariances(path)
    assert loaded.state_count == covs.state_count
    assert sorted(loaded.ensemble) == sorted(covs.ensemble)
    for n in covs.ensemble:
        np.testing.assert_array_equal(loaded.ensemble[n].bins, covs.ensemble[n].bins)
    for key in covs.per_state:
        np.testing.assert_array_equal(loaded.per_state[key].bins, covs.per_state[key].bins)
        assert loaded.frame_counts[key] == covs.frame_counts[key]
    np.testing.assert_array_equal(loaded.noise.bins, covs.noise.bins)
    assert sorted(loaded_templates) == sorted(templates)
    for state in templates:
        np.testing.assert_array_equal(
            loaded_templates[state].bins, templates[state].bins
        )


def test_covariance_container_without_templates(trained, tmp_path):
    covs, _ = trained
    path = tmp_path / "covs.npz"
    containers.save_covariances(path, covs)
    _, templates = containers.load_covariances(path)
    assert templates == {}


def test_bank_round_trip(trained, tmp_path):
    covs, _ = trained
    bank = beamform.build(covs, "dynamic")
    path = tmp_path / "bank.npz"
    containers.save_bank(path, bank)
    loaded = containers.load_bank(path)
    assert loaded.mode == "dynamic"
    assert loaded.reference == bank.reference
    assert sorted(loaded.weights) == sorted(bank.weights)
    for state in bank.weights:
        np.testing.assert_array_equal(loaded.weights[state], bank.weights[state])


def test_containers_are_byte_stable(trained, tmp_path):
    covs, templates = trained
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    containers.save_covariances(a, covs, templates)
    containers.save_covariances(b, covs, templates)
    assert a.read_bytes() == b.read_bytes()


def test_kind_mismatch_rejected(trained, tmp_path):
    covs, _ = trained
    path = tmp_path / "covs.npz"
    containers.save_covariances(path, covs)
    with pytest.raises(ValueError, match="bank"):
        containers.load_bank(path)

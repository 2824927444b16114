"""Command-line front end: scene configuration, experiment orchestration and
artifact persistence.

Subcommands:
    simulate  render the test scene and write mixture/image WAVs plus the
              true state track
    train     render the training scenes and write the covariance container
    beamform  build banks from a covariance container, filter the test scene,
              write bank containers and enhanced WAVs
    analyze   full pipeline: train, build every requested mode, filter,
              write gain and divergence CSVs, banks and manifests
    theory    closed-form divergence-vs-frequency curves for the configured
              geometry over a list of delay-jitter sigmas
    report    merge the gain CSVs in an output directory into report.csv

Configuration is a JSON file; every field has a default except the seed,
which must be given (in the file or with --seed) so runs are reproducible.
CLI flags override config fields. WAV files must match the configured sample
rate; mismatched rates are rejected, never resampled.
"""

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import beamform, containers, covest, evaluate, scene
from .stft import SpectralFrameTensor, StftConfig, synthesize

DEFAULT_CONFIG = {
    "sample_rate": 16000,
    "speed_of_sound": 343.0,
    "stft": {"fft_size": 1024, "hop": 512, "window": "sqrt_hann"},
    "geometry": {
        "layout": "linear",
        "mic_count": 12,
        "spacing": 0.05,
        "radius": 0.25,
        "span_deg": 180.0,
        "reference": 0,
        "positions": None,
    },
    "sources": {"azimuths_deg": [0.0, 45.0, 90.0, 135.0, 180.0], "wav_paths": None},
    "noise_level_db": -30.0,
    "motion": {
        "kind": "static",
        "sigma_pos_m": 0.0,
        "jitter_reference": False,
        "min_deg": -45.0,
        "max_deg": 45.0,
        "period_s": 20.0,
        "state_count": 10,
    },
    "pilot": {"enabled": True, "frequency_hz": 7000.0, "level_db": -20.0},
    "train_duration_s": 20.0,
    "test_duration_s": 20.0,
    "modes": ["static"],
    "state_oracle": False,
    "theory": {"sigmas_s": [1e-5, 2e-5, 5e-5], "points": 128},
    "threads": 1,
    "out_dir": "out",
}

MODE_NAMES = {"static": "static", "dynamic": "dynamic", "rank1": "rank_one_static"}


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage label for diagnostics."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage


def _merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path=None, overrides=None):
    """Merge defaults, the optional JSON config file, and CLI overrides."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            config = _merge(config, json.load(fh))
    if overrides:
        config = _merge(config, overrides)
    if "seed" not in config or config["seed"] is None:
        raise ValueError("a seed is required (config key 'seed' or --seed)")
    config["seed"] = int(config["seed"])
    wavs = config["sources"].get("wav_paths")
    if wavs:
        for p in wavs:
            if not Path(p).is_file():
                raise ValueError(f"source WAV not found: {p}")
    return config


def _stft_config(config):
    s = config["stft"]
    return StftConfig(fft_size=s["fft_size"], hop=s["hop"], window=s["window"])


def _motion(config):
    m = config["motion"]
    if m["kind"] == "static":
        return scene.MotionModel.static()
    if m["kind"] == "gaussian_jitter":
        return scene.MotionModel.gaussian_jitter(m["sigma_pos_m"], m["jitter_reference"])
    if m["kind"] == "rotation_sweep":
        return scene.MotionModel.rotation_sweep(
            m["min_deg"], m["max_deg"], m["period_s"], m["state_count"]
        )
    raise ValueError(f"unknown motion kind {m['kind']!r}")


def _geometry(config, motion):
    g = config["geometry"]
    if g.get("positions") is not None:
        base = np.asarray(g["positions"], dtype=np.float64)
    elif g["layout"] == "linear":
        base = scene.linear_positions(g["mic_count"], g["spacing"], g["reference"])
    elif g["layout"] == "arc":
        base = scene.arc_positions(
            g["mic_count"], g["radius"], g["span_deg"], g["reference"]
        )
    else:
        raise ValueError(f"unknown geometry layout {g['layout']!r}")
    if motion.kind == "rotation_sweep":
        return scene.ArrayGeometry.rotations(base, motion.sweep_angles(), g["reference"])
    return scene.ArrayGeometry.fixed(base, g["reference"])


def _pilot(config):
    p = config["pilot"]
    if not p.get("enabled", False):
        return None
    return scene.Pilot(frequency_hz=p["frequency_hz"], level_db=p["level_db"])


def read_wav(path, expected_rate):
    rate, data = wavfile.read(path)
    if rate != expected_rate:
        raise ValueError(
            f"{path}: sample rate {rate} Hz does not match the configured "
            f"{expected_rate} Hz (resampling is not performed)"
        )
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    if data.ndim == 2:
        data = data[:, 0]
    return data


def write_wav(path, data, sample_rate):
    wavfile.write(path, int(sample_rate), np.asarray(data, dtype=np.float32))


def _test_signals(config, samples):
    wavs = config["sources"].get("wav_paths")
    count = len(config["sources"]["azimuths_deg"])
    if wavs:
        if len(wavs) != count:
            raise ValueError(
                f"{len(wavs)} WAV paths given for {count} source azimuths"
            )
        signals = [read_wav(p, config["sample_rate"]) for p in wavs]
    else:
        signals = scene.pseudorandom_signals(
            count, samples, config["seed"], scene.TEST_SIGNAL_STREAM
        )
    return signals


def _scene_spec(config, signals, motion=None):
    motion = motion if motion is not None else _motion(config)
    geometry = _geometry(config, motion)
    azimuths = config["sources"]["azimuths_deg"]
    sources = tuple(
        scene.Source(azimuth_deg=float(az), signal=sig)
        for az, sig in zip(azimuths, signals)
    )
    return scene.SceneSpec(
        geometry=geometry,
        sources=sources,
        motion=motion,
        noise_level_db=config["noise_level_db"],
        pilot=_pilot(config),
        speed_of_sound=config["speed_of_sound"],
    )


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(path, config, inputs, outputs):
    """Record the config snapshot and the hash of every input/output file."""
    manifest = {
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(config):
    out = Path(config["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_simulate(config):
    """Render the test scene; write mixture and image WAVs, the state track
    and a manifest. Returns the list of written paths."""
    if config["test_duration_s"] <= 0:
        raise ValueError("test_duration_s must be positive")
    out = _out_dir(config)
    cfg = _stft_config(config)
    rate = config["sample_rate"]
    samples = int(round(config["test_duration_s"] * rate))
    signals = _test_signals(config, samples)
    spec = _scene_spec(config, signals)
    rendered = scene.render(
        spec, config["test_duration_s"], cfg, rate, seed=config["seed"]
    )

    outputs = []
    mixture_path = out / "mixture.wav"
    write_wav(mixture_path, synthesize(rendered.mixture, cfg), rate)
    outputs.append(mixture_path)
    for n, image in zip(rendered.active_sources, rendered.images):
        path = out / f"image_{n:02d}.wav"
        write_wav(path, synthesize(image, cfg), rate)
        outputs.append(path)
    states_path = out / "states.csv"
    evaluate.write_table(states_path, {
        "frame": np.arange(rendered.truth_states.frame_count),
        "state": rendered.truth_states.labels,
    })
    outputs.append(states_path)
    manifest = out / "simulate_manifest.json"
    write_manifest(manifest, config, _input_files(config), outputs)
    return outputs + [manifest]


def _input_files(config):
    return list(config["sources"].get("wav_paths") or [])


def _render_training(config):
    """Isolated-source renders plus a source-free render for the noise."""
    cfg = _stft_config(config)
    rate = config["sample_rate"]
    duration = config["train_duration_s"]
    samples = int(round(duration * rate))
    count = len(config["sources"]["azimuths_deg"])
    signals = scene.pseudorandom_signals(count, samples, config["seed"])
    spec = _scene_spec(config, signals)
    renders = [
        scene.render(spec, duration, cfg, rate, seed=config["seed"] + 1 + n,
                     active_sources=[n])
        for n in range(count)
    ]
    noise_render = scene.render(
        spec, duration, cfg, rate, seed=config["seed"] + 1 + count, active_sources=[]
    )
    return renders, noise_render


def _wants_dynamic(config):
    return any(MODE_NAMES.get(m, m) == "dynamic" for m in config["modes"])


def run_train(config):
    """Train covariances (and pilot templates when needed); write the container."""
    out = _out_dir(config)
    motion = _motion(config)
    per_state = motion.kind != "gaussian_jitter"
    if _wants_dynamic(config) and motion.kind == "gaussian_jitter":
        raise ValueError(
            "dynamic beamforming needs discrete motion states; gaussian_jitter "
            "scenes support only the static modes"
        )
    renders, noise_render = _render_training(config)
    covs = covest.train(renders, noise_render, per_state=per_state)
    templates = None
    if _wants_dynamic(config) and not config["state_oracle"]:
        templates = covest.pilot_templates(renders)
    path = out / "covariances.npz"
    containers.save_covariances(path, covs, templates)
    write_manifest(out / "train_manifest.json", config, _input_files(config), [path])
    return covs, templates, path


def _test_render(config):
    cfg = _stft_config(config)
    rate = config["sample_rate"]
    samples = int(round(config["test_duration_s"] * rate))
    signals = _test_signals(config, samples)
    spec = _scene_spec(config, signals)
    return scene.render(spec, config["test_duration_s"], cfg, rate, seed=config["seed"])


def _states_for(config, bank, rendered, templates):
    if bank.mode != "dynamic":
        return None
    if config["state_oracle"]:
        return rendered.truth_states
    return covest.estimate_states(rendered.mixture, templates or {})


def run_pipeline(config):
    """Full experiment: train, build each requested mode, filter the test
    scene, and write gain/divergence CSVs, banks and manifests."""
    out = _out_dir(config)
    try:
        covs, templates, cov_path = run_train(config)
    except StageError:
        raise
    except Exception as err:
        raise StageError("train", err) from err

    try:
        rendered = _test_render(config)
    except Exception as err:
        raise StageError("simulate", err) from err

    cfg_threads = int(config.get("threads", 1))
    reference = config["geometry"]["reference"]
    outputs = [cov_path]
    for mode_arg in config["modes"]:
        mode = MODE_NAMES.get(mode_arg, mode_arg)
        try:
            bank = beamform.build(covs, mode, reference=reference, threads=cfg_threads)
            states = _states_for(config, bank, rendered, templates)
            estimates = beamform.apply_bank(bank, rendered.mixture, states)
        except Exception as err:
            raise StageError(f"beamform:{mode}", err) from err
        try:
            report = evaluate.gain(
                estimates,
                rendered.mixture.frames[:, :, reference],
                rendered.desired,
                rendered.mixture.bin_hz,
                scene_id=str(config["seed"]),
                mode=mode,
            )
            gain_path = out / f"gain_{mode_arg}.csv"
            evaluate.write_table(gain_path, report.table())
            outputs.append(gain_path)
            bank_path = out / f"bank_{mode_arg}.npz"
            containers.save_bank(bank_path, bank)
            outputs.append(bank_path)
        except Exception as err:
            raise StageError(f"analyze:{mode}", err) from err

    try:
        div_path = out / "divergence.csv"
        evaluate.write_table(div_path, _divergence_table(covs))
        outputs.append(div_path)
    except Exception as err:
        raise StageError("analyze:divergence", err) from err

    write_manifest(out / "pipeline_manifest.json", config, _input_files(config), outputs)
    return outputs + [out / "pipeline_manifest.json"]


def _divergence_table(covs):
    """Default separability curves: between-source ensemble divergence, and
    when per-state statistics exist, the same pairs within the middle state
    plus the extreme-state divergence of source 0."""
    n = covs.source_count
    named = {}
    if n >= 2:
        named["div_between_source_ensemble"] = evaluate.outer_vs_central_pairs(n)
    if covs.per_state and n >= 2:
        mid = covs.state_count // 2
        named["div_between_source_state"] = evaluate.outer_vs_central_pairs(n, state=mid)
        named["div_between_state"] = [((0, 0), (0, covs.state_count - 1))]
    if not named:
        raise ValueError("divergence curves need at least two sources")
    return evaluate.divergence_curve(covs, named)


def run_beamform(config, covariances_path=None):
    """Build banks from a covariance container, filter the test scene, and
    write enhanced WAVs alongside the bank containers."""
    out = _out_dir(config)
    cov_path = Path(covariances_path or out / "covariances.npz")
    if not cov_path.is_file():
        raise ValueError(f"covariance container not found: {cov_path}")
    covs, templates = containers.load_covariances(cov_path)
    rendered = _test_render(config)
    cfg = _stft_config(config)
    reference = config["geometry"]["reference"]
    outputs = []
    for mode_arg in config["modes"]:
        mode = MODE_NAMES.get(mode_arg, mode_arg)
        bank = beamform.build(covs, mode, reference=reference,
                              threads=int(config.get("threads", 1)))
        states = _states_for(config, bank, rendered, templates)
        estimates = beamform.apply_bank(bank, rendered.mixture, states)
        bank_path = out / f"bank_{mode_arg}.npz"
        containers.save_bank(bank_path, bank)
        outputs.append(bank_path)
        for col, n in enumerate(rendered.active_sources):
            mono = SpectralFrameTensor(
                estimates[:, :, col:col + 1], rendered.mixture.sample_rate,
                rendered.mixture.fft_size, rendered.mixture.hop,
            )
            wav_path = out / f"enhanced_{mode_arg}_{n:02d}.wav"
            write_wav(wav_path, synthesize(mono, cfg), config["sample_rate"])
            outputs.append(wav_path)
    write_manifest(out / "beamform_manifest.json", config,
                   [cov_path] + _input_files(config), outputs)
    return outputs


def run_theory(config):
    """Closed-form divergence curves for the configured geometry."""
    out = _out_dir(config)
    motion = _motion(config)
    geometry = _geometry(config, motion)
    positions = geometry.state_positions[0]
    azimuths = config["sources"]["azimuths_deg"]
    if len(azimuths) < 2:
        raise ValueError("theory curves need at least two source azimuths")
    central = len(azimuths) // 2
    pairs = [
        (azimuths[i], azimuths[central]) for i in range(len(azimuths)) if i != central
    ]
    nyquist = config["sample_rate"] / 2.0
    points = int(config["theory"]["points"])
    freqs = np.linspace(nyquist / points, nyquist, points)
    table = evaluate.theory_curve(
        positions, {"div_outer_vs_central": pairs},
        config["theory"]["sigmas_s"], freqs, config["speed_of_sound"],
    )
    path = out / "theory.csv"
    evaluate.write_table(path, table)
    write_manifest(out / "theory_manifest.json", config, [], [path])
    return [path]


def run_report(config):
    """Merge the per-mode gain CSVs in the output directory into report.csv."""
    out = _out_dir(config)
    merged = {}
    for mode_arg in config["modes"]:
        path = out / f"gain_{mode_arg}.csv"
        if not path.is_file():
            raise ValueError(f"missing gain CSV: {path}")
        rows = np.genfromtxt(path, delimiter=",", names=True)
        if "frequency_hz" not in merged:
            merged["frequency_hz"] = rows["frequency_hz"]
        merged[f"gain_db_{mode_arg}"] = rows["gain_db"]
        merged[f"flagged_{mode_arg}"] = rows["flagged"]
    path = out / "report.csv"
    evaluate.write_table(path, merged)
    return [path]


def _parser():
    parser = argparse.ArgumentParser(
        prog="driftbeam",
        description="Simulate and analyze beamforming with deformable microphone arrays",
    )
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="random seed (required)")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument(
        "--mode", type=str, default=None,
        help="comma-separated beamformer modes: static,dynamic,rank1",
    )
    parser.add_argument("--threads", type=int, default=None, help="worker threads")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="render the test scene to WAV files")
    sub.add_parser("train", help="estimate covariances from training renders")
    beam = sub.add_parser("beamform", help="build banks and write enhanced WAVs")
    beam.add_argument("--covariances", type=str, default=None,
                      help="path to a covariance container (default: OUT/covariances.npz)")
    sub.add_parser("analyze", help="run the full train/beamform/analyze pipeline")
    sub.add_parser("theory", help="write closed-form divergence curves")
    sub.add_parser("report", help="merge gain CSVs into report.csv")
    return parser


def _overrides(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.mode is not None:
        overrides["modes"] = args.mode.split(",")
    if args.threads is not None:
        overrides["threads"] = args.threads
    return overrides


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
        if args.command == "simulate":
            run_simulate(config)
        elif args.command == "train":
            run_train(config)
        elif args.command == "beamform":
            run_beamform(config, args.covariances)
        elif args.command == "analyze":
            run_pipeline(config)
        elif args.command == "theory":
            run_theory(config)
        elif args.command == "report":
            run_report(config)
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: [{args.command}] {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

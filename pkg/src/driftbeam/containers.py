"""Versioned on-disk containers for trained covariance sets and beamformer
banks.

Both use the numpy .npz layout (a zip of .npy arrays) written with fixed
zip timestamps so identical content produces identical bytes.

Covariance container (format version 1):
    format_version        ()        int
    kind                  ()        "covariances"
    state_count           ()        int
    frequencies           (F,)      rad/s
    noise                 (F, M, M) complex
    ensemble_sources      (N,)      source indices
    ensemble              (N, F, M, M)
    per_state_keys        (K, 2)    (source, state) rows, may be empty
    per_state             (K, F, M, M)
    frame_counts          (K,)
    template_states       (S,)      states with pilot templates, may be empty
    template_frequencies  (B,)      rad/s of the pilot bins
    templates             (S, B, M, M)

Bank container (format version 1):
    format_version, kind="bank", mode, reference, frequencies,
    weight_states (S,), weights (S, F, N, M)
"""

import io
import zipfile

import numpy as np

from .beamform import BeamformerBank
from .covest import CovarianceSet
from .covmath import HermitianSpectrum

FORMAT_VERSION = 1


def _write_npz(path, arrays: dict):
    # np.savez stamps entries with the current time; write entries manually
    # with a fixed timestamp so re-runs are byte-identical.
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(value), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def _check_header(data, kind):
    version = int(data["format_version"])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    found = str(data["kind"])
    if found != kind:
        raise ValueError(f"expected a {kind} container, found {found!r}")


def save_covariances(path, covs: CovarianceSet, templates: dict | None = None):
    """Serialize a CovarianceSet (and optional pilot templates) to path."""
    sources = sorted(covs.ensemble)
    keys = sorted(covs.per_state)
    arrays = {
        "format_version": FORMAT_VERSION,
        "kind": "covariances",
        "state_count": covs.state_count,
        "frequencies": covs.frequencies,
        "noise": covs.noise.bins,
        "ensemble_sources": np.asarray(sources, dtype=np.int64),
        "ensemble": np.stack([covs.ensemble[n].bins for n in sources]),
        "per_state_keys": np.asarray(keys, dtype=np.int64).reshape(len(keys), 2),
        "per_state": (
            np.stack([covs.per_state[k].bins for k in keys])
            if keys else np.zeros((0,) + covs.noise.bins.shape, dtype=np.complex128)
        ),
        "frame_counts": np.asarray([covs.frame_counts[k] for k in keys], dtype=np.int64),
    }
    templates = templates or {}
    states = sorted(templates)
    if states:
        arrays["template_states"] = np.asarray(states, dtype=np.int64)
        arrays["template_frequencies"] = templates[states[0]].frequencies
        arrays["templates"] = np.stack([templates[s].bins for s in states])
    else:
        arrays["template_states"] = np.zeros(0, dtype=np.int64)
        arrays["template_frequencies"] = np.zeros(0)
        arrays["templates"] = np.zeros((0, 0, 0, 0), dtype=np.complex128)
    _write_npz(path, arrays)


def load_covariances(path):
    """Load (CovarianceSet, templates) written by save_covariances."""
    with np.load(path) as data:
        _check_header(data, "covariances")
        freqs = data["frequencies"]
        ensemble = {
            int(n): HermitianSpectrum(bins, freqs)
            for n, bins in zip(data["ensemble_sources"], data["ensemble"])
        }
        per_state = {}
        counts = {}
        for (n, state), bins, count in zip(
            data["per_state_keys"], data["per_state"], data["frame_counts"]
        ):
            per_state[(int(n), int(state))] = HermitianSpectrum(bins, freqs)
            counts[(int(n), int(state))] = int(count)
        covs = CovarianceSet(
            per_state=per_state,
            ensemble=ensemble,
            noise=HermitianSpectrum(data["noise"], freqs),
            frame_counts=counts,
            state_count=int(data["state_count"]),
        )
        templates = {
            int(state): HermitianSpectrum(bins, data["template_frequencies"])
            for state, bins in zip(data["template_states"], data["templates"])
        }
    return covs, templates


def save_bank(path, bank: BeamformerBank):
    """Serialize a BeamformerBank to path."""
    states = sorted(bank.weights)
    _write_npz(path, {
        "format_version": FORMAT_VERSION,
        "kind": "bank",
        "mode": bank.mode,
        "reference": bank.reference,
        "frequencies": bank.frequencies,
        "weight_states": np.asarray(states, dtype=np.int64),
        "weights": np.stack([bank.weights[s] for s in states]),
    })


def load_bank(path) -> BeamformerBank:
    with np.load(path) as data:
        _check_header(data, "bank")
        weights = {
            int(state): w for state, w in zip(data["weight_states"], data["weights"])
        }
        return BeamformerBank(
            mode=str(data["mode"]),
            weights=weights,
            reference=int(data["reference"]),
            frequencies=data["frequencies"],
        )

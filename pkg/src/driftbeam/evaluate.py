"""Separation quality and separability metrics.

gain() scores beamformer outputs per frequency bin as the dB improvement in
squared error over the raw reference channel, averaged across sources.
divergence_curve() and theory_curve() trace how distinguishable the source
statistics are across frequency, measured from trained covariances or
predicted in closed form from steering geometry and a delay-jitter model.

Tables are dicts mapping column name to a 1-D array, with "frequency_hz"
first; write_table() emits them as CSV with one header row.
"""

from dataclasses import dataclass

import numpy as np

from .covmath import (
    DEFAULT_EPSILON_REL,
    PerturbationModel,
    far_field_divergence,
    gaussian_divergence,
    regularize,
)
from .covest import CovarianceSet
from .scene import steering_vector


@dataclass
class GainReport:
    """Per-bin beamforming gain and its squared-error ingredients.

    gain_db[f] = mean_n 10*log10(numerators[n, f] / denominators[n, f]),
    where the numerator is the squared error of the raw reference channel and
    the denominator that of output n. Bins where any source has a zero
    denominator (or numerator) are flagged and reported as infinite rather
    than silently dropped.
    """

    frequencies_hz: np.ndarray
    gain_db: np.ndarray
    numerators: np.ndarray
    denominators: np.ndarray
    flagged: np.ndarray
    scene_id: str = ""
    mode: str = ""

    def band_mean(self, lo_hz: float, hi_hz: float) -> float:
        """Mean gain over unflagged bins with lo_hz <= f < hi_hz."""
        in_band = (self.frequencies_hz >= lo_hz) & (self.frequencies_hz < hi_hz)
        usable = in_band & ~self.flagged
        if not usable.any():
            return float("nan")
        return float(self.gain_db[usable].mean())

    def band_flagged(self, lo_hz: float, hi_hz: float) -> int:
        in_band = (self.frequencies_hz >= lo_hz) & (self.frequencies_hz < hi_hz)
        return int((in_band & self.flagged).sum())

    def table(self) -> dict:
        return {
            "frequency_hz": self.frequencies_hz,
            "gain_db": self.gain_db,
            "flagged": self.flagged.astype(int),
        }


def gain(outputs, mixture_ref, desired, frequencies_hz, scene_id: str = "",
         mode: str = "") -> GainReport:
    """Per-bin squared-error improvement of beamformer outputs over the
    reference channel.

    outputs: (T, F, N) source estimates; mixture_ref: (T, F) reference
    channel; desired: (T, F, N) ground-truth source signals at the reference.
    """
    outputs = np.asarray(outputs)
    desired = np.asarray(desired)
    mixture_ref = np.asarray(mixture_ref)
    if outputs.shape != desired.shape:
        raise ValueError(f"outputs {outputs.shape} vs desired {desired.shape}")
    if mixture_ref.shape != outputs.shape[:2]:
        raise ValueError(f"reference {mixture_ref.shape} vs outputs {outputs.shape}")
    if outputs.shape[2] < 1:
        raise ValueError("at least one source is required")

    num = np.sum(np.abs(mixture_ref[:, :, None] - desired) ** 2, axis=0).T  # (N, F)
    den = np.sum(np.abs(outputs - desired) ** 2, axis=0).T  # (N, F)
    flagged = (den == 0).any(axis=0) | (num == 0).any(axis=0)
    gain_db = np.full(num.shape[1], np.inf)
    ok = ~flagged
    gain_db[ok] = np.mean(10.0 * np.log10(num[:, ok] / den[:, ok]), axis=0)
    return GainReport(
        frequencies_hz=np.asarray(frequencies_hz, dtype=np.float64),
        gain_db=gain_db,
        numerators=num,
        denominators=den,
        flagged=flagged,
        scene_id=scene_id,
        mode=mode,
    )


def _slot_spectrum(covs: CovarianceSet, slot):
    source, state = slot
    if state is None:
        if source not in covs.ensemble:
            raise ValueError(f"no ensemble covariance for source {source}")
        return covs.ensemble[source]
    if (source, state) not in covs.per_state:
        raise ValueError(f"no per-state covariance for (source, state) = {slot}")
    return covs.per_state[(source, state)]


def divergence_curve(covs: CovarianceSet, named_pairs: dict,
                     epsilon_rel: float = DEFAULT_EPSILON_REL) -> dict:
    """Divergence versus frequency between trained covariance slots.

    named_pairs maps a column name to a list of slot pairs; each slot is
    (source, state) with state None selecting the ensemble covariance. The
    column holds the mean curve over its pairs, so a single pair gives that
    pair's curve and several pairs give a convenience aggregate (for example
    every outer source against the central one). Matrices are diagonally
    loaded by epsilon_rel before inverting.
    """
    table = {"frequency_hz": covs.frequencies / (2.0 * np.pi)}
    f_count = covs.frequencies.shape[0]
    for name, pairs in named_pairs.items():
        if not pairs:
            raise ValueError(f"no slot pairs given for column {name!r}")
        acc = np.zeros(f_count)
        for slot1, slot2 in pairs:
            r1 = regularize(_slot_spectrum(covs, slot1).bins, epsilon_rel)
            r2 = regularize(_slot_spectrum(covs, slot2).bins, epsilon_rel)
            acc += [gaussian_divergence(r1[f], r2[f]) for f in range(f_count)]
        table[name] = acc / len(pairs)
    return table


def outer_vs_central_pairs(source_count: int, state=None):
    """Slot pairs of every outer source against the central source."""
    central = source_count // 2
    return [
        ((n, state), (central, state))
        for n in range(source_count)
        if n != central
    ]


def theory_curve(positions, named_pairs: dict, sigmas, freqs_hz,
                 c: float = 343.0) -> dict:
    """Closed-form divergence versus frequency for delay jitter of std sigma.

    named_pairs maps a column base name to a list of azimuth pairs (degrees);
    steering vectors are rebuilt from the positions at every grid frequency.
    One column is emitted per (name, sigma), named f"{name}_sigma_{sigma:g}".
    sigmas are delay standard deviations in seconds and must be positive.
    """
    freqs_hz = np.asarray(freqs_hz, dtype=np.float64)
    if (freqs_hz <= 0).any():
        raise ValueError("theory curves need strictly positive frequencies")
    table = {"frequency_hz": freqs_hz}
    for sigma in sigmas:
        if sigma <= 0:
            raise ValueError("theory curves require positive sigma")
        model = PerturbationModel(sigma)
        for name, pairs in named_pairs.items():
            acc = np.zeros(freqs_hz.shape[0])
            for az1, az2 in pairs:
                for i, f_hz in enumerate(freqs_hz):
                    omega = 2.0 * np.pi * f_hz
                    a1 = steering_vector(positions, az1, omega, c)
                    a2 = steering_vector(positions, az2, omega, c)
                    acc[i] += far_field_divergence(a1, a2, model)
            table[f"{name}_sigma_{sigma:g}"] = acc / len(pairs)
    return table


def write_table(path, table: dict):
    """Write a table as CSV with a header row; floats use 12 significant digits."""
    names = list(table)
    columns = [np.asarray(table[name]) for name in names]
    length = columns[0].shape[0]
    if any(col.shape != (length,) for col in columns):
        raise ValueError("all table columns must be 1-D and equally long")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(length):
            fh.write(",".join(_format_cell(col[i]) for col in columns) + "\n")


def _format_cell(value):
    if np.isposinf(value):
        return "inf"
    if np.isneginf(value):
        return "-inf"
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.12g}"

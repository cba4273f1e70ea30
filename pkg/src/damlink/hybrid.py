"""Hybrid analog/digital factorisation by orthogonal matching pursuit.

A target fully digital precoder ``F_opt`` is approximated as ``F_RF F_BB``
where the analog columns are ULA steering vectors at the channel's sub-path
AoDs. The fully connected structure picks whole steering vectors; the
partially connected structure gives each RF chain its own sub-array of
``M = M_t / M_RF`` antennas and a slice of a steering vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ClusterSet, PathChannel, TapChannel, array_response, to_tap_channel
from .core import (
    BeamformerSet,
    dam_delays,
    effective_isi_channels,
    isi_zf_beamformers,
    link_sinr,
    mmse_stacked,
)

PINV_RCOND = 1e-10
AOD_DEDUP_TOL = 1e-12

STRUCTURES = ("digital", "full", "partial")


@dataclass
class SteeringDictionary:
    """Candidate analog columns.

    ``atoms`` is ``(M_t, N)`` for the fully connected structure and
    ``(M_RF, M, N)`` (one slice per sub-array) for the partial one.
    """

    atoms: np.ndarray
    aods: np.ndarray
    structure: str = "full"

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[-1]

    def sub_dictionary(self, t: int) -> np.ndarray:
        if self.structure != "partial":
            raise ValueError("sub-dictionaries exist only for the partial structure")
        return self.atoms[t]


@dataclass
class HybridFactorization:
    analog: np.ndarray  # (M_t, M_RF); block diagonal for the partial structure
    digital: np.ndarray  # (M_RF, S)
    residual: float
    selected: list[int]
    residual_history: list[float] = field(default_factory=list)

    @property
    def product(self) -> np.ndarray:
        return self.analog @ self.digital


def _unique_aods(aods: np.ndarray) -> np.ndarray:
    out: list[float] = []
    for a in aods:
        if all(abs(a - b) > AOD_DEDUP_TOL for b in out):
            out.append(float(a))
    return np.array(out)


def build_dictionary(channel: PathChannel, structure: str = "full", num_rf: int = 1) -> SteeringDictionary:
    aods = _unique_aods(channel.aods)
    full = array_response(aods, channel.geometry)  # (M_t, N)
    if structure == "full":
        return SteeringDictionary(full, aods, "full")
    if structure != "partial":
        raise ValueError(f"unknown structure {structure!r}")
    m_t = channel.num_antennas
    if num_rf < 1 or m_t % num_rf:
        raise ValueError(f"partial structure needs M_RF dividing M_t (M_t={m_t}, M_RF={num_rf})")
    m = m_t // num_rf
    return SteeringDictionary(full.reshape(num_rf, m, -1), aods, "partial")


def _fit(analog: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(analog, rcond=PINV_RCOND) @ target


def _normalise(analog: np.ndarray, digital: np.ndarray, power: float) -> np.ndarray:
    norm = np.linalg.norm(analog @ digital)
    if norm == 0:
        return digital
    return digital * (np.sqrt(power) / norm)


def omp_decompose(target: np.ndarray, dictionary: SteeringDictionary, num_rf: int, power: float) -> HybridFactorization:
    """Greedy multi-column OMP over a fully connected dictionary.

    Each iteration adds the unused atom with the largest correlation energy
    ``sum_j |a^H r_j|^2 / ||a||^2`` against the current residual, refits
    ``F_BB`` by least squares and updates the residual. The reported
    residuals are Frobenius norms before the final power scaling.
    """
    if dictionary.structure != "full":
        raise ValueError("omp_decompose expects a fully connected dictionary")
    atoms = dictionary.atoms
    if atoms.shape[1] == 0:
        raise ValueError("empty dictionary")
    if num_rf < 1:
        raise ValueError(f"num_rf must be >= 1, got {num_rf}")
    target = np.asarray(target, dtype=complex)
    atom_norm2 = np.sum(np.abs(atoms) ** 2, axis=0)

    residual = target.copy()
    selected: list[int] = []
    history: list[float] = []
    digital = np.zeros((0, target.shape[1]), dtype=complex)
    for _ in range(min(num_rf, atoms.shape[1])):
        score = np.sum(np.abs(atoms.conj().T @ residual) ** 2, axis=1) / atom_norm2
        score[selected] = -np.inf
        selected.append(int(np.argmax(score)))
        analog = atoms[:, selected]
        digital = _fit(analog, target)
        residual = target - analog @ digital
        history.append(float(np.linalg.norm(residual)))

    analog = atoms[:, selected]
    digital = _normalise(analog, digital, power)
    return HybridFactorization(analog, digital, history[-1], selected, history)


def omp_decompose_partial(target: np.ndarray, dictionary: SteeringDictionary, num_rf: int, power: float) -> HybridFactorization:
    """Per-sub-array rank-one fit for the partially connected structure.

    Block ``t`` of the target (rows ``tM:(t+1)M``) is approximated by one
    sub-dictionary atom times a row of ``F_BB``.
    """
    if dictionary.structure != "partial":
        raise ValueError("omp_decompose_partial expects a partial dictionary")
    target = np.asarray(target, dtype=complex)
    m_t, S = target.shape
    if num_rf < 1 or m_t % num_rf:
        raise ValueError(f"M_RF={num_rf} does not divide M_t={m_t}")
    if dictionary.atoms.shape[0] != num_rf:
        raise ValueError("dictionary was built for a different number of RF chains")
    if dictionary.num_atoms == 0:
        raise ValueError("empty dictionary")
    m = m_t // num_rf

    analog = np.zeros((m_t, num_rf), dtype=complex)
    digital = np.zeros((num_rf, S), dtype=complex)
    selected = []
    for t in range(num_rf):
        block = target[t * m : (t + 1) * m]
        atoms = dictionary.atoms[t]
        corr = atoms.conj().T @ block  # (N, S)
        norm2 = np.sum(np.abs(atoms) ** 2, axis=0)
        k = int(np.argmax(np.sum(np.abs(corr) ** 2, axis=1) / norm2))
        selected.append(k)
        analog[t * m : (t + 1) * m, t] = atoms[:, k]
        digital[t] = corr[k] / norm2[k]
    res = float(np.linalg.norm(target - analog @ digital))
    digital = _normalise(analog, digital, power)
    return HybridFactorization(analog, digital, res, selected, [res])


def factorize(target, channel: PathChannel, structure: str, num_rf: int, power: float) -> HybridFactorization:
    dictionary = build_dictionary(channel, structure, num_rf)
    if structure == "full":
        return omp_decompose(target, dictionary, num_rf, power)
    return omp_decompose_partial(target, dictionary, num_rf, power)


def hybrid_dam_pipeline(
    channel: PathChannel,
    power: float,
    noise_var: float,
    structure: str = "full",
    num_rf: int = 4,
    tap_channel: TapChannel | None = None,
    clusters: ClusterSet | None = None,
):
    """Design DAM precoders for one architecture and evaluate their SINR.

    Without ``clusters`` the path model is used (ISI-ZF target); with
    ``clusters`` the tap model is used (MMSE target over ``tap_channel``).
    ``structure="digital"`` returns the target itself.

    Returns
    -------
    beams : BeamformerSet
    metrics : LinkMetrics
    """
    if structure not in STRUCTURES:
        raise ValueError(f"unknown structure {structure!r}; expected one of {STRUCTURES}")
    if clusters is None:
        digital_beams, _ = isi_zf_beamformers(channel, power, noise_var)
        isi = effective_isi_channels(channel, mode="path")
        target = digital_beams.digital
        delays = digital_beams.delays
    else:
        if tap_channel is None:
            tap_channel = to_tap_channel(channel)
        isi = effective_isi_channels(tap_channel, mode="tap", clusters=clusters)
        target = mmse_stacked(isi, power, noise_var)
        delays = dam_delays(clusters.anchors)

    if structure == "digital":
        beams = BeamformerSet(target, delays, power)
    else:
        fac = factorize(target, channel, structure, num_rf, power)
        beams = BeamformerSet(fac.digital, delays, power, analog=fac.analog)
    return beams, link_sinr(isi, beams.precoders, noise_var)

"""Codebook beam alignment with Zadoff-Chu pilots.

The transmitter sweeps a DFT codebook ``M_RF`` beams at a time, each beam
carrying its own ZC pilot. The receiver separates the pilots with a bank of
matched filters, scores every beam, and keeps the ``M_RF`` strongest as the
analog matrix. Digital precoders are then designed on the reduced
equivalent channel ``h_DL^H[q] F_RF``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from sympy import isprime, nextprime

from .channel import ArrayGeometry, ClusterSet, TapChannel, array_response
from .core import (
    BeamformerSet,
    dam_delays,
    effective_isi_channels,
    link_sinr,
    mmse_stacked,
)

MIN_PILOT_PERIOD = 127
METRICS = ("peak", "window", "energy", "coherent")


@dataclass
class DftCodebook:
    beams: np.ndarray  # (M_t, M_t), column m is the beam for m_t = m + 1
    angles: np.ndarray

    @property
    def size(self) -> int:
        return self.beams.shape[1]


def dft_codebook(num_antennas: int, spacing: float = 0.5) -> DftCodebook:
    """Beams at ``sin(theta) = 2 (m_t - 1) / M_t - 1`` for ``m_t = 1..M_t``."""
    if num_antennas < 1:
        raise ValueError(f"num_antennas must be >= 1, got {num_antennas}")
    sines = 2.0 * np.arange(num_antennas) / num_antennas - 1.0
    angles = np.arcsin(sines)
    beams = array_response(angles, ArrayGeometry(num_antennas, spacing))
    return DftCodebook(beams.reshape(num_antennas, num_antennas), angles)


def zc_sequence(root: int, length: int) -> np.ndarray:
    """Zadoff-Chu sequence ``exp(-j pi u n (n + 1) / N)`` of prime length ``N``."""
    if not isprime(length):
        raise ValueError(f"ZC length must be prime, got {length}")
    if not 1 <= root < length:
        raise ValueError(f"root must lie in [1, {length - 1}], got {root}")
    n = np.arange(length)
    return np.exp(-1j * np.pi * root * n * (n + 1) / length)


def periodic_correlation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``R[n] = (1/T) sum_i a[i] conj(b[i - n])`` with indices mod ``T``."""
    T = a.size
    return np.array([np.dot(a, np.roll(b, n).conj()) for n in range(T)]) / T


@dataclass
class PilotSet:
    sequences: np.ndarray  # (M_RF, T_m)
    roots: list[int]
    repetitions: int

    @property
    def period(self) -> int:
        return self.sequences.shape[1]

    @property
    def num_sequences(self) -> int:
        return self.sequences.shape[0]

    def transmitted(self) -> np.ndarray:
        """Pilots repeated ``a`` times, shape ``(M_RF, a T_m)``."""
        return np.tile(self.sequences, (1, self.repetitions))


def make_pilots(num_rf: int, max_tap: int, period: int | None = None) -> PilotSet:
    """ZC pilots with period the smallest prime ``>= max(Q + 1, 127)``."""
    if period is None:
        period = int(nextprime(max(max_tap + 1, MIN_PILOT_PERIOD) - 1))
    roots = [u for u in range(1, period) if math.gcd(u, period) == 1][:num_rf]
    if len(roots) < num_rf:
        raise ValueError(f"period {period} supports fewer than {num_rf} ZC roots")
    repetitions = -(-max_tap // period) + 1
    seqs = np.stack([zc_sequence(u, period) for u in roots])
    return PilotSet(seqs, roots, repetitions)


@dataclass
class BeamSearchReport:
    metrics: np.ndarray  # (rounds, M_RF); padded slots hold -inf
    beam_index: np.ndarray  # (rounds, M_RF) codebook index per slot, -1 for padding
    selected: list[int]  # codebook indices, strongest first
    analog: np.ndarray  # F_RF^opt
    pilot_power: float

    def rows(self):
        rounds, width = self.metrics.shape
        for t in range(rounds):
            for l in range(width):
                if self.beam_index[t, l] >= 0:
                    yield t, l, int(self.beam_index[t, l]), float(self.metrics[t, l])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "sequence", "beam", "r"])
            for t, l, b, r in self.rows():
                w.writerow([t, l, b, repr(r)])


def beam_search(
    tap_channel: TapChannel,
    codebook: DftCodebook,
    pilots: PilotSet,
    power: float,
    noise_var: float,
    rng: np.random.Generator | None = None,
    metric: str = "peak",
) -> BeamSearchReport:
    """Sweep the codebook and keep the ``M_RF`` beams with the largest score.

    Round ``t`` radiates ``sqrt(p_bar) sum_l f_{t,l} m_l[n]`` for ``a T_m``
    samples, with ``p_bar = P / ||F_RF||_F^2``. The receiver keeps samples
    ``Q .. Q + T_m - 1`` and correlates them with each pilot over one period.

    Lag ``n`` of the correlator output ``y_{t,l}[n]`` lines up with tap
    ``n``. Scores:

    ``"peak"``  ``max_n |y_{t,l}[n]|^2``, the strongest tap seen through the
    beam; cross-correlation leakage spreads evenly over lags and barely
    moves it.
    ``"window"``  ``sum_{n=0}^{Q} |y_{t,l}[n]|^2``, the energy at lags where
    taps can exist.
    ``"energy"``  ``sum_n |y_{t,l}[n]|^2`` over the whole period; the flat
    ``1/sqrt(T_m)`` cross-correlation of the other pilots in the round adds
    their entire energy to every score.
    ``"coherent"``  ``|sum_n y_{t,l}[n]|^2``; summing the correlator output
    over a full period reduces it to the pilot's mean value, so every
    sequence in a round scores alike and the ranking falls back to the
    index tie-break.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    Q = tap_channel.max_tap
    T = pilots.period
    if pilots.repetitions * T < Q + T:
        raise ValueError(
            f"pilot too short: a*T_m={pilots.repetitions * T} < Q+T_m={Q + T}"
        )
    num_rf = pilots.num_sequences
    m_t = codebook.size
    if tap_channel.num_antennas != codebook.beams.shape[0]:
        raise ValueError("codebook and channel disagree on M_t")
    rounds = -(-m_t // num_rf)

    tx = pilots.transmitted()  # (M_RF, N)
    n_tx = tx.shape[1]
    beam_norm2 = np.sum(np.abs(codebook.beams) ** 2, axis=0)
    metrics = np.full((rounds, num_rf), -np.inf)
    index = np.full((rounds, num_rf), -1, dtype=int)
    window = slice(Q, Q + T)
    fft_pilots = np.fft.fft(pilots.sequences, axis=1)

    pilot_power = None
    for t in range(rounds):
        idx = [t * num_rf + l for l in range(num_rf)]
        valid = [i < m_t for i in idx]
        # padding slots repeat the first beam and are excluded from ranking
        cols = [i if ok else 0 for i, ok in zip(idx, valid)]
        F = codebook.beams[:, cols]
        p_bar = power / float(np.sum(beam_norm2[cols]))
        pilot_power = p_bar if pilot_power is None else pilot_power
        coupling = tap_channel.taps @ F  # (Q+1, M_RF): h^H[q] f_{t,l}
        y = np.zeros(n_tx + Q, dtype=complex)
        for l in range(num_rf):
            y += np.sqrt(p_bar) * np.convolve(coupling[:, l], tx[l])
        if noise_var > 0:
            if rng is None:
                raise ValueError("an rng is required when noise_var > 0")
            y += np.sqrt(noise_var / 2) * (
                rng.standard_normal(y.size) + 1j * rng.standard_normal(y.size)
            )
        seg = y[window]
        # y_{t,l}[n] = (1/T) sum_i seg[i] conj(m_l[(i + Q - n) mod T])
        seg_f = np.fft.fft(np.roll(seg, Q % T))
        corr = np.fft.ifft(seg_f[None, :] * fft_pilots.conj(), axis=1)  # (M_RF, T)
        for l in range(num_rf):
            if not valid[l]:
                continue
            out = corr[l] / T
            if metric == "window":
                metrics[t, l] = float(np.sum(np.abs(out[: Q + 1]) ** 2))
            elif metric == "energy":
                metrics[t, l] = float(np.sum(np.abs(out) ** 2))
            elif metric == "peak":
                metrics[t, l] = float(np.max(np.abs(out) ** 2))
            else:
                metrics[t, l] = float(abs(np.sum(out)) ** 2)
            index[t, l] = idx[l]

    flat = [
        (-metrics[t, l], t, l)
        for t in range(rounds)
        for l in range(num_rf)
        if index[t, l] >= 0
    ]
    flat.sort()
    chosen = [int(index[t, l]) for _, t, l in flat[:num_rf]]
    analog = codebook.beams[:, chosen]
    return BeamSearchReport(metrics, index, chosen, analog, float(pilot_power))


def equivalent_channel(tap_channel: TapChannel, analog: np.ndarray) -> TapChannel:
    """Reduced taps ``h_DL^H[q] F_RF`` (width ``M_RF``)."""
    s = np.linalg.svd(analog, compute_uv=False)
    if s.size == 0 or s[-1] <= 1e-10 * s[0]:
        raise ValueError("analog matrix is not of full column rank")
    return TapChannel(tap_channel.taps @ analog, tap_channel.sample_interval, tap_channel.tau_ub)


def ba_digital_mmse(
    equiv: TapChannel,
    clusters: ClusterSet,
    analog: np.ndarray,
    power: float,
    noise_var: float,
):
    """Digital MMSE precoders on the equivalent channel.

    Writing ``v_l = F_RF f_BB,l``, the reduced rows are mapped back through
    ``F_RF^+`` so the power constraint reads ``||v_bar||^2 = P``; the
    generalized Rayleigh quotient in ``v_bar`` is maximised in closed form
    and ``f_BB,l = F_RF^+ v_l``.

    Returns ``(beams, metrics)`` with ``beams.analog = analog``.
    """
    pinv = np.linalg.pinv(analog)
    reduced = effective_isi_channels(equiv, mode="tap", clusters=clusters)
    lifted = reduced.transformed(pinv)  # rows h~^H F^+ in the antenna domain
    V = mmse_stacked(lifted, power, noise_var)  # (M_t, L')
    digital = pinv @ V
    beams = BeamformerSet(digital, dam_delays(clusters.anchors), power, analog=analog)
    metrics = link_sinr(reduced, digital, noise_var)
    return beams, metrics


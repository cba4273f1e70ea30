"""Delay alignment modulation with fully digital or hybrid precoders.

The transmitter sends ``x[n] = F_RF sum_l f_BB,l s[n - kappa_l]`` with
``kappa_l = n_max - n_l`` so every path (or cluster anchor) lands on the
same receive delay. This module designs the precoders (ISI zero-forcing for
path channels, MMSE for tap channels), builds the effective ISI channels
that group interference by delay difference, and evaluates SINR both in
closed form and by time-domain simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ClusterSet, PathChannel, TapChannel
from .serialization import decode_complex, encode_complex

#: Relative smallest-singular-value floor for treating path vectors as independent.
INDEPENDENCE_TOL = 1e-8
#: Ridge added to the MMSE covariance when the noise variance is zero.
MMSE_RIDGE = 1e-12


class RankDeficientChannel(ValueError):
    """Raised when path vectors are (numerically) linearly dependent."""


@dataclass
class BeamformerSet:
    """Analog matrix, digital columns and deliberate delays.

    ``analog is None`` marks the fully digital bypass, in which case the
    digital columns are the antenna-domain precoders themselves.
    """

    digital: np.ndarray  # (M_RF, S) or (M_t, S) when analog is None
    delays: np.ndarray  # kappa_l, one per stream
    power: float
    analog: np.ndarray | None = None  # (M_t, M_RF)

    @property
    def precoders(self) -> np.ndarray:
        """Antenna-domain columns ``F_RF f_BB,l``, shape ``(M_t, S)``."""
        if self.analog is None:
            return self.digital
        return self.analog @ self.digital

    @property
    def num_streams(self) -> int:
        return self.digital.shape[1]

    @property
    def radiated_power(self) -> float:
        return float(np.sum(np.abs(self.precoders) ** 2))

    def to_dict(self) -> dict:
        return {
            "kind": "beamformers",
            "digital": encode_complex(self.digital),
            "analog": None if self.analog is None else encode_complex(self.analog),
            "delays": [int(k) for k in self.delays],
            "power": self.power,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BeamformerSet":
        analog = data.get("analog")
        return cls(
            digital=np.atleast_2d(decode_complex(data["digital"])),
            delays=np.asarray(data["delays"], dtype=int),
            power=float(data["power"]),
            analog=None if analog is None else np.atleast_2d(decode_complex(analog)),
        )


@dataclass
class LinkMetrics:
    sinr: float
    gain: complex
    interference: float = 0.0

    @property
    def spectral_efficiency(self) -> float:
        return float(np.log2(1.0 + self.sinr))


@dataclass
class EffectiveIsiChannel:
    """Desired rows and ISI rows grouped by delay difference.

    ``desired[l]`` is ``h_l^H`` (path mode) or ``h_DL^H[q_l]`` (tap mode).
    ``offsets[i][l]`` is ``g_l^H[i]``; differences whose rows are all zero
    are not stored.
    """

    desired: np.ndarray  # (S, D)
    offsets: dict[int, np.ndarray] = field(default_factory=dict)  # i -> (S, D)
    reference: int = 0  # receive lock delay (n_max or q_max)

    @property
    def num_streams(self) -> int:
        return self.desired.shape[0]

    def g(self, l: int, i: int) -> np.ndarray:
        """Row ``g_l^H[i]`` (zero when not stored)."""
        rows = self.offsets.get(i)
        if rows is None:
            return np.zeros(self.desired.shape[1], dtype=complex)
        return rows[l]

    def stacked_desired(self) -> np.ndarray:
        """``h_bar^H`` as a row of length ``S * D`` (stream-major)."""
        return self.desired.reshape(-1)

    def stacked_interference(self) -> np.ndarray:
        """Rows ``g_bar^H[i]`` for every stored ``i``, shape ``(n_i, S * D)``."""
        if not self.offsets:
            return np.zeros((0, self.desired.size), dtype=complex)
        keys = sorted(self.offsets)
        return np.stack([self.offsets[i].reshape(-1) for i in keys])

    def transformed(self, right: np.ndarray) -> "EffectiveIsiChannel":
        """Apply ``row -> row @ right`` to every row (e.g. an analog matrix)."""
        return EffectiveIsiChannel(
            self.desired @ right,
            {i: rows @ right for i, rows in self.offsets.items()},
            self.reference,
        )


def dam_delays(delays) -> np.ndarray:
    """Deliberate delays ``kappa_l = max(delays) - delays[l]``."""
    d = np.asarray(delays, dtype=int)
    return d.max() - d


def _path_data(channel) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(channel, PathChannel):
        return channel.vectors, channel.integer_delays
    vectors, delays = channel
    return np.atleast_2d(np.asarray(vectors, dtype=complex)), np.asarray(delays, dtype=int)


def _orthonormal_basis(cols: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span via SVD with a relative cutoff."""
    if cols.shape[1] == 0:
        return np.zeros((cols.shape[0], 0), dtype=complex)
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size and s[0] > 0 else 0
    return u[:, :rank]


def isi_zf_beamformers(channel, power: float, noise_var: float):
    """Optimal fully digital ISI-ZF precoders for a path channel.

    Each column is the path vector projected off the span of the other
    paths, ``f_l = c Q_l h_l``; a common scale ``c = sqrt(P / sum_l delta_l)``
    with ``delta_l = h_l^H Q_l h_l`` maximises the coherent gain
    ``|sum_l h_l^H f_l|^2`` subject to the zero-forcing constraints and the
    total power budget (Cauchy-Schwarz on the stacked projected vectors).

    Parameters
    ----------
    channel : PathChannel or (vectors, delays)
        Path vectors ``h_l`` as rows and their integer delays.
    power : float
        Transmit power budget ``P``.
    noise_var : float
        Receiver noise variance.

    Returns
    -------
    beams : BeamformerSet
        Fully digital precoders (``analog is None``) and ``kappa_l``.
    metrics : LinkMetrics
        ``sinr`` is the ISI-free SNR ``P sum_l delta_l / sigma^2``.
    """
    vectors, delays = _path_data(channel)
    L, m_t = vectors.shape
    H = vectors.T  # columns h_l
    s = np.linalg.svd(H, compute_uv=False)
    if L > m_t or s[-1] <= INDEPENDENCE_TOL * s[0]:
        raise RankDeficientChannel(
            f"path vectors are linearly dependent (L={L}, M_t={m_t}, "
            f"sigma_min/sigma_max={s[-1] / s[0] if s[0] else 0:.3e})"
        )

    projected = np.empty_like(H)
    for l in range(L):
        basis = _orthonormal_basis(np.delete(H, l, axis=1))
        h = H[:, l]
        projected[:, l] = h - basis @ (basis.conj().T @ h)
    deltas = np.real(np.sum(H.conj() * projected, axis=0))
    scale = np.sqrt(power / deltas.sum())
    F = scale * projected

    gain = complex(np.sum(H.conj() * F))
    snr = power * deltas.sum() / noise_var if noise_var > 0 else np.inf
    beams = BeamformerSet(F, dam_delays(delays), power)
    return beams, LinkMetrics(float(snr), gain)


def effective_isi_channels(
    channel, mode: str = "path", clusters: ClusterSet | None = None, anchors=None
) -> EffectiveIsiChannel:
    """Group the ISI terms by delay difference.

    Path mode: ``g_l'[i] = h_l`` whenever ``n_l' - n_l = i`` for some
    ``l != l'``. Tap mode: ``g_l[i] = h_DL[q]`` with ``q = q_l - i``, taken
    over every tap of ``channel`` (which must then be a :class:`TapChannel`
    or a tap matrix) and anchors from ``clusters`` or ``anchors``.
    """
    if mode == "path":
        vectors, delays = _path_data(channel)
        rows = vectors.conj()
        L = rows.shape[0]
        offsets: dict[int, np.ndarray] = {}
        for lp in range(L):
            for l in range(L):
                if l == lp:
                    continue
                i = int(delays[lp] - delays[l])
                block = offsets.setdefault(i, np.zeros_like(rows))
                block[lp] = rows[l]
        return EffectiveIsiChannel(rows, offsets, int(delays.max()))

    if mode != "tap":
        raise ValueError(f"unknown mode {mode!r}")
    taps = channel.taps if isinstance(channel, TapChannel) else np.asarray(channel)
    if anchors is None:
        if clusters is None:
            raise ValueError("tap mode needs clusters or anchors")
        anchors = clusters.anchors
    anchors = np.asarray(anchors, dtype=int)
    S = len(anchors)
    nonzero = np.flatnonzero(np.any(taps != 0, axis=1))
    offsets = {}
    for l, ql in enumerate(anchors):
        for q in nonzero:
            if q == ql:
                continue
            i = int(ql - q)
            block = offsets.setdefault(i, np.zeros((S, taps.shape[1]), dtype=complex))
            block[l] = taps[q]
    return EffectiveIsiChannel(taps[anchors], offsets, int(anchors.max()))


def link_sinr(isi: EffectiveIsiChannel, precoders: np.ndarray, noise_var: float) -> LinkMetrics:
    """SINR of antenna-domain columns ``precoders`` (shape ``(D, S)``)."""
    F = np.asarray(precoders)
    gain = complex(np.sum(isi.desired * F.T))
    interference = 0.0
    for rows in isi.offsets.values():
        interference += abs(np.sum(rows * F.T)) ** 2
    denom = interference + noise_var
    sinr = abs(gain) ** 2 / denom if denom > 0 else (np.inf if abs(gain) > 0 else 0.0)
    return LinkMetrics(float(sinr), gain, float(interference))


def sinr_hybrid(
    isi: EffectiveIsiChannel, analog: np.ndarray | None, digital: np.ndarray, noise_var: float
) -> LinkMetrics:
    """SINR of ``F_RF F_BB`` with residual ISI counted per delay difference."""
    F = digital if analog is None else analog @ digital
    return link_sinr(isi, F, noise_var)


def mmse_stacked(isi: EffectiveIsiChannel, power: float, noise_var: float) -> np.ndarray:
    """Generalized-Rayleigh maximiser ``sqrt(P) C^-1 h / ||C^-1 h||``.

    Returns the per-stream columns, shape ``(D, S)``.
    """
    h = isi.stacked_desired().conj()
    G = isi.stacked_interference()
    dim = h.size
    lam = noise_var / power
    if noise_var <= 0:
        lam += MMSE_RIDGE * float(np.sum(np.abs(G) ** 2)) / dim + 1e-300
    # C = G^H G + lam I through the thin SVD of G: inside the row space the
    # inverse scales by 1 / (s^2 + lam), outside it by 1 / lam.
    if G.shape[0] == 0:
        G = np.zeros((1, dim), dtype=complex)
    _, s, vh = np.linalg.svd(G, full_matrices=False)
    coef = vh @ h
    inside = vh.conj().T @ coef
    w = vh.conj().T @ (coef / (s**2 + lam)) + (h - inside) / lam
    f = np.sqrt(power) * w / np.linalg.norm(w)
    return f.reshape(isi.num_streams, -1).T


def mmse_tap_beamformer(
    tap_channel: TapChannel, clusters: ClusterSet, power: float, noise_var: float
):
    """Fully digital MMSE precoders for tap-based DAM.

    Returns ``(beams, metrics)``; ``beams.digital`` holds ``f_l`` as columns
    and ``beams.digital.T.ravel()`` is the stacked vector ``f_bar``.
    """
    isi = effective_isi_channels(tap_channel, mode="tap", clusters=clusters)
    F = mmse_stacked(isi, power, noise_var)
    beams = BeamformerSet(F, dam_delays(clusters.anchors), power)
    return beams, link_sinr(isi, F, noise_var)


def strongest_tap_beamformer(tap_channel: TapChannel, power: float, noise_var: float):
    """Benchmark: maximum-ratio beam on the single strongest tap, no alignment."""
    q = int(np.argmax(tap_channel.tap_powers))
    h = tap_channel.taps[q].conj()
    F = (np.sqrt(power) * h / np.linalg.norm(h))[:, None]
    isi = effective_isi_channels(tap_channel, mode="tap", anchors=[q])
    beams = BeamformerSet(F, np.array([0]), power)
    return beams, link_sinr(isi, F, noise_var)


# Time-domain chain

def dam_transmit(symbols, beams: BeamformerSet) -> np.ndarray:
    """``x[n] = sum_l F[:, l] s[n - kappa_l]`` for ``n in [0, N + max kappa)``.

    Returns shape ``(N + max kappa, M_t)``.
    """
    s = np.asarray(symbols, dtype=complex)
    F = beams.precoders
    kappa = np.asarray(beams.delays, dtype=int)
    x = np.zeros((s.size + int(kappa.max()), F.shape[0]), dtype=complex)
    for l, k in enumerate(kappa):
        x[k : k + s.size] += np.outer(s, F[:, l])
    return x


def _add_noise(y: np.ndarray, noise_var: float, rng) -> np.ndarray:
    if noise_var > 0:
        if rng is None:
            raise ValueError("an rng is required when noise_var > 0")
        y = y + np.sqrt(noise_var / 2) * (
            rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        )
    return y


def dam_receive(x, channel, noise_var: float = 0.0, rng=None) -> np.ndarray:
    """Pass ``x`` (shape ``(N, M_t)``) through a path or tap channel plus AWGN.

    The output has length ``N + max delay``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=complex))
    if isinstance(channel, TapChannel):
        rows, delays = channel.taps, np.arange(channel.num_taps)
    else:
        vectors, delays = _path_data(channel)
        rows = vectors.conj()
    y = np.zeros(x.shape[0] + int(delays.max()), dtype=complex)
    for row, d in zip(rows, delays):
        if np.any(row):
            y[d : d + x.shape[0]] += x @ row
    return _add_noise(y, noise_var, rng)


def composite_response(rows: np.ndarray, row_delays, precoders: np.ndarray, kappa) -> np.ndarray:
    """Scalar impulse response from symbols to the receive antenna.

    ``e[d + kappa_l] += rows[k] @ F[:, l]`` for every channel row ``k`` at
    delay ``d``; equivalent to :func:`dam_transmit` followed by a noiseless
    :func:`dam_receive`, without forming the antenna-domain stream.
    """
    row_delays = np.asarray(row_delays, dtype=int)
    kappa = np.asarray(kappa, dtype=int)
    coupling = rows @ precoders  # (rows, S)
    e = np.zeros(int(row_delays.max() + kappa.max()) + 1, dtype=complex)
    for l, k in enumerate(kappa):
        np.add.at(e, row_delays + k, coupling[:, l])
    return e


def channel_rows(channel) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``h^H`` and their delays for a path or tap channel."""
    if isinstance(channel, TapChannel):
        return channel.taps, np.arange(channel.num_taps)
    vectors, delays = _path_data(channel)
    return vectors.conj(), delays


def simulate_scalar_link(symbols, response: np.ndarray, noise_var: float, rng) -> np.ndarray:
    """Convolve symbols with a scalar response and add AWGN."""
    y = np.convolve(np.asarray(symbols, dtype=complex), response)
    return _add_noise(y, noise_var, rng)

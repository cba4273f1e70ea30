"""DAM-OFDM: cluster alignment plus OFDM for the residual delay spread.

Each tap cluster ``l`` gets a spatial precoder ``F_l = H_l^perp X_l`` that
zero-forces the taps of every other cluster, and is delayed by
``kappa_l = q_max - q_l``. What remains is a short channel spanning about
``2 * n_bar_span`` samples, which a cyclic prefix of at least that length
absorbs. Per-sub-carrier vectors ``u_k`` and the time-domain matrices
``X_l`` are designed jointly to maximise the average spectral efficiency.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .channel import ClusterSet, PathChannel, TapChannel
from .core import channel_rows, dam_delays, dam_receive
from .hybrid import build_dictionary, omp_decompose
from .serialization import decode_complex, encode_complex

log = logging.getLogger(__name__)

#: Relative singular-value cutoff when refitting hybrid digital blocks under ZF.
ZF_REFIT_RCOND = 1e-8


class InfeasibleZeroForcing(ValueError):
    """Raised when a cluster has no room left after nulling the others."""


@dataclass
class OfdmPlan:
    num_subcarriers: int
    cp_length: int
    bases: list[np.ndarray]  # H_l^perp, (M_t, r_l)
    time_beams: list[np.ndarray]  # X_l, (r_l, M_u)
    freq_beams: np.ndarray  # (K, M_u), row k is u_k
    delays: np.ndarray  # kappa_l
    anchors: np.ndarray
    half_spread: int
    power: float
    analog: np.ndarray | None = None
    digital: list[np.ndarray] | None = None  # F_BB,l blocks for the hybrid plan
    objective_history: list[float] = field(default_factory=list)

    @property
    def num_streams(self) -> int:
        return self.freq_beams.shape[1]

    @property
    def aligned_spread(self) -> int:
        return 2 * self.half_spread

    @property
    def spatial(self) -> list[np.ndarray]:
        """Antenna-domain precoders ``F_l`` (hybrid products when present)."""
        if self.analog is not None:
            return [self.analog @ d for d in self.digital]
        return [B @ X for B, X in zip(self.bases, self.time_beams)]

    @property
    def active(self) -> np.ndarray:
        return np.linalg.norm(self.freq_beams, axis=1) > 0

    @property
    def cp_efficiency(self) -> float:
        return self.num_subcarriers / (self.num_subcarriers + self.cp_length)

    def with_cp(self, cp_length: int) -> "OfdmPlan":
        out = OfdmPlan(**{**self.__dict__})
        out.cp_length = cp_length
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "ofdm_plan",
            "num_subcarriers": self.num_subcarriers,
            "cp_length": self.cp_length,
            "bases": [encode_complex(B) for B in self.bases],
            "time_beams": [encode_complex(X) for X in self.time_beams],
            "freq_beams": encode_complex(self.freq_beams),
            "delays": [int(k) for k in self.delays],
            "anchors": [int(q) for q in self.anchors],
            "half_spread": self.half_spread,
            "power": self.power,
            "analog": None if self.analog is None else encode_complex(self.analog),
            "digital": None if self.digital is None else [encode_complex(d) for d in self.digital],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OfdmPlan":
        def mat(x):
            return np.atleast_2d(decode_complex(x))

        return cls(
            num_subcarriers=int(data["num_subcarriers"]),
            cp_length=int(data["cp_length"]),
            bases=[mat(B) for B in data["bases"]],
            time_beams=[mat(X) for X in data["time_beams"]],
            freq_beams=mat(data["freq_beams"]),
            delays=np.asarray(data["delays"], dtype=int),
            anchors=np.asarray(data["anchors"], dtype=int),
            half_spread=int(data["half_spread"]),
            power=float(data["power"]),
            analog=None if data["analog"] is None else mat(data["analog"]),
            digital=None if data["digital"] is None else [mat(d) for d in data["digital"]],
        )


def ofdm_modulate(symbols, freq_beams: np.ndarray, cp_length: int) -> np.ndarray:
    """IDFT (``1/sqrt(K)`` scaling) per OFDM symbol, CP prepended, serialised.

    ``symbols`` has shape ``(num_symbols, K)``; the result has shape
    ``(num_symbols * (K + N_CP), M_u)`` with sample ``n`` of symbol ``m`` at
    row ``m (K + N_CP) + N_CP + n``.
    """
    s = np.atleast_2d(np.asarray(symbols, dtype=complex))
    u = np.asarray(freq_beams, dtype=complex)
    if u.ndim == 1:
        u = u[:, None]
    num_sym, K = s.shape
    if u.shape[0] != K:
        raise ValueError(f"{u.shape[0]} frequency beams for {K} sub-carriers")
    spectrum = s[:, :, None] * u[None, :, :]  # (m, k, M_u)
    blocks = np.sqrt(K) * np.fft.ifft(spectrum, axis=1)
    if cp_length:
        blocks = np.concatenate([blocks[:, K - cp_length :], blocks], axis=1)
    return blocks.reshape(num_sym * (K + cp_length), u.shape[1])


def cluster_zf_basis(tap_channel: TapChannel, clusters: ClusterSet, rank_tol: float = 0.0):
    """Orthonormal bases of each cluster's zero-forcing subspace.

    Returns a list of ``(H_l, H_l_perp, r_l)`` where ``H_l`` holds the tap
    vectors ``h_DL[q]`` of every other cluster as columns.

    With ``rank_tol = 0`` the null space is exact (numerical rank at machine
    precision). A positive ``rank_tol`` drops singular directions of ``H_l``
    below ``rank_tol * sigma_max`` before taking the complement. Pulse tails
    put a little of every path into every tap, so on fractional-delay
    channels the exact complement is orthogonal to all paths at once; the
    truncated complement nulls only the dominant out-of-cluster directions.
    """
    taps = tap_channel.taps
    m_t = taps.shape[1]
    out = []
    for l in range(clusters.num_clusters):
        others = clusters.complement(l)
        H = taps[others].conj().T if others else np.zeros((m_t, 0), dtype=complex)
        if H.shape[1] == 0:
            basis = np.eye(m_t, dtype=complex)
        elif rank_tol > 0:
            _, sv, vh = np.linalg.svd(H.conj().T)
            rank = int(np.sum(sv > rank_tol * sv[0]))
            basis = vh[rank:].conj().T
        else:
            basis = null_space(H.conj().T)
        if basis.shape[1] == 0:
            raise InfeasibleZeroForcing(
                f"cluster {l}: {len(others)} out-of-cluster taps leave no null space in M_t={m_t}"
            )
        out.append((H, basis, basis.shape[1]))
    return out


def dam_ofdm_precode(stream: np.ndarray, spatial: list[np.ndarray], delays) -> np.ndarray:
    """``d_bar[i] = sum_l F_l d[i - kappa_l]``; output length ``N + max kappa``."""
    d = np.asarray(stream, dtype=complex)
    if d.ndim == 1:
        d = d[:, None]
    kappa = np.asarray(delays, dtype=int)
    m_t = spatial[0].shape[0]
    out = np.zeros((d.shape[0] + int(kappa.max()), m_t), dtype=complex)
    for F, k in zip(spatial, kappa):
        out[k : k + d.shape[0]] += d @ F.T
    return out


def _cluster_spectra(tap_channel: TapChannel, clusters: ClusterSet, K: int) -> list[np.ndarray]:
    """``c_l[k] = K^-1/2 sum_{q in cluster l} h^H[q] e^{-j 2 pi k (q - q_l) / K}``."""
    k = np.arange(K)
    spectra = []
    for c in clusters.clusters:
        rel = np.array(c.indices) - c.anchor
        phase = np.exp(-2j * np.pi * np.outer(k, rel) / K)  # (K, taps)
        spectra.append(phase @ tap_channel.taps[list(c.indices)] / np.sqrt(K))
    return spectra


def freq_effective_channel(tap_channel: TapChannel, clusters: ClusterSet, plan: OfdmPlan) -> np.ndarray:
    """Rows ``h~^H[k]`` (shape ``(K, M_u)``) seen after cluster alignment."""
    spectra = _cluster_spectra(tap_channel, clusters, plan.num_subcarriers)
    return sum(c @ F for c, F in zip(spectra, plan.spatial))


def transmit_power(spatial: list[np.ndarray], freq_beams: np.ndarray, delays) -> float:
    """``sum_k || sum_l F_l u_k exp(-j 2 pi k kappa_l / K) ||^2``."""
    K = freq_beams.shape[0]
    phase = np.exp(-2j * np.pi * np.outer(np.arange(K), np.asarray(delays)) / K)  # (K, L')
    total = 0.0
    acc = np.zeros((K, spatial[0].shape[0]), dtype=complex)
    for l, F in enumerate(spatial):
        acc += phase[:, l : l + 1] * (freq_beams @ F.T)
    total = float(np.sum(np.abs(acc) ** 2))
    return total


def subcarrier_snr(heff: np.ndarray, freq_beams: np.ndarray, noise_var: float) -> np.ndarray:
    """``gamma_k = K |h~^H[k] u_k|^2 / sigma^2``."""
    K = heff.shape[0]
    return K * np.abs(np.sum(heff * freq_beams, axis=1)) ** 2 / noise_var


def water_filling(gains: np.ndarray, total: float) -> np.ndarray:
    """Maximise ``sum log(1 + g_k p_k)`` s.t. ``sum p_k = total``, ``p >= 0``."""
    g = np.asarray(gains, dtype=float)
    p = np.zeros_like(g)
    pos = np.flatnonzero(g > 0)
    if pos.size == 0 or total <= 0:
        return p
    inv = 1.0 / g[pos]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    csum = np.cumsum(inv_sorted)
    n = np.arange(1, inv_sorted.size + 1)
    levels = (total + csum) / n
    valid = np.flatnonzero(levels > inv_sorted)
    if valid.size == 0:
        # gains so small that total + 1/g rounds to 1/g: best channel takes all
        p[pos[order[0]]] = total
        return p
    level = levels[valid[-1]]
    p[pos] = np.maximum(level - inv, 0.0)
    return p


def _objective(heff, u, noise_var) -> float:
    return float(np.mean(np.log2(1.0 + subcarrier_snr(heff, u, noise_var))))


def optimize_tf_beamformers(
    tap_channel: TapChannel,
    clusters: ClusterSet,
    num_subcarriers: int,
    power: float,
    noise_var: float,
    num_streams: int = 1,
    cp_length: int | None = None,
    max_iter: int = 200,
    tol: float = 1e-6,
    rank_tol: float = 0.0,
) -> OfdmPlan:
    """Alternating design of ``{X_l}`` and ``{u_k}``.

    One iteration is (a) matched ``u_k`` directions with water-filled power
    for fixed ``X_l``, then (b) a projected-gradient step on the ``X_l``
    with backtracking, rescaled onto the power constraint
    ``sum_k ||sum_l F_l u_k e^{-j2pi k kappa_l/K}||^2 = K P``. A step is only
    accepted if it does not lower the objective, so the recorded objective
    sequence is non-decreasing. Iteration stops when the relative gain of a
    full iteration falls below ``tol`` or after ``max_iter`` iterations.
    """
    K = num_subcarriers
    if cp_length is None:
        cp_length = clusters.aligned_spread
    zf = cluster_zf_basis(tap_channel, clusters, rank_tol)
    bases = [B for _, B, _ in zf]
    if num_streams > min(r for _, _, r in zf):
        raise ValueError(f"M_u={num_streams} exceeds the smallest ZF subspace dimension")
    delays = dam_delays(clusters.anchors)
    spectra = _cluster_spectra(tap_channel, clusters, K)
    projectors = [B @ B.conj().T for B in bases]
    budget = K * power

    # initial precoders: each cluster's taps projected into its ZF subspace
    spatial = []
    for c, B in zip(clusters.clusters, bases):
        order = sorted(c.indices, key=lambda q: -np.linalg.norm(tap_channel.taps[q]))
        cols = [B @ (B.conj().T @ tap_channel.taps[q].conj()) for q in order[:num_streams]]
        j = 0
        while len(cols) < num_streams:
            cols.append(B[:, j].copy())
            j += 1
        F = np.stack(cols, axis=1)
        F /= np.linalg.norm(F)
        spatial.append(F)

    def heff_of(sp):
        return sum(c @ F for c, F in zip(spectra, sp))

    def match_and_fill(sp):
        heff = heff_of(sp)
        norms = np.linalg.norm(heff, axis=1)
        direction = np.zeros((K, num_streams), dtype=complex)
        nz = norms > 0
        direction[nz] = heff[nz].conj() / norms[nz, None]
        cost = np.zeros(K)
        phase = np.exp(-2j * np.pi * np.outer(np.arange(K), delays) / K)
        acc = np.zeros((K, sp[0].shape[0]), dtype=complex)
        for l, F in enumerate(sp):
            acc += phase[:, l : l + 1] * (direction @ F.T)
        cost = np.sum(np.abs(acc) ** 2, axis=1)
        usable = nz & (cost > 0)
        gain = np.zeros(K)
        gain[usable] = K * norms[usable] ** 2 / noise_var / cost[usable]
        p = water_filling(gain, budget)
        scale = np.zeros(K)
        scale[usable] = np.sqrt(p[usable] / cost[usable])
        return direction * scale[:, None]

    def rescale(sp, u):
        pw = transmit_power(sp, u, delays)
        c = np.sqrt(budget / pw)
        return [F * c for F in sp]

    def gradient(sp, u):
        heff = heff_of(sp)
        s = np.sum(heff * u, axis=1)  # (K,)
        gamma = K * np.abs(s) ** 2 / noise_var
        w = (K / noise_var) / (1.0 + gamma) / np.log(2) / K
        grads = []
        for c, P_l in zip(spectra, projectors):
            # d/dF* of sum_k w_k |c_k F u_k|^2 = sum_k w_k s_k c_k^H u_k^H
            g = (c.conj().T * (w * s)) @ u.conj()
            grads.append(P_l @ g)
        return grads

    u = match_and_fill(spatial)
    spatial = rescale(spatial, u)
    history = [_objective(heff_of(spatial), u, noise_var)]
    step = 0.5
    for it in range(max_iter):
        start = history[-1]
        # (b) gradient step on the spatial precoders
        grads = gradient(spatial, u)
        gnorm = np.sqrt(sum(np.linalg.norm(g) ** 2 for g in grads))
        fnorm = np.sqrt(sum(np.linalg.norm(F) ** 2 for F in spatial))
        if gnorm > 0:
            while step > 1e-10:
                trial = [F + step * fnorm / gnorm * g for F, g in zip(spatial, grads)]
                trial = rescale(trial, u)
                val = _objective(heff_of(trial), u, noise_var)
                if val >= history[-1]:
                    spatial = trial
                    history.append(val)
                    step = min(step * 2.0, 1.0)
                    break
                step *= 0.5
        # (a) frequency beams for the updated precoders
        u_new = match_and_fill(spatial)
        val = _objective(heff_of(spatial), u_new, noise_var)
        if val >= history[-1]:
            u = u_new
            spatial = rescale(spatial, u)
            history.append(_objective(heff_of(spatial), u, noise_var))
        if np.any(np.diff(history) < -1e-9 * max(abs(history[-1]), 1.0)):
            raise RuntimeError("alternating optimisation decreased the objective")
        if history[-1] - start <= tol * max(abs(start), 1e-300):
            break
    log.debug("tf optimisation: %d iterations, SE %.6f", it + 1, history[-1])

    time_beams = [B.conj().T @ F for B, F in zip(bases, spatial)]
    return OfdmPlan(
        num_subcarriers=K,
        cp_length=cp_length,
        bases=bases,
        time_beams=time_beams,
        freq_beams=u,
        delays=delays,
        anchors=clusters.anchors,
        half_spread=clusters.half_spread,
        power=power,
        objective_history=history,
    )


def hybridize_plan(plan: OfdmPlan, channel: PathChannel, num_rf: int, keep_zf: bool = True) -> OfdmPlan:
    """OMP-factorise ``[F_1 ... F_L']`` and rescale onto the OFDM power budget.

    The analog matrix comes from OMP over the stacked targets. With
    ``keep_zf`` each ``F_BB,l`` is then refitted by least squares over the
    digital vectors whose product stays inside ``span(H_l^perp)``, so the
    hybrid precoder keeps the cluster zero-forcing of the target; when that
    set is empty the plain OMP block is kept.
    """
    spatial = plan.spatial
    widths = [F.shape[1] for F in spatial]
    target = np.concatenate(spatial, axis=1)
    dictionary = build_dictionary(channel, "full")
    fac = omp_decompose(target, dictionary, num_rf, power=float(np.sum(np.abs(target) ** 2)))
    splits = np.cumsum(widths)[:-1]
    blocks = np.split(fac.digital, splits, axis=1)
    if keep_zf:
        A = fac.analog
        for l, (B, F) in enumerate(zip(plan.bases, spatial)):
            leak = A - B @ (B.conj().T @ A)  # part of each RF beam outside span(B)
            N = null_space(leak, rcond=ZF_REFIT_RCOND)
            if N.shape[1]:
                y, *_ = np.linalg.lstsq(A @ N, F, rcond=None)
                blocks[l] = N @ y
    products = [fac.analog @ b for b in blocks]
    pw = transmit_power(products, plan.freq_beams, plan.delays)
    c = np.sqrt(plan.num_subcarriers * plan.power / pw)
    out = OfdmPlan(**{**plan.__dict__})
    out.analog = fac.analog
    out.digital = [b * c for b in blocks]
    return out


@dataclass
class OfdmReception:
    freq: np.ndarray  # y_f[m, k]
    equalized: np.ndarray
    gain: np.ndarray  # per sub-carrier complex gain used for equalisation
    snr: np.ndarray  # |gain_k|^2 / sigma^2


def timing_offset(cp_length: int) -> int:
    """FFT window start relative to ``q_max``; centres the CP on the aligned tap."""
    return -(cp_length // 2)


def ofdm_gains(tap_channel: TapChannel, plan: OfdmPlan) -> np.ndarray:
    """Per-sub-carrier complex gain of the full precoded link (all taps)."""
    rows, row_delays = channel_rows(tap_channel)
    K = plan.num_subcarriers
    ref = int(plan.anchors.max()) + timing_offset(plan.cp_length)
    freq = np.zeros((K, plan.num_streams), dtype=complex)
    k = np.arange(K)
    for F, kappa in zip(plan.spatial, plan.delays):
        coupling = rows @ F  # (Q+1, M_u)
        lag = row_delays + kappa - ref
        freq += np.exp(-2j * np.pi * np.outer(k, lag) / K) @ coupling
    return np.sum(freq * plan.freq_beams, axis=1)


def ofdm_receive(
    transmitted: np.ndarray,
    tap_channel: TapChannel,
    plan: OfdmPlan,
    noise_var: float,
    rng: np.random.Generator | None = None,
    num_symbols: int | None = None,
    strict: bool = True,
) -> OfdmReception:
    """Channel, CP removal, DFT and one-tap equalisation per sub-carrier.

    The receiver locks to ``q_max`` and opens its FFT window
    ``N_CP // 2`` samples early so the aligned residual spread sits inside
    the prefix. With ``strict`` a prefix shorter than the aligned spread is
    rejected.
    """
    K, cp = plan.num_subcarriers, plan.cp_length
    if strict and cp < plan.aligned_spread:
        raise ValueError(f"cyclic prefix {cp} shorter than aligned spread {plan.aligned_spread}")
    y = dam_receive(transmitted, tap_channel, noise_var, rng)
    block = K + cp
    if num_symbols is None:
        num_symbols = (transmitted.shape[0] - int(np.max(plan.delays))) // block
    start = int(plan.anchors.max()) + timing_offset(cp) + cp
    idx = start + np.arange(num_symbols)[:, None] * block + np.arange(K)[None, :]
    pad = max(0, int(idx.max()) + 1 - y.size)
    if pad:
        y = np.concatenate([y, np.zeros(pad, dtype=complex)])
    if idx.min() < 0:
        raise ValueError("FFT window starts before the first received sample")
    freq = np.fft.fft(y[idx], axis=1) / np.sqrt(K)
    gain = ofdm_gains(tap_channel, plan)
    with np.errstate(divide="ignore", invalid="ignore"):
        eq = np.where(gain != 0, freq / gain, 0.0)
    snr = np.abs(gain) ** 2 / noise_var if noise_var > 0 else np.full(K, np.inf)
    return OfdmReception(freq, eq, gain, snr)

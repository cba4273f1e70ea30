"""Monte Carlo harness for spectral-efficiency and BER experiments.

Every random draw comes from a generator keyed by
``(master seed, stream tag, M_t index, trial, ...)`` so a trial's outcome
does not depend on which worker ran it or in what order. Per-trial results
are merged by trial index.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .. import __version__
from ..beamalign import ba_digital_mmse, beam_search, dft_codebook, equivalent_channel, make_pilots
from ..channel import ClusterSet, PathChannel, TapChannel, cluster_taps, generate_path_channel, to_tap_channel
from ..core import (
    BeamformerSet,
    channel_rows,
    composite_response,
    isi_zf_beamformers,
    mmse_tap_beamformer,
    simulate_scalar_link,
    strongest_tap_beamformer,
)
from ..hybrid import hybrid_dam_pipeline
from ..ofdm import (
    OfdmPlan,
    dam_ofdm_precode,
    freq_effective_channel,
    hybridize_plan,
    ofdm_modulate,
    ofdm_receive,
    optimize_tf_beamformers,
)
from .qam import BITS_PER_SYMBOL, qam_demap, qam_map
from .scenario import SimScenario, dbm_to_watt

log = logging.getLogger(__name__)

CSV_HEADER = ["scenario", "architecture", "M_t", "M_RF", "P_dBm", "metric", "value", "ci_half", "trials", "seed"]

# stream tags for counter-based generators
CHANNEL, BITS, NOISE, PILOT = 0, 1, 2, 3

OFDM_ARCHS = ("dam-ofdm", "dam-ofdm-hybrid")


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


@dataclass
class Record:
    scenario: str
    architecture: str
    M_t: int
    M_RF: int
    P_dBm: float
    metric: str
    value: float
    ci_half: float
    trials: int
    seed: int
    extra: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        return [
            self.scenario,
            self.architecture,
            str(self.M_t),
            str(self.M_RF),
            repr(float(self.P_dBm)),
            self.metric,
            repr(float(self.value)),
            repr(float(self.ci_half)),
            str(self.trials),
            str(self.seed),
        ]


@dataclass
class SimResult:
    records: list[Record]
    scenario: SimScenario

    def find(self, architecture: str, metric: str, M_t: int | None = None, P_dBm: float | None = None) -> list[Record]:
        return [
            r
            for r in self.records
            if r.architecture == architecture
            and r.metric == metric
            and (M_t is None or r.M_t == M_t)
            and (P_dBm is None or r.P_dBm == P_dBm)
        ]

    def value(self, architecture: str, metric: str, M_t: int, P_dBm: float) -> float:
        (rec,) = self.find(architecture, metric, M_t, P_dBm)
        return rec.value

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.records:
                w.writerow(r.row())

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                payload = dict(zip(CSV_HEADER, [r.scenario, r.architecture, r.M_t, r.M_RF, r.P_dBm, r.metric,
                                                 r.value, r.ci_half, r.trials, r.seed]))
                payload.update(r.extra)
                fh.write(json.dumps(payload, sort_keys=True) + "\n")


def manifest(scenario: SimScenario, command: str) -> dict:
    """Run description written next to every CSV."""
    return {
        "command": command,
        "library_version": __version__,
        "seed": scenario.seed,
        "parameters": scenario.to_dict(),
        "noise_power_w": scenario.noise_var,
        "path_loss_db": scenario.path_loss_db,
        "conventions": {
            "modulation": "128-QAM cross constellation, quasi-Gray labelling",
            "equalizer": "genie complex gain, one tap per link or per sub-carrier",
            "spectral_efficiency": "log2(1+SINR) without guard overhead; OFDM rows exclude the K/(K+N_CP) factor",
            "pulse": "sinc with raised-cosine window over +-16 samples",
            "gain_model": "complex Gaussian path gains, exponential power-delay profile, distance path loss",
            "beam_metric": scenario.beam_metric,
            "ber_interval": "Wilson score, 95%",
            "se_interval": "normal approximation, 95%",
        },
    }


# trial set-up


@dataclass
class TrialChannel:
    path: PathChannel
    taps: TapChannel
    clusters: ClusterSet


def draw_channel(scenario: SimScenario, m_index: int, trial: int) -> TrialChannel:
    M_t = scenario.M_t[m_index]
    rng = trial_rng(scenario.seed, CHANNEL, m_index, trial)
    path = generate_path_channel(scenario.channel_spec(M_t), rng)
    taps = to_tap_channel(path)
    return TrialChannel(path, taps, cluster_taps(taps, scenario.C))


@dataclass
class SingleCarrierLink:
    beams: BeamformerSet
    sinr: float
    reference: int  # receive delay the link is locked to


def design_single_carrier(arch: str, ch: TrialChannel, sc: SimScenario, power: float, pilot_rng=None) -> SingleCarrierLink:
    noise = sc.noise_var
    tap_mode = sc.delay_mode == "fractional"
    if arch == "digital" and not tap_mode:
        beams, m = isi_zf_beamformers(ch.path, power, noise)
        return SingleCarrierLink(beams, m.sinr, int(ch.path.integer_delays.max()))
    if arch in ("digital", "digital-tap"):
        beams, m = mmse_tap_beamformer(ch.taps, ch.clusters, power, noise)
        return SingleCarrierLink(beams, m.sinr, ch.clusters.q_max)
    if arch in ("hybrid-full", "hybrid-partial"):
        structure = arch.split("-")[1]
        clusters = ch.clusters if tap_mode else None
        beams, m = hybrid_dam_pipeline(ch.path, power, noise, structure, sc.M_RF, ch.taps, clusters)
        ref = ch.clusters.q_max if tap_mode else int(ch.path.integer_delays.max())
        return SingleCarrierLink(beams, m.sinr, ref)
    if arch == "beam-align":
        codebook = dft_codebook(ch.taps.num_antennas, sc.d_over_lambda)
        pilots = make_pilots(sc.M_RF, ch.taps.max_tap)
        report = beam_search(ch.taps, codebook, pilots, power, noise, pilot_rng, sc.beam_metric)
        equiv = equivalent_channel(ch.taps, report.analog)
        clusters = cluster_taps(equiv, sc.C)
        beams, m = ba_digital_mmse(equiv, clusters, report.analog, power, noise)
        return SingleCarrierLink(beams, m.sinr, clusters.q_max)
    if arch == "strongest-tap":
        beams, m = strongest_tap_beamformer(ch.taps, power, noise)
        return SingleCarrierLink(beams, m.sinr, int(np.argmax(ch.taps.tap_powers)))
    raise ValueError(f"{arch!r} is not a single-carrier architecture")


def design_ofdm(ch: TrialChannel, sc: SimScenario, power: float) -> OfdmPlan:
    cp = max(sc.N_CP, ch.clusters.aligned_spread)
    return optimize_tf_beamformers(
        ch.taps, ch.clusters, sc.K, power, sc.noise_var, sc.M_u,
        cp_length=cp, max_iter=sc.ofdm_max_iter, tol=sc.ofdm_tol, rank_tol=sc.zf_rank_tol,
    )


def ofdm_spectral_efficiency(ch: TrialChannel, plan: OfdmPlan, noise_var: float) -> float:
    heff = freq_effective_channel(ch.taps, ch.clusters, plan)
    gamma = plan.num_subcarriers * np.abs(np.sum(heff * plan.freq_beams, axis=1)) ** 2 / noise_var
    return float(np.mean(np.log2(1.0 + gamma)))


def _count_errors(sent: np.ndarray, estimate: np.ndarray) -> int:
    return int(np.count_nonzero(qam_demap(estimate) != sent))


def simulate_single_carrier(link: SingleCarrierLink, ch: TrialChannel, bits: np.ndarray, noise_var: float, rng) -> int:
    symbols = qam_map(bits)
    rows, delays = channel_rows(ch.taps)
    e = composite_response(rows, delays, link.beams.precoders, link.beams.delays)
    y = simulate_scalar_link(symbols, e, noise_var, rng)
    r = y[link.reference : link.reference + symbols.size]
    return _count_errors(bits, r / e[link.reference])


def simulate_ofdm(plan: OfdmPlan, ch: TrialChannel, bits_rng, num_bits: int, noise_var: float, rng) -> tuple[int, int]:
    active = np.flatnonzero(plan.active)
    if active.size == 0:
        return num_bits // 2, num_bits
    per_symbol = BITS_PER_SYMBOL * active.size
    num_sym = -(-num_bits // per_symbol)
    bits = bits_rng.integers(0, 2, num_sym * per_symbol, dtype=np.uint8)
    grid = np.zeros((num_sym, plan.num_subcarriers), dtype=complex)
    grid[:, active] = qam_map(bits).reshape(num_sym, active.size)
    stream = ofdm_modulate(grid, plan.freq_beams, plan.cp_length)
    tx = dam_ofdm_precode(stream, plan.spatial, plan.delays)
    rx = ofdm_receive(tx, ch.taps, plan, noise_var, rng, num_symbols=num_sym)
    return _count_errors(bits, rx.equalized[:, active].ravel()), bits.size


# sweeps


def _run_trials(fn, count: int, workers: int) -> list:
    if workers <= 1:
        return [fn(t) for t in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _wilson(errors: int, total: int) -> tuple[float, float]:
    ci = binomtest(errors, total).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def spectral_efficiency_sweep(scenario: SimScenario, workers: int = 1) -> SimResult:
    """Mean ``log2(1 + SINR)`` per architecture, array size and power."""
    sc = scenario
    records = []
    for m_index, M_t in enumerate(sc.M_t):

        def one(trial, m_index=m_index):
            ch = draw_channel(sc, m_index, trial)
            out = {}
            for p_index, p_dbm in enumerate(sc.P_dBm):
                power = dbm_to_watt(p_dbm)
                plan = None
                for arch in sc.architectures:
                    if arch in OFDM_ARCHS:
                        if plan is None:
                            plan = design_ofdm(ch, sc, power)
                        use = plan if arch == "dam-ofdm" else hybridize_plan(plan, ch.path, sc.M_RF)
                        out[arch, p_index] = ofdm_spectral_efficiency(ch, use, sc.noise_var)
                    else:
                        prng = trial_rng(sc.seed, PILOT, m_index, trial, p_index)
                        link = design_single_carrier(arch, ch, sc, power, prng)
                        out[arch, p_index] = math.log2(1.0 + link.sinr)
            return out

        per_trial = _run_trials(one, sc.channels, workers)
        for arch in sc.architectures:
            for p_index, p_dbm in enumerate(sc.P_dBm):
                vals = np.array([t[arch, p_index] for t in per_trial])
                half = 1.96 * vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
                records.append(Record(sc.name, arch, M_t, sc.M_RF, p_dbm, "SE", float(vals.mean()), float(half),
                                      vals.size, sc.seed))
    return SimResult(records, sc)


def monte_carlo_ber(scenario: SimScenario, workers: int = 1) -> SimResult:
    """Uncoded 128-QAM BER per architecture, array size and power.

    Each trial draws one channel and ``scenario.bits`` bits (rounded up to
    whole symbols, or whole OFDM symbols); every architecture and power sees
    the same channel and bits.
    """
    sc = scenario
    records = []
    noise = sc.noise_var
    num_bits = -(-sc.bits // BITS_PER_SYMBOL) * BITS_PER_SYMBOL
    for m_index, M_t in enumerate(sc.M_t):

        def one(trial, m_index=m_index):
            ch = draw_channel(sc, m_index, trial)
            bits = trial_rng(sc.seed, BITS, m_index, trial).integers(0, 2, num_bits, dtype=np.uint8)
            out = {}
            for p_index, p_dbm in enumerate(sc.P_dBm):
                power = dbm_to_watt(p_dbm)
                plan = None
                for arch in sc.architectures:
                    # common random numbers: every architecture sees the same noise
                    nrng = trial_rng(sc.seed, NOISE, m_index, trial, p_index)
                    if arch in OFDM_ARCHS:
                        if plan is None:
                            plan = design_ofdm(ch, sc, power)
                        use = plan if arch == "dam-ofdm" else hybridize_plan(plan, ch.path, sc.M_RF)
                        brng = trial_rng(sc.seed, BITS, m_index, trial, 1)
                        out[arch, p_index] = simulate_ofdm(use, ch, brng, num_bits, noise, nrng)
                    else:
                        prng = trial_rng(sc.seed, PILOT, m_index, trial, p_index)
                        link = design_single_carrier(arch, ch, sc, power, prng)
                        out[arch, p_index] = (simulate_single_carrier(link, ch, bits, noise, nrng), num_bits)
            return out

        per_trial = _run_trials(one, sc.channels, workers)
        for arch in sc.architectures:
            for p_index, p_dbm in enumerate(sc.P_dBm):
                errors = sum(t[arch, p_index][0] for t in per_trial)
                total = sum(t[arch, p_index][1] for t in per_trial)
                low, high = _wilson(errors, total)
                records.append(Record(sc.name, arch, M_t, sc.M_RF, p_dbm, "BER", errors / total, (high - low) / 2,
                                      sc.channels, sc.seed,
                                      {"ci_low": low, "ci_high": high, "errors": errors, "bits": total}))
    return SimResult(records, sc)


def intervals_overlap(a: Record, b: Record) -> bool:
    return a.extra["ci_low"] <= b.extra["ci_high"] and b.extra["ci_low"] <= a.extra["ci_high"]


def write_outputs(result: SimResult, out: Path, command: str) -> Path:
    """Write ``out`` (CSV), a sibling ``.jsonl`` and a ``.manifest.json``."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result.write_csv(out)
    result.write_jsonl(out.with_suffix(".jsonl"))
    out.with_suffix(".manifest.json").write_text(
        json.dumps(manifest(result.scenario, command), indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out

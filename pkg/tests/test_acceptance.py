"""Acceptance criteria 1 to 11.

Each test prints one ``PASS``/``FAIL`` line and the terminal summary repeats
them. Monte Carlo criteria run at desk scale (100 channels, 1e4 bits).
"""

import csv
import time

import numpy as np
import pytest

from conftest import clustered_channel, crandn, random_paths, report
from oracles import empirical_sinr, zf_oracle_gain

from damlink.beamalign import zc_sequence
from damlink.channel import ArrayGeometry, ChannelSpec, Path, PathChannel, SubPath, cluster_taps, \
    generate_path_channel, to_tap_channel
from damlink.core import (
    channel_rows,
    dam_delays,
    dam_receive,
    dam_transmit,
    effective_isi_channels,
    isi_zf_beamformers,
    link_sinr,
)
from damlink.hybrid import hybrid_dam_pipeline
from damlink.ofdm import dam_ofdm_precode, ofdm_modulate, ofdm_receive, optimize_tf_beamformers, transmit_power
from damlink.sim.cli import main
from damlink.sim.qam import qam_map
from damlink.sim.runner import intervals_overlap, monte_carlo_ber, spectral_efficiency_sweep
from damlink.sim.scenario import SimScenario

pytestmark = pytest.mark.slow


def _leakage(vectors, F):
    c = np.abs(vectors.conj() @ F)
    c /= np.linalg.norm(vectors, axis=1)[:, None] * np.linalg.norm(F, axis=0)[None, :]
    np.fill_diagonal(c, 0.0)
    return c.max()


def test_criterion_1_zf_exactness():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_leak = worst_rx = 0.0
    for i in range(500):
        m_t = (16, 64, 128)[i % 3]
        L = (2, 4, 8)[(i // 3) % 3]
        ch = generate_path_channel(ChannelSpec(m_t, num_paths=L), rng)
        beams, m = isi_zf_beamformers(ch, 1.0, 1.0)
        worst_leak = max(worst_leak, _leakage(ch.vectors, beams.digital))
        s = qam_map(rng.integers(0, 2, 7 * 64))
        y = dam_receive(dam_transmit(s, beams), ch)
        n_max = int(ch.integer_delays.max())
        expect = np.zeros_like(y)
        expect[n_max : n_max + s.size] = m.gain * s
        worst_rx = max(worst_rx, np.max(np.abs(y - expect)) / abs(m.gain))
    elapsed = time.perf_counter() - start
    report(1, worst_leak < 1e-9 and worst_rx < 1e-9 and elapsed < 60,
           f"max leakage {worst_leak:.2e}, max stream error {worst_rx:.2e}, {elapsed:.1f} s")


def test_criterion_2_closed_form_matches_optimiser():
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(100):
        L = int(rng.integers(1, 4))
        m_t = int(rng.integers(L, 7))
        vectors, delays = random_paths(rng, L, m_t)
        _, m = isi_zf_beamformers((vectors, delays), 1.0, 1.0)
        worst = max(worst, abs(zf_oracle_gain(vectors, 1.0, rng) - m.sinr) / m.sinr)
    elapsed = time.perf_counter() - start
    report(2, worst < 1e-6 and elapsed < 120, f"max relative SNR gap {worst:.2e}, {elapsed:.1f} s")


def test_criterion_3_sinr_formula_vs_time_domain():
    rng = np.random.default_rng(103)
    errors = []
    for i in range(20):
        if i % 2 == 0:
            # path model with arbitrary, non-ZF beamformers
            L = int(rng.integers(2, 5))
            vectors, delays = random_paths(rng, L, 6)
            F = crandn(rng, 6, L)
            kappa = dam_delays(delays)
            noise = float(rng.uniform(0.1, 2.0))
            formula = link_sinr(effective_isi_channels((vectors, delays)), F, noise).sinr
            got = empirical_sinr(vectors.conj(), delays, F, kappa, int(delays.max()), noise, rng)
        else:
            # tap model: all taps act, clusters aligned to their anchors
            taps, cs = clustered_channel(rng, 6, [(0, 2), (5, 3)], 10)
            F = crandn(rng, 6, cs.num_clusters)
            kappa = cs.q_max - cs.anchors
            noise = float(rng.uniform(0.1, 2.0))
            formula = link_sinr(effective_isi_channels(taps, "tap", cs), F, noise).sinr
            rows, d = channel_rows(taps)
            got = empirical_sinr(rows, d, F, kappa, cs.q_max, noise, rng)
        errors.append(abs(got - formula) / formula)
    worst = max(errors)
    report(3, worst < 0.03, f"max relative error {worst:.4f} over 20 pairs, 1e6 samples each")


def test_criterion_4_hybrid_ordering_and_trend():
    start = time.perf_counter()
    sc = SimScenario()
    res = spectral_efficiency_sweep(sc)
    mean = {a: [res.value(a, "SE", m, 30.0) for m in sc.M_t] for a in sc.architectures}
    increasing = all(np.all(np.diff(v) > 0) for v in mean.values())
    ordered = all(mean["digital"][i] >= mean["hybrid-full"][i] >= mean["hybrid-partial"][i]
                  for i in range(len(sc.M_t)))
    gaps = [(d - h) / d for d, h in zip(mean["digital"], mean["hybrid-full"])]
    gap_ok = all(0 < g < 0.15 for g in gaps)
    elapsed = time.perf_counter() - start
    table = "; ".join(f"{a} " + "/".join(f"{x:.2f}" for x in v) for a, v in mean.items())
    report(4, increasing and ordered and gap_ok and elapsed < 600,
           f"{table}; gaps {', '.join(f'{g:.1%}' for g in gaps)}; {elapsed:.0f} s")


def test_criterion_5_exact_hybrid_realisation():
    rng = np.random.default_rng(105)
    worst = 0.0
    for _ in range(50):
        L = int(rng.integers(2, 5))
        paths = []
        for d in rng.choice(20, L, replace=False):
            subs = tuple(SubPath(float(a), 0.5, float(rng.uniform(0, 2 * np.pi))) for a in rng.uniform(-1, 1, 2))
            paths.append(Path(complex(crandn(rng)), float(d), int(d), subs))
        ch = PathChannel(paths, ArrayGeometry(32), 1.0)
        _, dig = hybrid_dam_pipeline(ch, 1.0, 1e-3, "digital")
        _, hyb = hybrid_dam_pipeline(ch, 1.0, 1e-3, "full", 2 * L)
        worst = max(worst, abs(hyb.sinr - dig.sinr) / dig.sinr)
    report(5, worst < 1e-6, f"max relative SINR gap {worst:.2e} over 50 instances")


def test_criterion_6_ber_floor():
    start = time.perf_counter()
    ber = {}
    for mode in ("integer", "fractional"):
        sc = SimScenario(M_t=[256], P_dBm=[30.0, 40.0], delay_mode=mode, architectures=["digital"])
        res = monte_carlo_ber(sc)
        ber[mode] = [res.value("digital", "BER", 256, p) for p in sc.P_dBm]
    i30, i40 = ber["integer"]
    f30, f40 = ber["fractional"]
    drop_ok = i30 > 0 and i30 >= 10 * i40
    floor_ok = f40 > 0 and f30 / f40 < 2
    elapsed = time.perf_counter() - start
    report(6, drop_ok and floor_ok and elapsed < 900,
           f"integer {i30:.2e} -> {i40:.2e}, fractional {f30:.2e} -> {f40:.2e} "
           f"(ratio {f30 / f40 if f40 else float('inf'):.2f}); {elapsed:.0f} s")


def test_criterion_7_beam_alignment_parity():
    sc = SimScenario(M_t=[256], M_RF=16, P_dBm=[30.0, 35.0, 40.0],
                     architectures=["digital-tap", "beam-align", "strongest-tap"])
    res = monte_carlo_ber(sc)
    parts, ok = [], True
    for p in sc.P_dBm:
        dig, ba, st = (res.find(a, "BER", 256, p)[0] for a in sc.architectures)
        overlap = intervals_overlap(dig, ba)
        margin = min(st.value - dig.value, st.value - ba.value)
        ok &= overlap and margin >= 0
        parts.append(f"{p:.0f} dBm: digital {dig.value:.2e} [{dig.extra['ci_low']:.2e}, {dig.extra['ci_high']:.2e}] "
                     f"BA {ba.value:.2e} [{ba.extra['ci_low']:.2e}, {ba.extra['ci_high']:.2e}] "
                     f"strongest {st.value:.2e} overlap={overlap} margin={margin:.2e}")
    report(7, ok, "; ".join(parts))


def test_criterion_8_zadoff_chu_identities():
    T = 127
    a, b = zc_sequence(1, T), zc_sequence(2, T)

    def corr(x, y, n):
        return sum(x[i] * np.conj(y[(i - n) % T]) for i in range(T)) / T

    auto = max(abs(corr(a, a, n)) for n in range(1, T))
    cross = max(abs(abs(corr(a, b, n)) - 1 / np.sqrt(T)) for n in range(T))
    report(8, auto < 1e-10 and cross < 1e-10, f"max off-peak autocorrelation {auto:.1e}, "
           f"max cross-correlation deviation {cross:.1e}")


def test_criterion_9_dam_ofdm_correctness():
    rng = np.random.default_rng(109)
    worst_ok, best_short, worst_drop, worst_power = 0.0, np.inf, 0.0, 0.0
    for _ in range(10):
        taps, cs = clustered_channel(rng, 12, [(2, 3), (9, 2), (15, 5)], 22)
        plan = optimize_tf_beamformers(taps, cs, 32, 1.0, float(rng.uniform(1e-3, 1.0)))
        worst_drop = max(worst_drop, -np.min(np.diff(plan.objective_history)))
        power = transmit_power(plan.spatial, plan.freq_beams, plan.delays)
        worst_power = max(worst_power, abs(power - 32.0) / 32.0)
        for cp in (plan.aligned_spread, plan.aligned_spread - 1):
            use = plan.with_cp(cp)
            active = np.flatnonzero(use.active)
            s = np.zeros((20, 32), dtype=complex)
            s[:, active] = qam_map(rng.integers(0, 2, 7 * 20 * active.size)).reshape(20, -1)
            tx = dam_ofdm_precode(ofdm_modulate(s, use.freq_beams, cp), use.spatial, use.delays)
            rx = ofdm_receive(tx, taps, use, 0.0, strict=False)
            err = np.max(np.abs(rx.equalized[:, active] - s[:, active]))
            if cp == plan.aligned_spread:
                worst_ok = max(worst_ok, err)
            else:
                best_short = min(best_short, err)
    ok = worst_ok < 1e-8 and best_short > 1e-3 and worst_drop <= 0 and worst_power < 1e-6
    report(9, ok, f"recovery error {worst_ok:.1e}, short-CP error >= {best_short:.2e}, "
           f"largest objective drop {max(worst_drop, 0):.1e}, power error {worst_power:.1e}")


def test_criterion_10_dam_ofdm_fractional_robustness():
    sc = SimScenario(M_t=[256], M_RF=16, P_dBm=[20.0, 25.0, 30.0, 35.0, 40.0], delay_mode="fractional",
                     architectures=["dam-ofdm", "dam-ofdm-hybrid"])
    res = monte_carlo_ber(sc)
    dig = [res.find("dam-ofdm", "BER", 256, p)[0] for p in sc.P_dBm]
    hyb = [res.find("dam-ofdm-hybrid", "BER", 256, p)[0] for p in sc.P_dBm]
    decreasing = all(a.value > b.value for a, b in zip(dig, dig[1:]))
    overlap = all(intervals_overlap(a, b) for a, b in zip(dig, hyb))
    report(10, decreasing and overlap,
           "digital " + "/".join(f"{r.value:.1e}" for r in dig) + ", hybrid " + "/".join(f"{r.value:.1e}" for r in hyb)
           + f"; no floor={decreasing}, overlap={overlap}")


def test_criterion_11_reproducibility(tmp_path):
    cfg = tmp_path / "table1.cfg"
    sc = SimScenario(M_t=[32, 64], channels=8, bits=2_100, P_dBm=[25.0, 35.0], delay_mode="fractional",
                     architectures=["digital", "digital-tap", "hybrid-full", "hybrid-partial", "beam-align",
                                    "strongest-tap", "dam-ofdm", "dam-ofdm-hybrid"], K=64, M_RF=8, seed=7)
    cfg.write_text(sc.to_text(), encoding="utf-8")
    blobs = {}
    for command in ("sweep-se", "sweep-ber"):
        for run, workers in (("a", 1), ("b", 1), ("c", 4)):
            out = tmp_path / f"{command}-{run}.csv"
            assert main([command, "--config", str(cfg), "--workers", str(workers), "--out", str(out)]) == 0
            blobs[command, run] = out.read_bytes()
    same = all(blobs[c, "a"] == blobs[c, "b"] == blobs[c, "c"] for c in ("sweep-se", "sweep-ber"))
    rows = sum(len(list(csv.reader(blobs[c, "a"].decode().splitlines()))) - 1 for c in ("sweep-se", "sweep-ber"))
    report(11, same and rows > 0, f"{rows} rows identical across reruns and 1 vs 4 workers")

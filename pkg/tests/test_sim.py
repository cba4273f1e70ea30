"""Tests for scenarios, the Monte Carlo runner and the command line."""

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damlink import __version__
from damlink.sim.cli import OUT_DIR_ENV, main
from damlink.sim.runner import (
    CSV_HEADER,
    design_ofdm,
    design_single_carrier,
    draw_channel,
    intervals_overlap,
    monte_carlo_ber,
    simulate_ofdm,
    simulate_single_carrier,
    spectral_efficiency_sweep,
    trial_rng,
    write_outputs,
)
from damlink.sim.scenario import ConfigError, SimScenario, dbm_to_watt, noise_power, noise_power_dbm


def _small(**kw):
    base = dict(M_t=[16, 32], channels=6, bits=700, P_dBm=[20.0, 30.0])
    base.update(kw)
    return SimScenario(**base)


class TestNoise:
    def test_table_value(self):
        assert noise_power_dbm(-174, 128e6) == pytest.approx(-92.93, abs=5e-3)
        assert noise_power(-174, 128e6) == pytest.approx(10 ** ((-92.928 - 30) / 10), rel=1e-3)

    def test_one_hertz(self):
        assert noise_power_dbm(-174, 1.0) == -174

    def test_doubling_bandwidth(self):
        assert noise_power_dbm(-174, 2e6) - noise_power_dbm(-174, 1e6) == pytest.approx(3.0103, abs=1e-4)

    def test_bandwidth_positive(self):
        with pytest.raises(ValueError):
            noise_power(-174, 0)

    def test_dbm(self):
        assert dbm_to_watt(30) == pytest.approx(1.0)


class TestScenario:
    def test_defaults_follow_parameter_table(self):
        sc = SimScenario()
        assert (sc.M_RF, sc.L, sc.mu_max, sc.K, sc.C) == (4, 4, 3, 256, 0.01)
        assert sc.sample_interval == pytest.approx(7.8125e-9)
        spec = sc.channel_spec(64)
        assert spec.num_delay_bins == 41
        assert spec.path_gain_db == pytest.approx(-sc.path_loss_db)

    def test_text_round_trip(self):
        sc = _small(architectures=["digital", "beam-align"], delay_mode="fractional", seed=42)
        again = SimScenario.from_text(sc.to_text())
        assert again == sc
        assert again.to_text() == sc.to_text()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 512), min_size=1, max_size=4),
           st.lists(st.floats(-50, 60, allow_nan=False), min_size=1, max_size=5),
           st.integers(0, 2**31), st.floats(1e-4, 0.99))
    def test_round_trip_property(self, m_t, powers, seed, c):
        sc = SimScenario(M_t=m_t, P_dBm=powers, seed=seed, C=c)
        assert SimScenario.from_text(sc.to_text()) == sc

    def test_comments_and_blank_lines(self):
        sc = SimScenario.from_text("# table\n\nM_t = 8, 16  # two sizes\nseed = 3\n")
        assert sc.M_t == [8, 16] and sc.seed == 3

    @pytest.mark.parametrize("text, key", [
        ("bogus = 1", "bogus"),
        ("M_RF = 0", "M_RF"),
        ("C = 2", "C"),
        ("channels = 0", "channels"),
        ("K = 3.5", "K"),
        ("architectures = digital, warp", "architectures"),
        ("delay_mode = analog", "delay_mode"),
        ("seed = 1\nseed = 2", "seed"),
        ("beam_metric = loud", "beam_metric"),
    ])
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(ConfigError, match=key):
            SimScenario.from_text(text)

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="key = value"):
            SimScenario.from_text("M_t 16")

    def test_missing_file_mentions_path(self, tmp_path):
        path = tmp_path / "nope.cfg"
        with pytest.raises(FileNotFoundError, match="nope.cfg"):
            SimScenario.from_file(path)

    def test_overrides(self):
        sc = SimScenario().apply_overrides(["M_t=8,16", "P_dBm = 10, 20.5"])
        assert sc.M_t == [8, 16] and sc.P_dBm == [10.0, 20.5]
        with pytest.raises(ConfigError, match="nothing"):
            SimScenario().apply_overrides(["nothing=1"])
        with pytest.raises(ConfigError):
            SimScenario().apply_overrides(["seed"])


class TestRunner:
    def test_trial_streams(self):
        a = trial_rng(1, 0, 2, 3).standard_normal(4)
        assert np.array_equal(a, trial_rng(1, 0, 2, 3).standard_normal(4))
        assert not np.array_equal(a, trial_rng(1, 0, 2, 4).standard_normal(4))
        assert not np.array_equal(a, trial_rng(2, 0, 2, 3).standard_normal(4))

    def test_noiseless_zf_is_error_free(self):
        sc = _small()
        for trial in range(5):
            ch = draw_channel(sc, 1, trial)
            link = design_single_carrier("digital", ch, sc, 1.0)
            bits = trial_rng(0, 9, trial).integers(0, 2, 7 * 2000)
            assert simulate_single_carrier(link, ch, bits, 0.0, None) == 0

    def test_negligible_noise_run_is_error_free(self):
        # hybrid fits leave residual ISI, so only the ZF design is exact here
        res = monte_carlo_ber(_small(N0=-300.0, M_t=[32], architectures=["digital"]))
        assert all(r.value == 0.0 for r in res.records)

    def test_thread_count_does_not_change_results(self):
        sc = _small(architectures=["digital", "hybrid-full", "hybrid-partial", "beam-align", "strongest-tap"],
                    delay_mode="fractional", M_RF=8)
        for fn in (spectral_efficiency_sweep, monte_carlo_ber):
            one = fn(sc, workers=1)
            many = fn(sc, workers=4)
            assert [r.row() for r in one.records] == [r.row() for r in many.records]

    def test_record_ranges(self):
        sc = _small(architectures=["digital", "strongest-tap"], delay_mode="fractional", P_dBm=[0.0, 30.0])
        res = monte_carlo_ber(sc)
        for r in res.records:
            assert 0.0 <= r.value <= 0.5 + 1e-2
            assert r.extra["ci_low"] <= r.value <= r.extra["ci_high"]
            assert r.ci_half == pytest.approx((r.extra["ci_high"] - r.extra["ci_low"]) / 2)
            assert r.extra["bits"] == sc.channels * 700
        se = spectral_efficiency_sweep(sc)
        assert all(r.value >= 0 for r in se.records)

    def test_single_path_architectures_coincide(self):
        sc = _small(L=1, mu_max=1, M_t=[16, 64], P_dBm=[30.0])
        res = spectral_efficiency_sweep(sc)
        noise = sc.noise_var
        for m_index, M_t in enumerate(sc.M_t):
            mrt = np.mean([math.log2(1 + np.linalg.norm(draw_channel(sc, m_index, t).path.vectors) ** 2 / noise)
                           for t in range(sc.channels)])
            for arch in sc.architectures:
                assert res.value(arch, "SE", M_t, 30.0) == pytest.approx(mrt, rel=1e-6)

    def test_ofdm_architectures(self):
        sc = _small(M_t=[32], K=64, channels=2, architectures=["dam-ofdm", "dam-ofdm-hybrid"],
                    delay_mode="fractional", M_RF=16, P_dBm=[40.0])
        ch = draw_channel(sc, 0, 0)
        plan = design_ofdm(ch, sc, dbm_to_watt(40.0))
        assert plan.cp_length == max(sc.N_CP, ch.clusters.aligned_spread)
        errors, total = simulate_ofdm(plan, ch, trial_rng(0, 5), 5000, sc.noise_var, trial_rng(0, 6))
        assert total >= 5000 and errors / total < 0.05
        res = spectral_efficiency_sweep(sc)
        # both designs are local optima of the same objective
        assert res.value("dam-ofdm-hybrid", "SE", 32, 40.0) == pytest.approx(
            res.value("dam-ofdm", "SE", 32, 40.0), rel=1e-3)

    def test_unknown_architecture(self):
        sc = _small()
        with pytest.raises(ValueError):
            design_single_carrier("dam-ofdm", draw_channel(sc, 0, 0), sc, 1.0)

    def test_outputs(self, tmp_path):
        sc = _small(M_t=[16], channels=3)
        res = monte_carlo_ber(sc)
        out = write_outputs(res, tmp_path / "sub" / "ber.csv", "sweep-ber")
        rows = list(csv.reader(open(out, encoding="utf-8")))
        assert rows[0] == CSV_HEADER
        assert len(rows) == 1 + len(sc.architectures) * len(sc.P_dBm)
        lines = (tmp_path / "sub" / "ber.jsonl").read_text().splitlines()
        assert json.loads(lines[0])["errors"] >= 0
        man = json.loads((tmp_path / "sub" / "ber.manifest.json").read_text())
        assert man["library_version"] == __version__
        assert man["seed"] == 0 and man["parameters"]["M_t"] == [16]

    def test_interval_overlap(self):
        res = monte_carlo_ber(_small(M_t=[16], P_dBm=[20.0]))
        a, b = res.records[0], res.records[1]
        assert intervals_overlap(a, a)
        assert intervals_overlap(a, b) == intervals_overlap(b, a)


class TestCli:
    def _cfg(self, tmp_path):
        path = tmp_path / "table1.cfg"
        path.write_text(_small(M_t=[16], channels=3).to_text(), encoding="utf-8")
        return path

    def test_sweep_se_writes_header(self, tmp_path, capsys):
        cfg = self._cfg(tmp_path)
        assert main(["sweep-se", "--config", str(cfg), "--seed", "42", "--out", str(tmp_path / "se.csv")]) == 0
        rows = list(csv.reader(open(tmp_path / "se.csv", encoding="utf-8")))
        assert rows[0] == CSV_HEADER
        assert all(r[-1] == "42" for r in rows[1:])
        assert (tmp_path / "se.manifest.json").exists()

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = self._cfg(tmp_path)
        for name, workers in (("a.csv", "1"), ("b.csv", "1"), ("c.csv", "3")):
            assert main(["sweep-ber", "--config", str(cfg), "--workers", workers,
                         "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a.csv").read_bytes()
        assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()

    def test_missing_config(self, tmp_path, capsys):
        path = tmp_path / "missing.cfg"
        assert main(["sweep-se", "--config", str(path)]) != 0
        assert str(path) in capsys.readouterr().err

    def test_bad_config_names_key(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("M_RF = -2\n", encoding="utf-8")
        assert main(["sweep-se", "--config", str(path)]) != 0
        assert "M_RF" in capsys.readouterr().err

    def test_unknown_command_and_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["sweep-everything"])
        assert exc.value.code != 0
        with pytest.raises(SystemExit) as exc:
            main(["sweep-se", "--frobnicate"])
        assert exc.value.code != 0
        assert "usage" in capsys.readouterr().err

    def test_output_directory_variable(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
        cfg = self._cfg(tmp_path)
        assert main(["channel-dump", "--config", str(cfg), "--trial", "2"]) == 0
        data = json.loads((tmp_path / "channel.json").read_text())
        assert data["path"]["kind"] == "path" and data["taps"]["kind"] == "tap"

    def test_beam_align_and_ofdm_commands(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
        cfg = self._cfg(tmp_path)
        assert main(["beam-align", "--config", str(cfg), "--set", "M_RF=8"]) == 0
        rows = list(csv.reader(open(tmp_path / "beam_search.csv", encoding="utf-8")))
        assert rows[0] == ["round", "sequence", "beam", "r"] and len(rows) == 17
        assert main(["dam-ofdm", "--config", str(cfg), "--M-t", "32", "--K", "64", "--N-CP", "8",
                     "--set", "delay_mode=fractional"]) == 0
        plan = json.loads((tmp_path / "ofdm_plan.json").read_text())
        assert plan["num_subcarriers"] == 64 and plan["cp_length"] >= 8
        assert len((tmp_path / "ofdm_plan.csv").read_text().splitlines()) == 65

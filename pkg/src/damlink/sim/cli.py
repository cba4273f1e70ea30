"""Command line entry point: ``damlink <sub-command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..beamalign import beam_search, dft_codebook, make_pilots
from ..ofdm import freq_effective_channel
from ..serialization import dump_json
from .runner import (
    PILOT,
    design_ofdm,
    draw_channel,
    monte_carlo_ber,
    ofdm_spectral_efficiency,
    spectral_efficiency_sweep,
    trial_rng,
    write_outputs,
)
from .scenario import ConfigError, SimScenario, dbm_to_watt

OUT_DIR_ENV = "DAMLINK_OUT_DIR"

log = logging.getLogger("damlink")


def _out_path(value: str | None, default_name: str) -> Path:
    base = Path(os.environ.get(OUT_DIR_ENV, "."))
    if value is None:
        return base / default_name
    p = Path(value)
    return p if p.is_absolute() else base / p


def _scenario(args) -> SimScenario:
    sc = SimScenario.from_file(args.config) if args.config else SimScenario()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return sc.apply_overrides(overrides) if overrides else sc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario file with 'key = value' lines")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one scenario key; repeatable")
    p.add_argument("--out", help=f"output path (relative paths resolve under ${OUT_DIR_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="damlink", description="Delay alignment modulation link simulator.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep-se", help="mean spectral efficiency per architecture and M_t")
    _common(p)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("sweep-ber", help="Monte Carlo 128-QAM BER per architecture and power")
    _common(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--full-scale", action="store_true", help="1000 channels x 1e5 bits per point")

    p = sub.add_parser("beam-align", help="run one codebook beam search and export the metrics")
    _common(p)
    p.add_argument("--trial", type=int, default=0, help="channel index")
    p.add_argument("--M-t", dest="M_t", type=int, help="array size (default: first in the config)")

    p = sub.add_parser("dam-ofdm", help="design one DAM-OFDM plan and export it")
    _common(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--M-t", dest="M_t", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--N-CP", dest="N_CP", type=int)
    p.add_argument("--M-u", dest="M_u", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("channel-dump", help="write one channel realisation as JSON")
    _common(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--M-t", dest="M_t", type=int)
    return parser


def _single(sc: SimScenario, M_t: int | None) -> tuple[SimScenario, int]:
    if M_t is not None:
        sc = sc.replace(M_t=[M_t])
    return sc, 0


def cmd_sweep_se(args) -> int:
    sc = _scenario(args)
    out = _out_path(args.out, "se.csv")
    result = spectral_efficiency_sweep(sc, workers=args.workers)
    write_outputs(result, out, "sweep-se")
    print(out)
    return 0


def cmd_sweep_ber(args) -> int:
    sc = _scenario(args)
    if args.full_scale:
        sc = sc.replace(channels=1000, bits=100_000)
    out = _out_path(args.out, "ber.csv")
    result = monte_carlo_ber(sc, workers=args.workers)
    write_outputs(result, out, "sweep-ber")
    print(out)
    return 0


def cmd_beam_align(args) -> int:
    sc, m_index = _single(_scenario(args), args.M_t)
    ch = draw_channel(sc, m_index, args.trial)
    power = dbm_to_watt(sc.P_dBm[0])
    report = beam_search(
        ch.taps,
        dft_codebook(ch.taps.num_antennas, sc.d_over_lambda),
        make_pilots(sc.M_RF, ch.taps.max_tap),
        power,
        sc.noise_var,
        trial_rng(sc.seed, PILOT, m_index, args.trial, 0),
        sc.beam_metric,
    )
    out = _out_path(args.out, "beam_search.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(out)
    log.info("per-round pilot power %.6g W", report.pilot_power)
    print(out)
    return 0


def cmd_dam_ofdm(args) -> int:
    sc, m_index = _single(_scenario(args), args.M_t)
    changes = {k: getattr(args, k) for k in ("K", "N_CP", "M_u") if getattr(args, k) is not None}
    if args.max_iter is not None:
        changes["ofdm_max_iter"] = args.max_iter
    if args.tol is not None:
        changes["ofdm_tol"] = args.tol
    sc = sc.replace(**changes)
    ch = draw_channel(sc, m_index, args.trial)
    plan = design_ofdm(ch, sc, dbm_to_watt(sc.P_dBm[0]))
    out = _out_path(args.out, "ofdm_plan.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(plan.to_dict(), out)
    heff = freq_effective_channel(ch.taps, ch.clusters, plan)
    gamma = sc.K * np.abs(np.sum(heff * plan.freq_beams, axis=1)) ** 2 / sc.noise_var
    with open(out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "gamma", "u_norm2"])
        for k in range(sc.K):
            w.writerow([k, repr(float(gamma[k])), repr(float(np.sum(np.abs(plan.freq_beams[k]) ** 2)))])
    print(f"{out} SE={ofdm_spectral_efficiency(ch, plan, sc.noise_var):.6f} "
          f"iterations={len(plan.objective_history) - 1} N_CP={plan.cp_length}")
    return 0


def cmd_channel_dump(args) -> int:
    sc, m_index = _single(_scenario(args), args.M_t)
    ch = draw_channel(sc, m_index, args.trial)
    out = _out_path(args.out, "channel.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(
        {
            "path": ch.path.to_dict(),
            "taps": ch.taps.to_dict(),
            "clusters": [{"indices": list(c.indices), "anchor": c.anchor} for c in ch.clusters.clusters],
        },
        out,
    )
    print(out)
    return 0


COMMANDS = {
    "sweep-se": cmd_sweep_se,
    "sweep-ber": cmd_sweep_ber,
    "beam-align": cmd_beam_align,
    "dam-ofdm": cmd_dam_ofdm,
    "channel-dump": cmd_channel_dump,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"damlink: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"damlink: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..beamalign import METRICS
from ..channel import ChannelSpec

SPEED_OF_LIGHT = 299_792_458.0

ARCHITECTURES = (
    "digital",
    "digital-tap",
    "hybrid-full",
    "hybrid-partial",
    "beam-align",
    "strongest-tap",
    "dam-ofdm",
    "dam-ofdm-hybrid",
)


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending key."""


def noise_power(n0_dbm_hz: float, bandwidth: float) -> float:
    """Noise power in watts for density ``N0`` (dBm/Hz) over ``B`` Hz."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return 10 ** ((noise_power_dbm(n0_dbm_hz, bandwidth) - 30) / 10)


def noise_power_dbm(n0_dbm_hz: float, bandwidth: float) -> float:
    return n0_dbm_hz + 10 * math.log10(bandwidth)


def dbm_to_watt(p_dbm: float) -> float:
    return 10 ** ((p_dbm - 30) / 10)


@dataclass
class SimScenario:
    """One experiment. Names follow the parameter table of the system model.

    ``distance`` and ``pl_exponent`` set a large-scale path loss
    ``20 log10(4 pi f / c) + 10 n log10(d)`` applied to every channel, so
    that transmit powers in dBm map onto a useful SNR range.
    """

    name: str = "table1"
    M_t: list[int] = field(default_factory=lambda: [64, 128, 256])
    M_RF: int = 4
    f: float = 28e9
    B: float = 128e6
    N0: float = -174.0
    d_over_lambda: float = 0.5
    L: int = 4
    tau_max: float = 312.5e-9
    mu_max: int = 3
    aod_max_deg: float = 60.0
    K: int = 256
    N_CP: int = 32
    M_u: int = 1
    C: float = 0.01
    P_dBm: list[float] = field(default_factory=lambda: [30.0])
    delay_mode: str = "integer"
    architectures: list[str] = field(default_factory=lambda: ["digital", "hybrid-full", "hybrid-partial"])
    channels: int = 100
    bits: int = 10_000
    seed: int = 0
    distance: float = 70.0
    pl_exponent: float = 2.92
    zf_rank_tol: float = 0.1
    ofdm_max_iter: int = 200
    ofdm_tol: float = 1e-6
    beam_metric: str = "peak"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg}")

        need(len(self.M_t) >= 1 and all(m >= 1 for m in self.M_t), "M_t", "antenna counts must be >= 1")
        need(self.M_RF >= 1, "M_RF", "must be >= 1")
        need(self.B > 0, "B", "bandwidth must be positive")
        need(self.f > 0, "f", "carrier frequency must be positive")
        need(self.d_over_lambda > 0, "d_over_lambda", "must be positive")
        need(self.L >= 1, "L", "must be >= 1")
        need(self.tau_max > 0, "tau_max", "must be positive")
        need(self.mu_max >= 1, "mu_max", "must be >= 1")
        need(0 < self.aod_max_deg <= 90, "aod_max_deg", "must lie in (0, 90]")
        need(self.K >= 1, "K", "must be >= 1")
        need(self.N_CP >= 0, "N_CP", "must be >= 0")
        need(self.M_u >= 1, "M_u", "must be >= 1")
        need(0 < self.C < 1, "C", "threshold must lie in (0, 1)")
        need(len(self.P_dBm) >= 1, "P_dBm", "at least one power point required")
        need(self.delay_mode in ("integer", "fractional"), "delay_mode", "must be integer or fractional")
        need(len(self.architectures) >= 1, "architectures", "at least one architecture required")
        for a in self.architectures:
            need(a in ARCHITECTURES, "architectures", f"unknown architecture {a!r}; expected one of {ARCHITECTURES}")
        need(self.channels >= 1, "channels", "trial count must be >= 1")
        need(self.bits >= 7, "bits", "must be >= 7")
        need(self.distance > 0, "distance", "must be positive")
        need(self.zf_rank_tol >= 0, "zf_rank_tol", "must be >= 0")
        need(self.ofdm_max_iter >= 1, "ofdm_max_iter", "must be >= 1")
        need(self.beam_metric in METRICS, "beam_metric", f"must be one of {METRICS}")

    @property
    def sample_interval(self) -> float:
        return 1.0 / self.B

    @property
    def noise_var(self) -> float:
        return noise_power(self.N0, self.B)

    @property
    def path_loss_db(self) -> float:
        fspl_1m = 20 * math.log10(4 * math.pi * self.f / SPEED_OF_LIGHT)
        return fspl_1m + 10 * self.pl_exponent * math.log10(self.distance)

    def channel_spec(self, num_antennas: int) -> ChannelSpec:
        return ChannelSpec(
            num_antennas=num_antennas,
            num_paths=self.L,
            tau_max=self.tau_max,
            mu_max=self.mu_max,
            aod_max_deg=self.aod_max_deg,
            delay_mode=self.delay_mode,
            sample_interval=self.sample_interval,
            spacing=self.d_over_lambda,
            path_gain_db=-self.path_loss_db,
        )

    def replace(self, **changes) -> "SimScenario":
        return dataclasses.replace(self, **changes)

    # flat key = value format

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "SimScenario":
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{key}: unknown key ({source}:{lineno})")
            if key in values:
                raise ConfigError(f"{key}: duplicate key ({source}:{lineno})")
            values[key] = _parse(key, value, known[key].type)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "SimScenario":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_text(p.read_text(encoding="utf-8"), source=str(p))

    def apply_overrides(self, pairs: list[str]) -> "SimScenario":
        """Apply ``key=value`` strings on top of this scenario."""
        known = {f.name: f for f in dataclasses.fields(SimScenario)}
        changes = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"{pair}: override must look like key=value")
            key, value = (s.strip() for s in pair.split("=", 1))
            if key not in known:
                raise ConfigError(f"{key}: unknown key")
            changes[key] = _parse(key, value, known[key].type)
        return self.replace(**changes)


def _format(value) -> str:
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(key: str, value: str, annotation: str):
    kind = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    try:
        if kind.startswith("list"):
            inner = kind[kind.index("[") + 1 : -1]
            items = [v.strip() for v in value.split(",") if v.strip()]
            return [_scalar(inner, v) for v in items]
        return _scalar(kind, value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind} ({exc})") from None


def _scalar(kind: str, value: str):
    if kind == "int":
        as_float = float(value)
        if not as_float.is_integer():
            raise ValueError("not an integer")
        return int(as_float)
    if kind == "float":
        return float(value)
    return value

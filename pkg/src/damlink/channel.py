"""Sparse multipath MISO channels: path-based and tap-based forms.

A :class:`PathChannel` holds ``L`` resolvable paths, each made of sub-paths
sharing one delay. :func:`to_tap_channel` samples it through a Nyquist pulse
into a :class:`TapChannel`, and :func:`cluster_taps` groups the significant
taps into clusters of consecutive indices.

Tap matrices store row ``q`` as ``h_DL[q]^H`` so that the received sample is
``taps[q] @ x[n - q]`` without further conjugation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .serialization import decode_complex, encode_complex

#: Pulse support on each side of the peak, in sample intervals.
PULSE_HALF_WIDTH = 16


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array."""

    num_antennas: int
    spacing: float = 0.5  # d / lambda

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError(f"num_antennas must be >= 1, got {self.num_antennas}")
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")


@dataclass(frozen=True)
class SubPath:
    aod: float  # radians
    power_share: float
    phase: float = 0.0

    @property
    def coefficient(self) -> complex:
        return np.sqrt(self.power_share) * np.exp(1j * self.phase)


@dataclass(frozen=True)
class Path:
    gain: complex
    delay: float  # seconds
    integer_delay: int
    sub_paths: tuple[SubPath, ...]

    def __post_init__(self):
        if not self.sub_paths:
            raise ValueError("a path needs at least one sub-path")
        total = sum(sp.power_share for sp in self.sub_paths)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"sub-path power shares sum to {total}, expected 1")


def array_response(theta, geometry: ArrayGeometry) -> np.ndarray:
    """ULA transmit response ``exp(-j 2 pi (d/lambda) m sin(theta))``.

    ``theta`` may be a scalar (returns shape ``(M_t,)``) or an array of
    angles (returns ``(M_t, len(theta))``).
    """
    m = np.arange(geometry.num_antennas)
    theta = np.asarray(theta, dtype=float)
    phase = -2j * np.pi * geometry.spacing * np.multiply.outer(m, np.sin(theta))
    return np.exp(phase)


@dataclass
class PathChannel:
    paths: list[Path]
    geometry: ArrayGeometry
    sample_interval: float = 1.0

    def __post_init__(self):
        if len(self.paths) < 1:
            raise ValueError("a channel needs at least one path")
        delays = [p.integer_delay for p in self.paths]
        if len(set(delays)) != len(delays):
            raise ValueError(f"path delays must be distinct, got {delays}")

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    @property
    def num_antennas(self) -> int:
        return self.geometry.num_antennas

    @property
    def integer_delays(self) -> np.ndarray:
        return np.array([p.integer_delay for p in self.paths], dtype=int)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @cached_property
    def vectors(self) -> np.ndarray:
        """Composite path vectors ``h_l`` as rows, shape ``(L, M_t)``."""
        rows = []
        for p in self.paths:
            angles = [sp.aod for sp in p.sub_paths]
            coefs = np.array([sp.coefficient for sp in p.sub_paths])
            rows.append(p.gain * (array_response(angles, self.geometry) @ coefs))
        return np.array(rows)

    @property
    def aods(self) -> np.ndarray:
        return np.array([sp.aod for p in self.paths for sp in p.sub_paths])

    def to_dict(self) -> dict:
        return {
            "kind": "path",
            "num_antennas": self.geometry.num_antennas,
            "spacing": self.geometry.spacing,
            "sample_interval": self.sample_interval,
            "paths": [
                {
                    "gain": encode_complex(p.gain),
                    "delay": p.delay,
                    "integer_delay": p.integer_delay,
                    "sub_paths": [[sp.aod, sp.power_share, sp.phase] for sp in p.sub_paths],
                }
                for p in self.paths
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PathChannel":
        if data.get("kind") != "path":
            raise ValueError(f"not a path channel snapshot: kind={data.get('kind')!r}")
        paths = [
            Path(
                gain=complex(decode_complex(p["gain"])),
                delay=float(p["delay"]),
                integer_delay=int(p["integer_delay"]),
                sub_paths=tuple(SubPath(*map(float, sp)) for sp in p["sub_paths"]),
            )
            for p in data["paths"]
        ]
        geometry = ArrayGeometry(int(data["num_antennas"]), float(data["spacing"]))
        return cls(paths, geometry, float(data["sample_interval"]))


@dataclass
class TapChannel:
    taps: np.ndarray  # (Q+1, M_t), row q = h_DL[q]^H
    sample_interval: float
    tau_ub: float

    @property
    def num_taps(self) -> int:
        return self.taps.shape[0]

    @property
    def max_tap(self) -> int:
        return self.taps.shape[0] - 1

    @property
    def num_antennas(self) -> int:
        return self.taps.shape[1]

    @property
    def tap_powers(self) -> np.ndarray:
        return np.sum(np.abs(self.taps) ** 2, axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": "tap",
            "sample_interval": self.sample_interval,
            "tau_ub": self.tau_ub,
            "taps": encode_complex(self.taps),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TapChannel":
        if data.get("kind") != "tap":
            raise ValueError(f"not a tap channel snapshot: kind={data.get('kind')!r}")
        taps = np.atleast_2d(decode_complex(data["taps"]))
        return cls(taps, float(data["sample_interval"]), float(data["tau_ub"]))


@dataclass(frozen=True)
class Cluster:
    indices: tuple[int, ...]
    anchor: int

    @property
    def half_spread(self) -> int:
        return max(abs(q - self.anchor) for q in self.indices)


@dataclass
class ClusterSet:
    clusters: list[Cluster]
    significant: np.ndarray = field(repr=False)  # boolean mask over taps

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)

    @property
    def anchors(self) -> np.ndarray:
        return np.array([c.anchor for c in self.clusters], dtype=int)

    @property
    def q_max(self) -> int:
        return int(self.anchors.max())

    @property
    def half_spread(self) -> int:
        return max(c.half_spread for c in self.clusters)

    @property
    def aligned_spread(self) -> int:
        return 2 * self.half_spread

    @property
    def aligned_support(self) -> int:
        """Realised spread after alignment: range of ``q - q_l`` over all clusters."""
        rel = [q - c.anchor for c in self.clusters for q in c.indices]
        return max(rel) - min(rel)

    @property
    def occupied_spread(self) -> int:
        """Spread of the significant taps before alignment."""
        idx = np.flatnonzero(self.significant)
        return int(idx[-1] - idx[0])

    def complement(self, l: int) -> list[int]:
        """Tap indices belonging to every cluster except ``l``."""
        return [q for k, c in enumerate(self.clusters) if k != l for q in c.indices]


# Channel generation

@dataclass(frozen=True)
class ChannelSpec:
    """Parameters of the random channel generator for one array size."""

    num_antennas: int
    num_paths: int = 4
    tau_max: float = 312.5e-9
    mu_max: int = 3
    aod_max_deg: float = 60.0
    delay_mode: str = "integer"  # integer | fractional
    sample_interval: float = 1 / 128e6
    spacing: float = 0.5
    path_gain_db: float = 0.0  # large-scale gain applied to every path

    @property
    def num_delay_bins(self) -> int:
        return int(round(self.tau_max / self.sample_interval)) + 1


def generate_path_channel(spec: ChannelSpec, rng: np.random.Generator) -> PathChannel:
    """Draw a random sparse channel.

    Delays are uniform on ``[0, tau_max]`` (integer mode: distinct grid
    indices drawn without replacement). Each path has ``mu ~ U{1..mu_max}``
    sub-paths with AoDs uniform in ``[-aod_max, aod_max]``, uniform random
    power shares normalised to one, and uniform phases. Path gains are
    circularly symmetric Gaussian with an exponential power-delay profile
    ``exp(-tau / tau_max)``, normalised so that the expected total power over
    paths equals ``10**(path_gain_db / 10)``.
    """
    if spec.num_paths < 1:
        raise ValueError(f"num_paths must be >= 1, got {spec.num_paths}")
    if spec.tau_max <= 0:
        raise ValueError(f"tau_max must be positive, got {spec.tau_max}")
    if spec.mu_max < 1:
        raise ValueError(f"mu_max must be >= 1, got {spec.mu_max}")
    ts = spec.sample_interval
    L = spec.num_paths

    if spec.delay_mode == "integer":
        if L > spec.num_delay_bins:
            raise ValueError(
                f"cannot draw {L} distinct integer delays from {spec.num_delay_bins} bins"
            )
        n = rng.choice(spec.num_delay_bins, size=L, replace=False)
        tau = n * ts
    elif spec.delay_mode == "fractional":
        tau = rng.uniform(0.0, spec.tau_max, size=L)
        n = np.rint(tau / ts).astype(int)
    else:
        raise ValueError(f"unknown delay_mode {spec.delay_mode!r}")

    pdp = np.exp(-tau / spec.tau_max)
    pdp *= 10 ** (spec.path_gain_db / 10) / pdp.sum()
    gains = np.sqrt(pdp / 2) * (rng.standard_normal(L) + 1j * rng.standard_normal(L))

    aod_max = np.deg2rad(spec.aod_max_deg)
    paths = []
    for l in range(L):
        mu = int(rng.integers(1, spec.mu_max + 1))
        aods = rng.uniform(-aod_max, aod_max, size=mu)
        shares = rng.uniform(0.0, 1.0, size=mu) + 1e-12
        shares /= shares.sum()
        # exact unit sum despite rounding
        shares[-1] = 1.0 - shares[:-1].sum()
        phases = rng.uniform(0.0, 2 * np.pi, size=mu)
        subs = tuple(SubPath(float(a), float(s), float(p)) for a, s, p in zip(aods, shares, phases))
        paths.append(Path(complex(gains[l]), float(tau[l]), int(n[l]), subs))

    if spec.delay_mode == "fractional":
        # rounding can collide; keep integer_delay distinct by nudging
        used: set[int] = set()
        fixed = []
        for p in sorted(paths, key=lambda p: p.delay):
            k = p.integer_delay
            while k in used:
                k += 1
            used.add(k)
            fixed.append((p, k))
        order = {id(p): k for p, k in fixed}
        paths = [Path(p.gain, p.delay, order[id(p)], p.sub_paths) for p in paths]

    geometry = ArrayGeometry(spec.num_antennas, spec.spacing)
    return PathChannel(paths, geometry, ts)


def pulse_shape(t, sample_interval: float):
    """Raised-cosine windowed sinc, zero outside ``|t| < 16 T_s``."""
    x = np.asarray(t, dtype=float) / sample_interval
    window = np.where(
        np.abs(x) < PULSE_HALF_WIDTH,
        0.5 * (1.0 + np.cos(np.pi * x / PULSE_HALF_WIDTH)),
        0.0,
    )
    out = np.sinc(x) * window
    return out if out.ndim else float(out)


def default_tau_ub(tau_max: float, sample_interval: float) -> float:
    return tau_max + PULSE_HALF_WIDTH * sample_interval


def to_tap_channel(
    channel: PathChannel, sample_interval: float | None = None, tau_ub: float | None = None
) -> TapChannel:
    """Sample the path channel: ``taps[q] = sum_l h_l^H p(q T_s - tau_l)``."""
    ts = channel.sample_interval if sample_interval is None else sample_interval
    tau = channel.delays
    if tau_ub is None:
        tau_ub = default_tau_ub(float(tau.max()), ts)
    if tau_ub < tau.max():
        raise ValueError(f"tau_ub={tau_ub} is below the largest path delay {tau.max()}")
    num_taps = int(np.ceil(tau_ub / ts - 1e-9)) + 1
    q = np.arange(num_taps)
    weights = pulse_shape(q[:, None] * ts - tau[None, :], ts)  # (Q+1, L)
    taps = weights @ channel.vectors.conj()
    return TapChannel(taps, ts, float(tau_ub))


def cluster_taps(tap_channel: TapChannel | np.ndarray, threshold: float = 0.01) -> ClusterSet:
    """Group taps with power ``>= threshold * max power`` into runs.

    Each maximal run of consecutive significant taps becomes one cluster
    whose anchor is its strongest tap (lowest index on ties).
    """
    taps = tap_channel.taps if isinstance(tap_channel, TapChannel) else np.asarray(tap_channel)
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    power = np.sum(np.abs(taps) ** 2, axis=1)
    peak = power.max()
    if peak <= 0:
        raise ValueError("all taps are zero; nothing to cluster")
    keep = power >= threshold * peak

    clusters = []
    q = 0
    while q < len(power):
        if not keep[q]:
            q += 1
            continue
        start = q
        while q < len(power) and keep[q]:
            q += 1
        idx = tuple(range(start, q))
        anchor = start + int(np.argmax(power[start:q]))
        clusters.append(Cluster(idx, anchor))
    return ClusterSet(clusters, keep)

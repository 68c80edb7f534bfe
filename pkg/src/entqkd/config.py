"""Flat ``key = value`` configuration covering every tunable parameter."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .auth import DEFAULT_MAX_MESSAGE_BITS, DEFAULT_POOL_BITS, TAG_BITS
from .cascade import CascadeConfig
from .photon_sim import ChannelParams, SourceParams
from .privacy_amp import PaParams
from .protocol.codec import HelloParams
from .protocol.frames import VERSION


@dataclass(frozen=True)
class Config:
    # source
    pair_rate_hz: float = 8200.0
    visibility: float = 0.96
    qber_detector: float = 0.025
    qber_state: float = 0.012
    qber_channel_true: float = 0.027
    # channel
    fiber_length_km: float = 1.45
    attenuation_db_per_km: float = 3.2
    connector_loss_db: float = 1.36
    bob_detector_efficiency: float = 0.22
    dark_count_rate_hz: float = 100.0
    # acquisition
    window_ticks: int = 8
    sync_delay_ticks: int = -1  # -1: derive from fiber length
    # key processing
    block_target: int = 2500
    fraction: float = 0.25
    q_device: float = 0.037
    q_max: float = 0.11
    cascade_passes: int = 4
    k1_factor: float = 0.73
    safety_bits: int = 30
    # authentication
    auth_pool_path: str = ""
    auth_pool_seed: int = 20040421
    auth_pool_bits: int = DEFAULT_POOL_BITS
    auth_low_watermark: int = 131072
    auth_replenish: bool = True
    tag_bits: int = TAG_BITS
    auth_width: int = DEFAULT_MAX_MESSAGE_BITS
    # run
    protocol_version: int = VERSION
    seed: int = 1
    duration_s: float = 60.0
    announce_chunk: int = 1024
    pa_seed_source: str = "drbg"  # drbg (reproducible) | system (OS CSPRNG)
    timeout_s: float = 60.0

    def source(self) -> SourceParams:
        return SourceParams(self.pair_rate_hz, self.visibility, self.qber_detector,
                            self.qber_state, self.qber_channel_true, self.seed)

    def channel(self) -> ChannelParams:
        return ChannelParams(self.fiber_length_km, self.attenuation_db_per_km, self.connector_loss_db,
                             self.bob_detector_efficiency, self.dark_count_rate_hz)

    def cascade(self) -> CascadeConfig:
        return CascadeConfig(self.cascade_passes, self.k1_factor)

    def pa(self) -> PaParams:
        return PaParams(self.q_device, self.safety_bits)

    @property
    def delay_ticks(self) -> int:
        return self.channel().delay_ticks if self.sync_delay_ticks < 0 else self.sync_delay_ticks

    def hello(self) -> HelloParams:
        return HelloParams(self.protocol_version, self.block_target, self.fraction, self.cascade_passes,
                           self.k1_factor, self.q_device, self.safety_bits, self.q_max,
                           self.window_ticks, self.tag_bits, self.auth_width)

    def with_(self, **kw) -> "Config":
        return replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_render(getattr(self, f.name))}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(Config)}


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _convert(name: str, raw: str):
    kind = _TYPES[name]
    if kind == "bool":
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(text: str, base: Config | None = None) -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        if key not in _TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _convert(key, raw.strip())
    return replace(base or Config(), **values)


def load_config(path) -> Config:
    if path is None:
        return Config()
    return parse_config(Path(path).read_text())

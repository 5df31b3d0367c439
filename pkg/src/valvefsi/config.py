"""Simulation configuration: dataclasses, JSON round-trip, digest, defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError

SCENARIOS = ("annulus", "channel")


@dataclass
class GeometryConfig:
    scenario: str = "annulus"
    # annulus parameters
    fluid_radius: float = 0.025
    wall_thickness: float = 0.005
    target_h: float = 0.0012
    # channel parameters
    length: float = 0.1
    height: float = 0.02


@dataclass
class FluidConfig:
    density: float = 1.06e3
    viscosity: float = 3.5e-3
    stabilization: float = 0.1


@dataclass
class SolidConfig:
    density: float = 1.0e3
    shear_modulus: float = 5.0e3
    bulk_modulus: float = 5.0e4
    active_peak: float = 5.0e3
    active_peak_time: float = 0.25


@dataclass
class ValveConfig:
    name: str = "valve0"
    closed_endpoints: list = field(default_factory=list)  # [[x, y], [x, y]]
    open_endpoints: list | None = None
    half_thickness: float = 1.5e-3
    resistance: float = 1.0e4
    open_ramp: float = 0.010
    close_ramp: float = 0.035
    controller_enabled: bool = False
    opens_on_negative_jump: bool = True
    downstream_side: int = -1
    initial_blend: float = 1.0


@dataclass
class SimConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    solid: SolidConfig = field(default_factory=SolidConfig)
    valves: list = field(default_factory=list)
    dt: float = 5.0e-4
    final_time: float = 0.25
    attachment_force: bool = True
    inlet_pressure: float = 0.0
    outlet_pressure: float = 0.0
    output_dir: str = "output"
    snapshot_every: int = 0
    diagnostic_cadence: int = 1
    convergence_dts: list = field(default_factory=lambda: [1.0e-3, 5.0e-4, 2.5e-4])
    newton_abs_tol: float = 1.0e-8
    newton_rel_tol: float = 1.0e-6
    newton_max_iter: int = 20

    # ----- validation ------------------------------------------------------

    def validate(self) -> "SimConfig":
        g = self.geometry
        if g.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario '{g.scenario}'")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.final_time < 0:
            raise ConfigError("final_time must be nonnegative")
        if g.scenario == "annulus":
            if min(g.fluid_radius, g.wall_thickness, g.target_h) <= 0:
                raise ConfigError("annulus dimensions must be positive")
        else:
            if min(g.length, g.height, g.wall_thickness, g.target_h) <= 0:
                raise ConfigError("channel dimensions must be positive")
        if self.snapshot_every < 0 or self.diagnostic_cadence < 1:
            raise ConfigError("invalid output cadence")
        for v in self.valves:
            if np.asarray(v.closed_endpoints, dtype=float).shape != (2, 2):
                raise ConfigError(f"valve '{v.name}' needs two 2D endpoints")
            if v.half_thickness <= 0 or v.resistance < 0:
                raise ConfigError(f"valve '{v.name}' has invalid parameters")
            if not 0.0 <= v.initial_blend <= 1.0:
                raise ConfigError(f"valve '{v.name}' blend must lie in [0, 1]")
        return self

    # ----- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        kwargs = {}
        kwargs["geometry"] = GeometryConfig(**data.pop("geometry", {}))
        kwargs["fluid"] = FluidConfig(**data.pop("fluid", {}))
        kwargs["solid"] = SolidConfig(**data.pop("solid", {}))
        kwargs["valves"] = [ValveConfig(**v) for v in data.pop("valves", [])]
        kwargs.update(data)
        try:
            return cls(**kwargs).validate()
        except TypeError as exc:
            raise ConfigError(f"unrecognized configuration key: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "SimConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.loads(fh.read())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def copy(self) -> "SimConfig":
        return SimConfig.from_dict(json.loads(self.dumps()))


# ---------------------------------------------------------------------------
# Canonical scenario configurations
# ---------------------------------------------------------------------------


def benchmark_config(**overrides) -> SimConfig:
    """Contracting-chamber benchmark: disc + annular wall + closed valve.

    The valve is a horizontal segment through the center, extended past the
    interface by twice its half-thickness so it stays in contact with the
    deforming wall.  The lower (negative) side is the pressurizing chamber and
    is treated as downstream, so the recorded jump is lower minus upper.
    """
    geometry = GeometryConfig(scenario="annulus")
    eps = 1.5e-3
    reach = geometry.fluid_radius + 2.0 * eps
    valve = ValveConfig(
        name="septum",
        closed_endpoints=[[-reach, 0.0], [reach, 0.0]],
        half_thickness=eps,
        resistance=1.0e4,
        controller_enabled=False,
        downstream_side=-1,
    )
    config = SimConfig(geometry=geometry, valves=[valve])
    for key, value in overrides.items():
        if not hasattr(config, key):
            raise ConfigError(f"unknown configuration field '{key}'")
        setattr(config, key, value)
    return config.validate()


def channel_config(pressure_jump: float = 500.0, **overrides) -> SimConfig:
    """Closed-channel scenario: imposed end pressures across a sealed valve."""
    geometry = GeometryConfig(
        scenario="channel",
        length=0.1,
        height=0.02,
        wall_thickness=0.004,
        target_h=0.002,
    )
    eps = 1.5e-3
    x_mid = geometry.length / 2
    reach = geometry.height / 2 + 2.0 * eps
    valve = ValveConfig(
        name="gate",
        closed_endpoints=[[x_mid, -reach], [x_mid, reach]],
        half_thickness=eps,
        resistance=1.0e4,
        controller_enabled=False,
        downstream_side=1,
    )
    config = SimConfig(
        geometry=geometry,
        valves=[valve],
        solid=SolidConfig(active_peak=0.0),
        dt=1.0e-3,
        final_time=0.05,
        inlet_pressure=pressure_jump,
        outlet_pressure=0.0,
    )
    for key, value in overrides.items():
        if not hasattr(config, key):
            raise ConfigError(f"unknown configuration field '{key}'")
        setattr(config, key, value)
    return config.validate()

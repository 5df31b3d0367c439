"""Scalar observers of the coupled state.

All quantities integrate over deformed configurations with exact P1
geometry: a deformed cell is a straight simplex, so centroids and areas are
closed-form.  Diagnostics never feed back into the solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh, signed_volumes
from .valves import ValveState, ValveSurface, signed_offset


def center_of_mass(
    fluid_coords: np.ndarray,
    fluid_cells: np.ndarray,
    solid_coords: np.ndarray,
    solid_cells: np.ndarray,
    rho_f: float,
    rho_s: float,
) -> np.ndarray:
    """Mass-weighted centroid of the deformed fluid-solid system.

    Valve surfaces are massless and do not contribute.
    """
    total_mass = 0.0
    moment = np.zeros(fluid_coords.shape[1])
    for coords, cells, rho in (
        (fluid_coords, fluid_cells, rho_f),
        (solid_coords, solid_cells, rho_s),
    ):
        vols = signed_volumes(coords, cells)
        centroids = coords[cells].mean(axis=1)
        moment += rho * (vols[:, None] * centroids).sum(axis=0)
        total_mass += rho * vols.sum()
    return moment / total_mass


def chamber_pressure_jump(
    p_values: np.ndarray,
    fluid_coords: np.ndarray,
    fluid_cells: np.ndarray,
    valve: ValveSurface,
    state: ValveState,
) -> float:
    """Downstream minus upstream volume-averaged pressure.

    Cells whose deformed centroid lies within the bump support of the valve
    are excluded; the remaining cells are split by the sign of their normal
    offset from the valve line, and the valve's ``downstream_side`` selects
    the ordering of the difference.
    """
    geo = valve.endpoints(state.blend)
    centroids = fluid_coords[fluid_cells].mean(axis=1)
    offsets = signed_offset(centroids, geo)
    vols = np.abs(signed_volumes(fluid_coords, fluid_cells))
    p_cells = p_values[fluid_cells].mean(axis=1)
    eps = valve.half_thickness

    means = {}
    for side in (-1, 1):
        mask = side * offsets > eps
        if not np.any(mask):
            raise ValueError(
                f"valve '{valve.name}' has no fluid cells beyond its support on side {side}"
            )
        means[side] = float((vols[mask] * p_cells[mask]).sum() / vols[mask].sum())
    down = valve.downstream_side
    return means[down] - means[-down]


def chamber_area(
    ref_coords: np.ndarray,
    deformed_coords: np.ndarray,
    cells: np.ndarray,
    valve: ValveSurface,
    side: int = -1,
) -> float:
    """Deformed area of the fluid cells on one side of the valve line.

    The cell set is fixed by the reference centroid positions, so changes of
    this area over time measure net transport across the valve.
    """
    geo = valve.endpoints(1.0)
    ref_centroids = ref_coords[cells].mean(axis=1)
    mask = side * signed_offset(ref_centroids, geo) > 0.0
    return float(np.abs(signed_volumes(deformed_coords, cells[mask])).sum())


def load_torque(
    load: np.ndarray, positions: np.ndarray, pivot: np.ndarray
) -> float:
    """Plane torque of a nodal load about a pivot: sum of r x f."""
    f = load.reshape(-1, 2)
    r = positions - pivot[None, :]
    return float(np.sum(r[:, 0] * f[:, 1] - r[:, 1] * f[:, 0]))


def divergence_integral(
    u_values: np.ndarray, coords: np.ndarray, cells: np.ndarray
) -> float:
    """Net integral of div(u) over the deformed fluid domain."""
    from .fem import cell_geometry

    det, grads = cell_geometry(coords, cells)
    div = np.einsum("cai,cai->c", u_values[cells], grads)
    return float((div * np.abs(det) / 2).sum())


@dataclass
class DiagnosticsRow:
    """Per-step observables written to ``diagnostics.csv``."""

    t: float
    com: np.ndarray
    com_velocity_y: float
    u_max: float
    div_u: float
    valve_names: list = field(default_factory=list)
    pressure_jumps: list = field(default_factory=list)
    forces: list = field(default_factory=list)  # (2,) per valve
    volumes: list = field(default_factory=list)
    density_norms: list = field(default_factory=list)
    torques: list = field(default_factory=list)
    blends: list = field(default_factory=list)
    chamber_areas: list = field(default_factory=list)

    @staticmethod
    def columns(valve_names: list) -> list:
        cols = ["t", "com_x", "com_y", "com_velocity_y", "u_max", "div_u"]
        for name in valve_names:
            cols += [
                f"dp_{name}",
                f"force_x_{name}",
                f"force_y_{name}",
                f"contact_volume_{name}",
                f"force_density_{name}",
                f"torque_{name}",
                f"lambda_{name}",
                f"chamber_area_{name}",
            ]
        return cols

    def as_list(self) -> list:
        row = [
            self.t,
            float(self.com[0]),
            float(self.com[1]),
            self.com_velocity_y,
            self.u_max,
            self.div_u,
        ]
        for k in range(len(self.valve_names)):
            row += [
                self.pressure_jumps[k],
                float(self.forces[k][0]),
                float(self.forces[k][1]),
                self.volumes[k],
                self.density_norms[k],
                self.torques[k],
                self.blends[k],
                self.chamber_areas[k],
            ]
        return row

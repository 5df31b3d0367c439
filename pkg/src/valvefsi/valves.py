"""Resistive immersed valve kernels and the opening/closing controller.

A valve is a segment immersed in the fluid whose neighborhood, weighted by a
compactly supported cosine bump of half-width ``eps``, penalizes the mismatch
between fluid and domain velocity.  The force the fluid exerts on the valve
is redistributed onto the solid with the same bump profile, so that its
resultant matches the fluid-side force exactly and the coupled system keeps a
zero net internal force.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AssumptionViolation
from .fem import basis_values, cell_geometry, deformation_gradients, quadrature_rule
from .mesh import Mesh

PHASE_CLOSED = "closed"
PHASE_OPENING = "opening"
PHASE_OPEN = "open"
PHASE_CLOSING = "closing"

#: contact volumes below this abort the step (valve detached from the wall)
VOLUME_FLOOR = 1e-12

#: blend values closer than this to 0/1 snap to the end state
_BLEND_SNAP = 1e-12

#: quadrature degree used on cells intersecting the bump support
SUPPORT_QUAD_DEGREE = 4


@dataclass(frozen=True)
class ValveState:
    """Controller phase and configuration blend (1 = closed, 0 = open)."""

    phase: str = PHASE_CLOSED
    blend: float = 1.0


@dataclass
class ValveSurface:
    """Immersed resistive segment with its opening/closing parameters.

    ``closed_endpoints`` and ``open_endpoints`` are (2, 2) arrays holding the
    two reference configurations; the current geometry interpolates linearly
    between them with the controller blend.  ``offset`` is a prescribed static
    configuration displacement (zero in the benchmarks).
    """

    name: str
    closed_endpoints: np.ndarray
    half_thickness: float
    resistance: float
    open_endpoints: np.ndarray | None = None
    open_ramp: float = 0.010
    close_ramp: float = 0.035
    opens_on_negative_jump: bool = True
    controller_enabled: bool = True
    downstream_side: int = 1
    offset: np.ndarray | None = None
    initial_state: ValveState = ValveState()

    def __post_init__(self):
        self.closed_endpoints = np.asarray(self.closed_endpoints, dtype=float)
        if self.closed_endpoints.shape != (2, 2):
            raise ValueError("valve endpoints must be a (2, 2) array")
        if self.open_endpoints is None:
            self.open_endpoints = self.closed_endpoints.copy()
        else:
            self.open_endpoints = np.asarray(self.open_endpoints, dtype=float)
            if self.open_endpoints.shape != self.closed_endpoints.shape:
                raise ValueError("open and closed configurations must match in shape")
        if self.half_thickness <= 0:
            raise ValueError(f"half_thickness must be positive, got {self.half_thickness}")
        if self.resistance < 0:
            raise ValueError("resistance must be nonnegative")
        if self.open_ramp <= 0 or self.close_ramp <= 0:
            raise ValueError("ramp durations must be positive")
        if self.downstream_side not in (-1, 1):
            raise ValueError("downstream_side must be +1 or -1")
        if self.offset is None:
            self.offset = np.zeros(2)
        else:
            self.offset = np.asarray(self.offset, dtype=float)

    def endpoints(self, blend: float) -> np.ndarray:
        """Current segment endpoints for the given configuration blend."""
        lam = float(blend)
        return lam * self.closed_endpoints + (1.0 - lam) * self.open_endpoints + self.offset


@dataclass
class ValveForces:
    """Force resultant on a valve and its weighted contact volume."""

    force: np.ndarray
    volume: float

    @property
    def density(self) -> np.ndarray:
        return self.force / self.volume

    @property
    def density_norm(self) -> float:
        return float(np.linalg.norm(self.force)) / self.volume


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def smoothed_delta(y, eps: float):
    """Cosine bump of unit mass supported on [-eps, eps]."""
    if eps <= 0:
        raise ValueError(f"half-thickness must be positive, got {eps}")
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) <= eps
    out[inside] = (1.0 + np.cos(np.pi * y[inside] / eps)) / (2.0 * eps)
    return out if out.ndim else float(out)


def surface_distance(points, endpoints: np.ndarray) -> np.ndarray:
    """Unsigned distance from points to a segment."""
    a, b = np.asarray(endpoints, dtype=float)
    t = b - a
    length2 = float(t @ t)
    if length2 == 0.0:
        raise ValueError("degenerate valve segment with coincident endpoints")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = np.clip((pts - a) @ t / length2, 0.0, 1.0)
    closest = a + s[:, None] * t
    dist = np.linalg.norm(pts - closest, axis=1)
    return dist if np.ndim(points) > 1 else float(dist[0])


def signed_offset(points, endpoints: np.ndarray) -> np.ndarray:
    """Signed normal coordinate relative to the (unbounded) valve line.

    The positive side is to the left of the oriented segment; the valve's
    ``downstream_side`` selects which sign counts as downstream.
    """
    a, b = np.asarray(endpoints, dtype=float)
    t = b - a
    length = float(np.hypot(*t))
    if length == 0.0:
        raise ValueError("degenerate valve segment with coincident endpoints")
    normal = np.array([-t[1], t[0]]) / length
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    s = (pts - a) @ normal
    return s if np.ndim(points) > 1 else float(s[0])


def resistive_density(
    valve: ValveSurface, state: ValveState, u, u_ale, points, endpoints=None
):
    """RIIS force density (R lam / eps) * delta(phi) * (u - u_ale) at points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    geo = valve.endpoints(state.blend) if endpoints is None else endpoints
    delta = smoothed_delta(surface_distance(pts, geo), valve.half_thickness)
    coef = valve.resistance * state.blend / valve.half_thickness
    mismatch = np.atleast_2d(np.asarray(u, dtype=float) - np.asarray(u_ale, dtype=float))
    out = coef * delta[:, None] * mismatch
    return out if np.ndim(points) > 1 else out[0]


def _support_cells(coords, cells, endpoints, eps):
    """Cells that may intersect the bump support (vertex-distance screen)."""
    p = coords[cells]
    dist = surface_distance(p.reshape(-1, 2), endpoints).reshape(p.shape[:2])
    edge = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2).max(axis=1)
    return np.flatnonzero(dist.min(axis=1) <= eps + edge)


def _support_quadrature(coords, cells, endpoints, eps):
    """Quadrature data on flagged cells: physical points, delta, scaled weights."""
    flagged = _support_cells(coords, cells, endpoints, eps)
    if flagged.size == 0:
        return flagged, None, None, None
    rule = quadrature_rule(2, SUPPORT_QUAD_DEGREE)
    N = basis_values(2, rule.points)  # (nq, 3)
    det, _ = cell_geometry(coords, cells[flagged])
    pts = np.einsum("qa,cax->cqx", N, coords[cells[flagged]])
    delta = smoothed_delta(
        surface_distance(pts.reshape(-1, 2), endpoints), eps
    ).reshape(pts.shape[:2])
    wdet = rule.weights[None, :] * np.abs(det)[:, None]  # (nc, nq)
    return flagged, pts, delta, (wdet, N)


def valve_force(
    valve: ValveSurface,
    state: ValveState,
    fluid_coords: np.ndarray,
    fluid_cells: np.ndarray,
    u_values: np.ndarray,
    u_ale_values: np.ndarray,
) -> np.ndarray:
    """Force the fluid exerts on the valve: integral of the resistive term.

    Evaluated on the deformed fluid configuration given by ``fluid_coords``.
    """
    geo = valve.endpoints(state.blend)
    flagged, _, delta, quad = _support_quadrature(
        fluid_coords, fluid_cells, geo, valve.half_thickness
    )
    if flagged.size == 0:
        return np.zeros(2)
    wdet, N = quad
    mismatch = u_values[fluid_cells[flagged]] - u_ale_values[fluid_cells[flagged]]
    mis_q = np.einsum("qa,cai->cqi", N, mismatch)
    coef = valve.resistance * state.blend / valve.half_thickness
    return coef * np.einsum("cq,cq,cqi->i", wdet, delta, mis_q)


def valve_solid_integrals(
    valve: ValveSurface,
    state: ValveState,
    solid_mesh: Mesh,
    d_values: np.ndarray,
):
    """Contact volume and bump-weighted P1 loads over the deformed solid.

    Returns ``(volume, flagged_cells, weighted_basis)`` where
    ``weighted_basis[c, a]`` integrates ``Jhat * delta * phi_a`` over flagged
    cell ``c``.  The volume is the sum of all weighted-basis entries, so any
    load built from these weights has a resultant matching the volume-scaled
    density identically.
    """
    geo = valve.endpoints(state.blend)
    deformed = solid_mesh.nodes + d_values
    _, Jhat = deformation_gradients(solid_mesh.nodes, solid_mesh.cells, d_values)
    flagged, _, delta, quad = _support_quadrature(
        deformed, solid_mesh.cells, geo, valve.half_thickness
    )
    if flagged.size == 0:
        return 0.0, flagged, None
    # reference measure times Jhat, with delta evaluated at deformed points
    det_ref, _ = cell_geometry(solid_mesh.nodes, solid_mesh.cells[flagged])
    rule = quadrature_rule(2, SUPPORT_QUAD_DEGREE)
    N = basis_values(2, rule.points)
    wdet_ref = rule.weights[None, :] * np.abs(det_ref)[:, None]
    weighted = np.einsum(
        "cq,c,cq,qa->ca", wdet_ref, Jhat[flagged], delta, N
    )
    return float(weighted.sum()), flagged, weighted


def valve_volume(
    valve: ValveSurface,
    state: ValveState,
    solid_mesh: Mesh,
    d_values: np.ndarray,
    volume_floor: float = VOLUME_FLOOR,
) -> float:
    """Bump-weighted contact volume of the valve with the deformed solid."""
    volume, _, _ = valve_solid_integrals(valve, state, solid_mesh, d_values)
    if volume < volume_floor:
        raise AssumptionViolation(valve.name, volume, volume_floor)
    return volume


def attachment_density(
    forces: ValveForces,
    valve: ValveSurface,
    state: ValveState,
    points_ref,
    d_at_points,
    volume_floor: float = VOLUME_FLOOR,
):
    """Distributed attachment force density at reference solid points."""
    if forces.volume <= volume_floor:
        raise AssumptionViolation(valve.name, forces.volume, volume_floor)
    pts = np.atleast_2d(np.asarray(points_ref, dtype=float))
    deformed = pts + np.atleast_2d(np.asarray(d_at_points, dtype=float))
    delta = smoothed_delta(
        surface_distance(deformed, valve.endpoints(state.blend)), valve.half_thickness
    )
    out = forces.density[None, :] * delta[:, None]
    return out if np.ndim(points_ref) > 1 else out[0]


# ---------------------------------------------------------------------------
# Opening/closing controller
# ---------------------------------------------------------------------------


def controller_step(
    valve: ValveSurface, state: ValveState, pressure_jump: float, dt: float
) -> ValveState:
    """Advance the valve state machine by one time step.

    The pressure jump is downstream minus upstream.  A favorable jump starts
    (or continues) opening, an adverse jump starts closing; a sign reversal
    mid-transition reverses direction from the current blend, so the blend is
    continuous in time.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not valve.controller_enabled:
        return state

    sign = -1.0 if valve.opens_on_negative_jump else 1.0
    wants_open = sign * pressure_jump > 0.0
    wants_close = sign * pressure_jump < 0.0

    phase, lam = state.phase, state.blend
    if wants_open and phase in (PHASE_CLOSED, PHASE_CLOSING):
        phase = PHASE_OPENING
    elif wants_close and phase in (PHASE_OPEN, PHASE_OPENING):
        phase = PHASE_CLOSING

    if phase == PHASE_OPENING:
        lam = max(0.0, lam - dt / valve.open_ramp)
        if lam <= _BLEND_SNAP:
            lam, phase = 0.0, PHASE_OPEN
    elif phase == PHASE_CLOSING:
        lam = min(1.0, lam + dt / valve.close_ramp)
        if lam >= 1.0 - _BLEND_SNAP:
            lam, phase = 1.0, PHASE_CLOSED

    return replace(state, phase=phase, blend=lam)

"""ALE Navier-Stokes residual blocks, mesh motion and domain velocity.

The fluid unknowns at the new time level enter linearly once the advection
field and the domain geometry are frozen, so the fluid contribution to each
step is assembled as one sparse matrix plus a constant vector: the momentum
and continuity residuals are ``A @ U + r0``.

Pressure stabilization is a cell-wise pressure Laplacian with coefficient

    tau_K = beta * h_K**2 / (mu + h_K**2 * sigma_K),

where ``sigma_K`` is the cell mean of the resistive coefficient
``R * lam / eps * delta``.  Away from valves this is the classical
equal-order pressure stabilization; inside the bump support the resistive
weighting shuts the pressure diffusion off so the stabilization cannot leak
mass through a closed valve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvertedElementError, LinearSolveError
from .fem import (
    DofMap,
    MatrixBlock,
    NodalField,
    VectorBlock,
    basis_values,
    cell_geometry,
    expand_vector_block,
    quadrature_rule,
)
from .mesh import Mesh
from .valves import ValveState, ValveSurface, smoothed_delta, surface_distance
from .valves import _support_quadrature


@dataclass
class FluidParams:
    """Density [kg/m^3], dynamic viscosity [Pa s] and stabilization factor."""

    density: float = 1.06e3
    viscosity: float = 3.5e-3
    stabilization: float = 0.1

    def __post_init__(self):
        if self.density <= 0 or self.viscosity <= 0 or self.stabilization <= 0:
            raise ValueError("fluid parameters must be positive")


# ---------------------------------------------------------------------------
# Mesh motion
# ---------------------------------------------------------------------------


class MeshMotionSolver:
    """Componentwise harmonic extension of interface data into the fluid mesh.

    The scalar P1 Laplacian on the reference mesh is factorized once; each
    call solves for the interior values given Dirichlet data on the interface
    (and zero on any remaining boundary).
    """

    def __init__(self, mesh: Mesh, interface_nodes: np.ndarray):
        self.mesh = mesh
        self.interface_nodes = np.asarray(interface_nodes, dtype=np.int64)
        boundary = mesh.boundary_nodes()
        self.fixed_nodes = np.unique(np.concatenate([boundary, self.interface_nodes]))
        free_mask = np.ones(mesh.n_nodes, dtype=bool)
        free_mask[self.fixed_nodes] = False
        self.free_nodes = np.flatnonzero(free_mask)

        det, grads = cell_geometry(mesh.nodes, mesh.cells)
        local = np.einsum("cai,cbi->cab", grads, grads) * (np.abs(det) / 2)[:, None, None]
        rows = np.repeat(mesh.cells, 3, axis=1).ravel()
        cols = np.tile(mesh.cells, (1, 3)).ravel()
        K = sp.coo_matrix(
            (local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
        ).tocsc()
        self._K_fixed = K[:, self.fixed_nodes].tocsr()[self.free_nodes]
        K_ff = K[:, self.free_nodes].tocsr()[self.free_nodes]
        try:
            self._lu = splu(K_ff.tocsc()) if self.free_nodes.size else None
        except RuntimeError as exc:
            raise LinearSolveError(f"mesh-motion factorization failed: {exc}") from exc

    def extend(self, interface_values: np.ndarray) -> NodalField:
        """Harmonic field equal to the data on the interface, zero elsewhere
        on the boundary."""
        values = np.asarray(interface_values, dtype=float)
        if values.shape != (len(self.interface_nodes), self.mesh.dim):
            raise ValueError("interface data shape mismatch")
        if not np.all(np.isfinite(values)):
            raise ValueError("interface data contains non-finite entries")
        full = np.zeros((self.mesh.n_nodes, self.mesh.dim))
        full[self.interface_nodes] = values
        if self.free_nodes.size:
            rhs = -self._K_fixed @ full[self.fixed_nodes]
            full[self.free_nodes] = self._lu.solve(rhs)
        return NodalField(self.mesh, full)


def solve_mesh_motion(
    fluid_mesh: Mesh, interface_nodes: np.ndarray, interface_values: np.ndarray
) -> NodalField:
    """One-shot harmonic extension (see :class:`MeshMotionSolver`)."""
    return MeshMotionSolver(fluid_mesh, interface_nodes).extend(interface_values)


def domain_velocity(d_ale_new: NodalField, d_ale_old: NodalField, dt: float) -> NodalField:
    """Nodal difference quotient of the fluid-domain displacement."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return NodalField(d_ale_new.mesh, (d_ale_new.values - d_ale_old.values) / dt)


# ---------------------------------------------------------------------------
# Navier-Stokes residual blocks
# ---------------------------------------------------------------------------


def _cell_diameters(coords: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = coords[cells]
    return np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2).max(axis=1)


def ns_residual(
    mesh: Mesh,
    coords: np.ndarray,
    dof_map: DofMap,
    params: FluidParams,
    dt: float,
    u_prev: np.ndarray,
    u_ale: np.ndarray,
    valves: list[tuple[ValveSurface, ValveState]] | None = None,
    boundary_pressures: dict[str, float] | None = None,
    body_force=None,
):
    """Matrix and constant-vector blocks of the fluid residual.

    The residual for the new-level unknowns is ``A @ U + r0`` with ``A``
    carrying time, frozen advection, viscous, pressure/divergence, resistive
    and stabilization couplings, and ``r0`` the old-level and boundary data.
    Integrals run over the deformed configuration ``coords``.
    """
    valves = valves or []
    cells = mesh.cells
    nc = cells.shape[0]
    det, grads = cell_geometry(coords, cells)
    if np.any(det <= 0.0):
        raise InvertedElementError(int(np.flatnonzero(det <= 0.0)[0]), "fluid mesh")
    adet = np.abs(det)

    rule = quadrature_rule(2, 2)
    N = basis_values(2, rule.points)  # (nq, 3)
    w = rule.weights
    M_ref = np.einsum("q,qa,qb->ab", w, N, N)  # reference mass matrix

    rho, mu, dt = params.density, params.viscosity, float(dt)
    cell_ids = np.arange(nc)
    u_dofs = dof_map.cell_dofs("u", cells)  # (nc, 6)
    p_dofs = dof_map.cell_dofs("p", cells)  # (nc, 3)

    matrix_blocks = []
    vector_blocks = []

    # time term: rho/dt (u_new - u_old) . v
    mass_scalar = (rho / dt) * adet[:, None, None] * M_ref[None]
    time_new = expand_vector_block(mass_scalar, 2)
    u_old_cells = u_prev[cells]  # (nc, 3, 2)
    time_old = -np.einsum("cab,cbi->cai", mass_scalar, u_old_cells).reshape(nc, 6)

    # frozen advection: rho ((u_old - u_ale) . grad) u_new . v
    w_nodal = (u_prev - u_ale)[cells]  # (nc, 3, 2)
    w_q = np.einsum("qa,cai->cqi", N, w_nodal)
    conv_scalar = rho * np.einsum(
        "q,qa,cqi,cbi,c->cab", w, N, w_q, grads, adet
    )
    conv = expand_vector_block(conv_scalar, 2)

    # viscous term: mu (grad u + grad u^T) : grad v
    lap = np.einsum("cak,cbk->cab", grads, grads)
    visc_iso = expand_vector_block(mu * lap * (adet / 2)[:, None, None], 2)
    visc_cross = mu * np.einsum("caj,cbi,c->caibj", grads, grads, adet / 2).reshape(
        nc, 6, 6
    )

    matrix_blocks.append(
        MatrixBlock(cell_ids, u_dofs, u_dofs, time_new + conv + visc_iso + visc_cross)
    )
    vector_blocks.append(VectorBlock(cell_ids, u_dofs, time_old))

    # pressure gradient (-p div v) and continuity (div u, q)
    grad_term = np.einsum("cai,c->cai", grads, adet / 6)  # int phi_b d_i phi_a / b
    up = -np.repeat(grad_term.reshape(nc, 6)[:, :, None], 3, axis=2)
    pu = np.transpose(np.repeat(grad_term.reshape(nc, 6)[:, :, None], 3, axis=2), (0, 2, 1))
    matrix_blocks.append(MatrixBlock(cell_ids, u_dofs, p_dofs, up))
    matrix_blocks.append(MatrixBlock(cell_ids, p_dofs, u_dofs, pu))

    # resistive valve terms (elevated quadrature on the bump support)
    h = _cell_diameters(coords, cells)
    sigma = np.zeros(nc)
    for valve, state in valves:
        coef = valve.resistance * state.blend / valve.half_thickness
        if coef == 0.0:
            continue
        geo = valve.endpoints(state.blend)
        flagged, pts, delta, quad = _support_quadrature(
            coords, cells, geo, valve.half_thickness
        )
        if flagged.size == 0:
            continue
        wdet, N4 = quad
        riis_scalar = coef * np.einsum("cq,cq,qa,qb->cab", wdet, delta, N4, N4)
        riis = expand_vector_block(riis_scalar, 2)
        matrix_blocks.append(
            MatrixBlock(cell_ids[flagged], u_dofs[flagged], u_dofs[flagged], riis)
        )
        uale_q = np.einsum("qa,cai->cqi", N4, u_ale[cells[flagged]])
        riis_rhs = -coef * np.einsum("cq,cq,qa,cqi->cai", wdet, delta, N4, uale_q)
        vector_blocks.append(
            VectorBlock(cell_ids[flagged], u_dofs[flagged], riis_rhs.reshape(-1, 6))
        )
        # cell-mean resistive coefficient feeds the stabilization weight
        sigma_cells = coef * np.einsum("cq,cq->c", wdet, delta) / (
            wdet.sum(axis=1)
        )
        np.add.at(sigma, flagged, sigma_cells)

    # pressure stabilization
    tau = params.stabilization * h**2 / (mu + h**2 * sigma)
    stab = np.einsum("cak,cbk->cab", grads, grads) * (tau * adet / 2)[:, None, None]
    matrix_blocks.append(MatrixBlock(cell_ids, p_dofs, p_dofs, stab))

    # prescribed boundary tractions sigma.n = -p_bc n on tagged facets
    if boundary_pressures:
        for tag, p_bc in boundary_pressures.items():
            facets = mesh.boundary_facets[mesh.facet_tags == tag]
            owners = mesh.facet_cells[mesh.facet_tags == tag]
            if facets.size == 0 or p_bc == 0.0:
                continue
            pts = coords[facets]  # (nf, 2, 2)
            tangent = pts[:, 1] - pts[:, 0]
            normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
            centroid = coords[mesh.cells[owners]].mean(axis=1)
            outward = np.einsum(
                "fi,fi->f", normal, pts.mean(axis=1) - centroid
            )
            normal[outward < 0] *= -1.0
            # int_e p_bc n . v: each facet node gets p_bc * n * |e| / 2
            load = 0.5 * p_bc * normal  # (nf, 2); normal is length-scaled
            rows = np.stack(
                [dof_map.index("u", facets[:, k], i) for k in range(2) for i in range(2)],
                axis=1,
            )
            vals = np.concatenate([load, load], axis=1)
            vector_blocks.append(VectorBlock(owners, rows, vals))

    # optional body force (used by manufactured-solution tests)
    if body_force is not None:
        rule4 = quadrature_rule(2, 4)
        N4 = basis_values(2, rule4.points)
        pts = np.einsum("qa,cax->cqx", N4, coords[cells])
        f = body_force(pts.reshape(-1, 2)).reshape(nc, len(rule4.weights), 2)
        fb = -np.einsum("q,c,cqi,qa->cai", rule4.weights, adet, f, N4).reshape(nc, 6)
        vector_blocks.append(VectorBlock(cell_ids, u_dofs, fb))

    return matrix_blocks, vector_blocks


def mean_pressure_weights(
    mesh: Mesh, coords: np.ndarray, dof_map: DofMap
) -> np.ndarray:
    """Weights w with w @ P = integral of the pressure field (gauge helper)."""
    det, _ = cell_geometry(coords, mesh.cells)
    w = np.zeros(dof_map.n_dofs)
    np.add.at(
        w, dof_map.cell_dofs("p", mesh.cells).ravel(),
        np.repeat(np.abs(det) / 6.0, 3),
    )
    return w

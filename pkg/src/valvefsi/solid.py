"""Hyperelastic elastodynamics with active fiber stress and the valve load.

The passive response is a compressible neo-Hooke law split into an isochoric
and a volumetric part,

    P_pas = mu J^(-2/d) (F - tr(F F^T)/d F^-T) + kappa (J - 1) J F^-T,

the first Piola stress of the stored energy
``mu/2 (J^(-2/d) I1 - d) + kappa/2 (J - 1)^2``.  The active stress is a
rank-one tensile contribution along the deformed fiber direction, ramped in
time and restricted to the lower half of the reference domain.  Both carry
analytic tangents so the coupled Newton solver sees a consistent Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvertedElementError
from .fem import (
    DofMap,
    MatrixBlock,
    VectorBlock,
    basis_values,
    cell_geometry,
    expand_vector_block,
    quadrature_rule,
)
from .mesh import Mesh
from .valves import ValveForces, ValveState, ValveSurface, valve_solid_integrals


@dataclass
class SolidParams:
    """Material, activation and fiber data for the wall."""

    density: float = 1.0e3
    shear_modulus: float = 5.0e3
    bulk_modulus: float = 5.0e4
    active_peak: float = 5.0e3
    active_peak_time: float = 0.25
    fibers: np.ndarray | None = None  # (n_cells, dim) unit vectors

    def __post_init__(self):
        if min(self.density, self.shear_modulus, self.bulk_modulus) <= 0:
            raise ValueError("density and moduli must be positive")
        if self.active_peak < 0 or self.active_peak_time <= 0:
            raise ValueError("invalid activation parameters")
        if self.fibers is not None:
            self.fibers = np.asarray(self.fibers, dtype=float)
            norms = np.linalg.norm(self.fibers, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-10):
                raise ValueError("fiber vectors must have unit norm")


def _inv_transpose_2x2(F):
    det = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    out = np.empty_like(F)
    out[..., 0, 0] = F[..., 1, 1]
    out[..., 0, 1] = -F[..., 1, 0]
    out[..., 1, 0] = -F[..., 0, 1]
    out[..., 1, 1] = F[..., 0, 0]
    return out / det[..., None, None], det


def strain_energy(F: np.ndarray, params: SolidParams) -> np.ndarray:
    """Stored energy density of the passive law (gradient-check oracle)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    det = np.linalg.det(F)
    I1 = np.einsum("...iI,...iI->...", F, F)
    iso = 0.5 * params.shear_modulus * (det ** (-2.0 / d) * I1 - d)
    vol = 0.5 * params.bulk_modulus * (det - 1.0) ** 2
    return iso + vol


def passive_piola(F: np.ndarray, params: SolidParams) -> np.ndarray:
    """First Piola stress of the compressible neo-Hooke law."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    FinvT, det = _inv_transpose_2x2(F)
    if np.any(det <= 0.0):
        bad = int(np.argmax(np.atleast_1d(det) <= 0.0))
        raise InvertedElementError(bad, f"det F = {np.atleast_1d(det)[bad]:.3e}")
    I1 = np.einsum("...iI,...iI->...", F, F)
    A = det ** (-2.0 / d)
    iso = params.shear_modulus * A[..., None, None] * (
        F - (I1 / d)[..., None, None] * FinvT
    )
    vol = params.bulk_modulus * ((det - 1.0) * det)[..., None, None] * FinvT
    return iso + vol


def passive_tangent(F: np.ndarray, params: SolidParams) -> np.ndarray:
    """dP/dF of the passive law: (..., d, d, d, d) with layout (iI, jJ)."""
    F = np.asarray(F, dtype=float)
    d = F.shape[-1]
    mu, kappa = params.shear_modulus, params.bulk_modulus
    FinvT, det = _inv_transpose_2x2(F)
    I1 = np.einsum("...iI,...iI->...", F, F)
    A = det ** (-2.0 / d)

    eye = np.eye(d)
    # dF^-T[iI, jJ] = -FinvT[i, J] FinvT[j, I]
    dFinvT = -np.einsum("...iJ,...jI->...iIjJ", FinvT, FinvT)
    id4 = np.einsum("ij,IJ->iIjJ", eye, eye)

    base = F - (I1 / d)[..., None, None] * FinvT
    tangent = mu * (
        -(2.0 / d) * A[..., None, None, None, None]
        * np.einsum("...iI,...jJ->...iIjJ", base, FinvT)
        + A[..., None, None, None, None]
        * (
            id4
            - (2.0 / d) * np.einsum("...iI,...jJ->...iIjJ", FinvT, F)
            - (I1 / d)[..., None, None, None, None] * dFinvT
        )
    )
    scale = ((2.0 * det - 1.0) * det)[..., None, None, None, None]
    tangent += kappa * (
        scale * np.einsum("...iI,...jJ->...iIjJ", FinvT, FinvT)
        + ((det - 1.0) * det)[..., None, None, None, None] * dFinvT
    )
    return tangent


def activation_amplitude(t: float, params: SolidParams) -> float:
    """Time ramp of the active stress magnitude."""
    return 0.5 * params.active_peak * (1.0 - np.cos(np.pi * t / params.active_peak_time))


def active_piola(F, fibers, t: float, params: SolidParams, positions) -> np.ndarray:
    """Active stress a(t) (F f x f)/|F f| in the lower half (y <= 0)."""
    F = np.asarray(F, dtype=float)
    f = np.asarray(fibers, dtype=float)
    pos = np.asarray(positions, dtype=float)
    a = activation_amplitude(t, params)
    v = np.einsum("...iI,...I->...i", F, f)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm < 1e-14):
        raise ValueError("deformed fiber direction is degenerate (F f = 0)")
    active = np.where(pos[..., 1] <= 0.0, a, 0.0)
    return (active / norm)[..., None, None] * np.einsum("...i,...I->...iI", v, f)


def active_tangent(F, fibers, t: float, params: SolidParams, positions) -> np.ndarray:
    """dP_act/dF: rank-one direction differentiated through F f/|F f|."""
    F = np.asarray(F, dtype=float)
    f = np.asarray(fibers, dtype=float)
    pos = np.asarray(positions, dtype=float)
    d = F.shape[-1]
    a = activation_amplitude(t, params)
    v = np.einsum("...iI,...I->...i", F, f)
    norm = np.linalg.norm(v, axis=-1)
    active = np.where(pos[..., 1] <= 0.0, a, 0.0)
    eye = np.eye(d)
    # d v_i / dF_jJ = delta_ij f_J;  d|v|/dF_jJ = v_j f_J / |v|
    term1 = np.einsum("ij,...J,...I->...iIjJ", eye, f, f) / norm[..., None, None, None, None]
    term2 = np.einsum("...i,...I,...j,...J->...iIjJ", v, f, v, f) / (
        norm**3
    )[..., None, None, None, None]
    return active[..., None, None, None, None] * (term1 - term2)


# ---------------------------------------------------------------------------
# Attachment load
# ---------------------------------------------------------------------------


def attachment_rhs(
    valve_data: list[tuple[ValveSurface, ValveState, ValveForces]],
    solid_mesh: Mesh,
    d_values: np.ndarray,
    dof_map: DofMap,
    enabled: bool = True,
) -> np.ndarray:
    """Nodal load vector of the distributed valve attachment forces.

    Uses the same bump-weighted quadrature as the contact volume, so the
    assembled resultant reproduces each valve force to round-off.  With
    ``enabled`` false (the ablation mode) the load is identically zero.
    """
    load = np.zeros(dof_map.n_dofs)
    if not enabled:
        return load
    for valve, state, forces in valve_data:
        volume, flagged, weighted = valve_solid_integrals(
            valve, state, solid_mesh, d_values
        )
        if flagged.size == 0:
            continue
        density = forces.force / forces.volume
        d_dofs = dof_map.cell_dofs("d", solid_mesh.cells[flagged])
        local = np.einsum("ca,i->cai", weighted, density).reshape(flagged.size, -1)
        np.add.at(load, d_dofs.ravel(), local.ravel())
    return load


# ---------------------------------------------------------------------------
# Residual and Jacobian blocks
# ---------------------------------------------------------------------------


def solid_blocks(
    mesh: Mesh,
    dof_map: DofMap,
    params: SolidParams,
    dt: float,
    d_new: np.ndarray,
    d_n: np.ndarray,
    d_nm1: np.ndarray,
    t_new: float,
    load: np.ndarray | None = None,
    with_matrix: bool = True,
    active: bool = True,
):
    """Residual vector blocks (and optionally tangent blocks) of the wall.

    The residual tests inertia (three-level second difference), the total
    first Piola stress at the new level and the explicit attachment load; the
    exterior boundary is traction free so no boundary terms appear.
    """
    cells = mesh.cells
    nc = cells.shape[0]
    det, grads = cell_geometry(mesh.nodes, cells)
    adet = np.abs(det)

    rule = quadrature_rule(2, 2)
    N = basis_values(2, rule.points)
    w = rule.weights
    M_ref = np.einsum("q,qa,qb->ab", w, N, N)

    d_dofs = dof_map.cell_dofs("d", cells)
    cell_ids = np.arange(nc)

    F = np.einsum("cai,caI->ciI", d_new[cells], grads)
    F += np.eye(2)
    detF = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    if np.any(detF <= 0.0):
        raise InvertedElementError(int(np.flatnonzero(detF <= 0.0)[0]), "solid state")

    P = passive_piola(F, params)
    fibers = params.fibers
    qpts = np.einsum("qa,cax->cqx", N, mesh.nodes[cells])  # reference positions
    if active and params.active_peak > 0.0:
        Fq = np.repeat(F[:, None], len(w), axis=1)
        fq = np.repeat(fibers[:, None], len(w), axis=1)
        P_act = active_piola(Fq, fq, t_new, params, qpts)
    else:
        P_act = np.zeros((nc, len(w), 2, 2))

    # inertia: rho/dt^2 (d_new - 2 d_n + d_nm1) . w
    accel = d_new[cells] - 2.0 * d_n[cells] + d_nm1[cells]
    mass_scalar = (params.density / dt**2) * adet[:, None, None] * M_ref[None]
    r_inertia = np.einsum("cab,cbi->cai", mass_scalar, accel)

    # stress: (P_pas + P_act) : grad w
    r_stress = np.einsum("ciI,caI,c->cai", P, grads, adet / 2)
    r_stress += np.einsum("q,cqiI,caI,c->cai", w, P_act, grads, adet)

    vector_blocks = [
        VectorBlock(cell_ids, d_dofs, (r_inertia + r_stress).reshape(nc, -1))
    ]
    if load is not None:
        d_slice = dof_map.block("d")
        rows = np.arange(d_slice.start, d_slice.stop)
        vector_blocks.append(VectorBlock(np.zeros(1, dtype=int), rows[None, :], -load[rows][None, :]))

    matrix_blocks = []
    if with_matrix:
        C = passive_tangent(F, params)
        K_stress = np.einsum("ciIjJ,caI,cbJ,c->caibj", C, grads, grads, adet / 2)
        if active and params.active_peak > 0.0:
            C_act = active_tangent(
                np.repeat(F[:, None], len(w), axis=1),
                np.repeat(fibers[:, None], len(w), axis=1),
                t_new,
                params,
                qpts,
            )
            K_stress += np.einsum(
                "q,cqiIjJ,caI,cbJ,c->caibj", w, C_act, grads, grads, adet
            )
        K = K_stress.reshape(nc, 6, 6) + expand_vector_block(mass_scalar, 2)
        matrix_blocks.append(MatrixBlock(cell_ids, d_dofs, d_dofs, K))

    return matrix_blocks, vector_blocks

"""Piecewise-linear finite element infrastructure.

Everything here is vectorized over cells: element kernels produce stacked
local matrices/vectors plus global index arrays, and :func:`assemble`
scatters them into one sparse system.  The scatter is a single COO-to-CSR
conversion, so repeated assembly of the same state is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .errors import AssemblyError, InvertedElementError
from .mesh import Mesh

# ---------------------------------------------------------------------------
# Nodal fields
# ---------------------------------------------------------------------------


@dataclass
class NodalField:
    """Per-node values (scalar or vector) attached to a mesh.

    ``values`` has shape (n_nodes, ncomp) with ncomp 1 for scalars and
    ``mesh.dim`` for vectors.
    """

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.mesh.n_nodes:
            raise ValueError(
                f"field has {self.values.shape[0]} rows for a mesh with "
                f"{self.mesh.n_nodes} nodes"
            )
        if self.values.shape[1] not in (1, self.mesh.dim):
            raise ValueError(
                f"field must have 1 or {self.mesh.dim} components, "
                f"got {self.values.shape[1]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def zeros(cls, mesh: Mesh, ncomp: int) -> "NodalField":
        return cls(mesh, np.zeros((mesh.n_nodes, ncomp)))

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "NodalField":
        return NodalField(self.mesh, self.values.copy())


# ---------------------------------------------------------------------------
# Quadrature on reference simplices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on the unit reference simplex."""

    dim: int
    degree: int
    points: np.ndarray
    weights: np.ndarray


def _tri_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree == 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return pts, np.full(3, 1 / 6)
    # 6-point rule, exact to degree 4 (serves degree-3 requests as well)
    a1, w1 = 0.445948490915965, 0.223381589678011
    a2, w2 = 0.091576213509771, 0.109951743655322
    bary = []
    ws = []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        bary += [(a, a, b), (b, a, a), (a, b, a)]
        ws += [w, w, w]
    pts = np.array([[l2, l3] for (_, l2, l3) in bary])
    return pts, 0.5 * np.array(ws)


def _gauss_jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point rule for ∫_0^1 (1-x)^alpha f(x) dx."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w * 0.5 ** (alpha + 1)


def _tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree == 1:
        return np.array([[0.25, 0.25, 0.25]]), np.array([1 / 6])
    if degree == 2:
        a = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        b = (5.0 - np.sqrt(5.0)) / 20.0
        pts = np.array(
            [[a, b, b], [b, a, b], [b, b, a], [b, b, b]]
        )
        return pts, np.full(4, 1 / 24)
    # conical product rule: exact for total degree 2n-1
    n = (degree + 2) // 2
    x1, w1 = _gauss_jacobi01(n, 2)
    x2, w2 = _gauss_jacobi01(n, 1)
    x3, w3 = _gauss_jacobi01(n, 0)
    pts, ws = [], []
    for a, wa in zip(x1, w1):
        for b, wb in zip(x2, w2):
            for c, wc in zip(x3, w3):
                x = a
                y = b * (1 - a)
                z = c * (1 - a) * (1 - b)
                pts.append((x, y, z))
                ws.append(wa * wb * wc)
    return np.array(pts), np.array(ws)


def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Simplex rule integrating polynomials up to ``degree`` exactly."""
    if degree < 1 or degree > 4:
        raise ValueError(f"unsupported quadrature degree {degree}; expected 1..4")
    if dim == 2:
        pts, ws = _tri_rule(degree)
    elif dim == 3:
        pts, ws = _tet_rule(degree)
    else:
        raise ValueError(f"unsupported dimension {dim}")
    return QuadratureRule(dim=dim, degree=degree, points=pts, weights=ws)


def basis_values(dim: int, points: np.ndarray) -> np.ndarray:
    """P1 basis functions evaluated at reference points: (n_q, dim + 1)."""
    lam0 = 1.0 - points.sum(axis=1)
    return np.column_stack([lam0, points])


REFERENCE_GRADIENTS = {
    2: np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]),
    3: np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
}


def cell_geometry(coords: np.ndarray, cells: np.ndarray):
    """Per-cell measures and physical P1 basis gradients.

    Returns ``(det, grads)`` with ``det`` (n_cells,) the Jacobian determinant
    of the reference-to-physical map (twice the area in 2D) and ``grads``
    (n_cells, dim + 1, dim) the constant physical gradients.
    """
    dim = coords.shape[1]
    p = coords[cells]
    J = np.stack([p[:, k + 1] - p[:, 0] for k in range(dim)], axis=2)
    if dim == 2:
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        inv = np.empty_like(J)
        inv[:, 0, 0] = J[:, 1, 1]
        inv[:, 0, 1] = -J[:, 0, 1]
        inv[:, 1, 0] = -J[:, 1, 0]
        inv[:, 1, 1] = J[:, 0, 0]
        inv /= det[:, None, None]
    else:
        det = np.linalg.det(J)
        inv = np.linalg.inv(J)
    grads = np.einsum("aR,cRi->cai", REFERENCE_GRADIENTS[dim], inv)
    return det, grads


def deformation_gradients(coords, cells, disp_values):
    """Deformation gradient F = I + grad(d) and det(F) per cell."""
    dim = coords.shape[1]
    _, grads = cell_geometry(coords, cells)
    F = np.einsum("cai,caI->ciI", disp_values[cells], grads)
    F += np.eye(dim)
    if dim == 2:
        J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    else:
        J = np.linalg.det(F)
    return F, J


def deformation_state(displacement: NodalField, cell: int, quad_point=None):
    """Deformation gradient and determinant of one cell at a quadrature point.

    P1 displacements have cell-wise constant gradients, so ``quad_point`` does
    not influence the result; it is accepted for interface uniformity.
    """
    mesh = displacement.mesh
    if displacement.ncomp != mesh.dim:
        raise ValueError("deformation state needs a vector displacement field")
    cells = mesh.cells[cell : cell + 1]
    F, J = deformation_gradients(mesh.nodes, cells, displacement.values)
    if J[0] <= 0.0:
        raise InvertedElementError(cell, f"det F = {J[0]:.3e}")
    return F[0], float(J[0])


# ---------------------------------------------------------------------------
# Degrees of freedom and assembly
# ---------------------------------------------------------------------------


class DofMap:
    """Maps (field, node, component) to a global index.

    Fields are laid out contiguously in declaration order, components
    interleaved per node.
    """

    def __init__(self, fields: list[tuple[str, int, int]]):
        self.fields = list(fields)
        self.offsets = {}
        total = 0
        for name, n_nodes, ncomp in self.fields:
            self.offsets[name] = (total, n_nodes, ncomp)
            total += n_nodes * ncomp
        self.n_dofs = total

    def index(self, field: str, nodes, comp) -> np.ndarray:
        offset, _, ncomp = self.offsets[field]
        return offset + np.asarray(nodes) * ncomp + comp

    def block(self, field: str) -> slice:
        offset, n_nodes, ncomp = self.offsets[field]
        return slice(offset, offset + n_nodes * ncomp)

    def cell_dofs(self, field: str, cells: np.ndarray) -> np.ndarray:
        """(n_cells, nv * ncomp) global indices, components interleaved."""
        offset, _, ncomp = self.offsets[field]
        base = offset + cells * ncomp
        return (base[:, :, None] + np.arange(ncomp)[None, None, :]).reshape(
            cells.shape[0], -1
        )


@dataclass
class MatrixBlock:
    """Stacked local matrices with their global scatter indices."""

    cells: np.ndarray
    rows: np.ndarray  # (n_cells, l_rows)
    cols: np.ndarray  # (n_cells, l_cols)
    values: np.ndarray  # (n_cells, l_rows, l_cols)


@dataclass
class VectorBlock:
    """Stacked local vectors with their global scatter indices."""

    cells: np.ndarray
    rows: np.ndarray  # (n_cells, l_rows)
    values: np.ndarray  # (n_cells, l_rows)


@dataclass
class SparseSystem:
    """Square sparse matrix with a right-hand side and its DOF layout."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: DofMap | None = None


def _check_finite(block):
    if np.all(np.isfinite(block.values)):
        return
    bad = np.argwhere(~np.isfinite(block.values))
    cell = int(block.cells[bad[0][0]])
    raise AssemblyError(cell)


def assemble(contributions, n_dofs: int, dof_map: DofMap | None = None) -> SparseSystem:
    """Scatter element blocks into one sparse system.

    ``contributions`` may mix :class:`MatrixBlock` and :class:`VectorBlock`
    entries (or zero-argument callables producing them).
    """
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_dofs)
    for contrib in contributions:
        block = contrib() if callable(contrib) else contrib
        if block is None:
            continue
        _check_finite(block)
        if isinstance(block, MatrixBlock):
            ne, lr, lc = block.values.shape
            rows.append(np.repeat(block.rows, lc, axis=1).ravel())
            cols.append(np.tile(block.cols, (1, lr)).ravel())
            vals.append(block.values.reshape(ne, -1).ravel())
        else:
            np.add.at(rhs, block.rows.ravel(), block.values.ravel())
    if rows:
        matrix = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_dofs, n_dofs),
        ).tocsr()
    else:
        matrix = sp.csr_matrix((n_dofs, n_dofs))
    return SparseSystem(matrix=matrix, rhs=rhs, dof_map=dof_map)


def assemble_vector(contributions, n_dofs: int) -> np.ndarray:
    """Scatter vector blocks only."""
    rhs = np.zeros(n_dofs)
    for contrib in contributions:
        block = contrib() if callable(contrib) else contrib
        if block is None:
            continue
        _check_finite(block)
        np.add.at(rhs, block.rows.ravel(), block.values.ravel())
    return rhs


def expand_vector_block(scalar_values: np.ndarray, ncomp: int) -> np.ndarray:
    """Expand (ne, nv) scalar local matrices to (ne, nv*ncomp, nv*ncomp) * I."""
    ne, nv = scalar_values.shape[:2]
    eye = np.eye(ncomp)
    return np.einsum("cab,ij->caibj", scalar_values, eye).reshape(
        ne, nv * ncomp, nv * ncomp
    )


# ---------------------------------------------------------------------------
# Constraint reduction (Dirichlet data and interface elimination)
# ---------------------------------------------------------------------------


@dataclass
class Reduction:
    """Affine map from reduced unknowns to the full DOF vector.

    ``full = P @ x + shift``.  Residuals and Jacobians reduce through the
    test-side map Q: ``r_red = Q.T @ r_full`` and ``J_red = Q.T @ J @ P``.
    P and Q share their sparsity; they differ only where a constrained trial
    DOF carries a coefficient (e.g. the 1/dt of a velocity-displacement
    coupling) while the matching test functions combine with weight one.
    """

    P: sp.csr_matrix
    Q: sp.csr_matrix
    shift: np.ndarray
    n_full: int
    n_reduced: int
    reduced_of_full: np.ndarray  # -1 for constrained full DOFs

    def full_vector(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x + self.shift

    def reduce_residual(self, r_full: np.ndarray) -> np.ndarray:
        return self.Q.T @ r_full

    def reduce_matrix(self, J_full: sp.spmatrix) -> sp.csr_matrix:
        return (self.Q.T @ J_full @ self.P).tocsr()

    def restrict(self, full_values: np.ndarray) -> np.ndarray:
        """Reduced vector whose retained entries copy the full vector."""
        x = np.zeros(self.n_reduced)
        retained = self.reduced_of_full >= 0
        x[self.reduced_of_full[retained]] = full_values[retained]
        return x


def build_reduction(
    n_full: int,
    fixed: dict[int, float] | None = None,
    coupled: list[tuple[int, int, float, float, float]] | None = None,
) -> Reduction:
    """Construct a :class:`Reduction`.

    Parameters
    ----------
    fixed : map from full DOF to its prescribed value (dropped from the system).
    coupled : tuples ``(slave, master, trial_coeff, test_coeff, const)``
        declaring ``full[slave] = trial_coeff * x[master_reduced] + const`` and
        adding the slave equation to the master's with weight ``test_coeff``.
    """
    fixed = fixed or {}
    coupled = coupled or []
    constrained = set(fixed) | {s for s, *_ in coupled}
    reduced_of_full = -np.ones(n_full, dtype=np.int64)
    retained = [d for d in range(n_full) if d not in constrained]
    reduced_of_full[retained] = np.arange(len(retained))
    n_red = len(retained)

    shift = np.zeros(n_full)
    p_rows = list(retained)
    p_cols = list(reduced_of_full[retained])
    p_vals = [1.0] * n_red
    q_vals = [1.0] * n_red
    for dof, value in fixed.items():
        shift[dof] = value
    for slave, master, trial_c, test_c, const in coupled:
        col = reduced_of_full[master]
        if col < 0:
            raise ValueError(f"master DOF {master} is itself constrained")
        p_rows.append(slave)
        p_cols.append(col)
        p_vals.append(trial_c)
        q_vals.append(test_c)
        shift[slave] = const

    P = sp.csr_matrix((p_vals, (p_rows, p_cols)), shape=(n_full, n_red))
    Q = sp.csr_matrix((q_vals, (p_rows, p_cols)), shape=(n_full, n_red))
    return Reduction(
        P=P, Q=Q, shift=shift, n_full=n_full, n_reduced=n_red,
        reduced_of_full=reduced_of_full,
    )

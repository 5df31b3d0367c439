"""Simplicial meshes, benchmark geometry generators and interface bookkeeping.

All meshes are stored in the reference configuration.  The two benchmark
generators produce conforming fluid/solid pairs whose shared nodes coincide
exactly, so the interface map can couple degrees of freedom without any
interpolation.

The disc/annulus generator builds a "spiderweb" triangulation: ring ``j``
carries ``6 j`` nodes at angles ``pi i / (3 j)``, and consecutive rings are
joined sector by sector with a fixed strip pattern.  The resulting node set
and connectivity are invariant under the reflections x -> -x and y -> -y,
which the benchmark diagnostics rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import MeshGenerationError, MeshValidationError

INTERFACE_TAG = "interface"
EXTERIOR_TAG = "exterior"
INLET_TAG = "inlet"
OUTLET_TAG = "outlet"

#: maximum reference-coordinate mismatch for paired interface nodes [m]
CONFORMITY_TOL = 1e-12


@dataclass
class Mesh:
    """Simplicial mesh with tagged boundary facets.

    Attributes
    ----------
    dim : spatial dimension (2 or 3).
    nodes : (n_nodes, dim) reference coordinates [m].
    cells : (n_cells, dim + 1) node indices, positively oriented.
    boundary_facets : (n_facets, dim) node indices of boundary facets.
    facet_tags : (n_facets,) tag string per boundary facet.
    facet_cells : (n_facets,) index of the cell owning each boundary facet.
    region : "fluid" or "solid".
    """

    dim: int
    nodes: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray
    facet_tags: np.ndarray
    facet_cells: np.ndarray
    region: str

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def cell_volumes(self, coordinates: np.ndarray | None = None) -> np.ndarray:
        """Signed cell measures (areas in 2D) in the given configuration."""
        coords = self.nodes if coordinates is None else coordinates
        return signed_volumes(coords, self.cells)

    def facets_with_tag(self, tag: str) -> np.ndarray:
        return self.boundary_facets[self.facet_tags == tag]

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        """Sorted unique node indices lying on facets with the given tag."""
        return np.unique(self.facets_with_tag(tag))

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_facets)


@dataclass
class InterfaceMap:
    """Aligned index arrays of coincident fluid/solid interface nodes."""

    fluid_nodes: np.ndarray
    solid_nodes: np.ndarray

    def __len__(self) -> int:
        return len(self.fluid_nodes)


@dataclass
class MeshPair:
    """A conforming fluid/solid mesh pair with its interface map."""

    fluid: Mesh
    solid: Mesh
    interface: InterfaceMap


@dataclass
class ValidationReport:
    """Outcome of the structural checks on a mesh pair."""

    passed: bool
    checks: list = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append((name, bool(ok), detail))
        if not ok:
            self.passed = False

    def failures(self) -> list:
        return [c for c in self.checks if not c[1]]


def signed_volumes(coords: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Signed simplex measures for the given vertex coordinates."""
    p = coords[cells]
    dim = coords.shape[1]
    if dim == 2:
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    e3 = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", np.cross(e1, e2), e3) / 6.0


def _orient_cells(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Flip cells with negative signed volume; error on degenerate ones."""
    vols = signed_volumes(nodes, cells)
    if np.any(vols == 0.0):
        bad = int(np.flatnonzero(vols == 0.0)[0])
        raise MeshGenerationError(f"degenerate cell {bad} with zero volume")
    cells = cells.copy()
    neg = vols < 0.0
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()
    return cells


def _boundary_facets(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Facets appearing in exactly one cell, with the owning cell index."""
    nv = cells.shape[1]
    local = [
        [i for i in range(nv) if i != k]
        for k in range(nv)
    ]
    facets = np.concatenate([cells[:, idx] for idx in local], axis=0)
    owners = np.tile(np.arange(cells.shape[0]), nv)
    key = np.sort(facets, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    on_boundary = counts[inv] == 1
    return facets[on_boundary], owners[on_boundary]


def _finish_mesh(dim, nodes, cells, region, tag_fn) -> Mesh:
    cells = _orient_cells(nodes, cells)
    facets, owners = _boundary_facets(cells)
    midpoints = nodes[facets].mean(axis=1)
    tags = np.asarray([tag_fn(m) for m in midpoints], dtype=object)
    return Mesh(
        dim=dim,
        nodes=np.ascontiguousarray(nodes, dtype=float),
        cells=np.ascontiguousarray(cells, dtype=np.int64),
        boundary_facets=np.ascontiguousarray(facets, dtype=np.int64),
        facet_tags=tags,
        facet_cells=np.ascontiguousarray(owners, dtype=np.int64),
        region=region,
    )


# ---------------------------------------------------------------------------
# Spiderweb disc / annulus construction
# ---------------------------------------------------------------------------


def _ring_nodes(j: int, radius: float) -> np.ndarray:
    if j == 0:
        return np.zeros((1, 2))
    angles = np.arange(6 * j) * (np.pi / (3 * j))
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def _strip_cells(inner_start: int, j: int, outer_start: int) -> list:
    """Triangles joining ring j (6j nodes) to ring j+1, sector by sector."""
    cells = []
    n_in = max(6 * j, 1)
    n_out = 6 * (j + 1)

    def inner(idx):
        return inner_start + (idx % n_in)

    def outer(idx):
        return outer_start + (idx % n_out)

    for s in range(6):
        i0 = s * j
        o0 = s * (j + 1)
        for i in range(j + 1):
            cells.append((outer(o0 + i), outer(o0 + i + 1), inner(i0 + i)))
        for i in range(j):
            cells.append((inner(i0 + i), outer(o0 + i + 1), inner(i0 + i + 1)))
    return cells


def _spiderweb(j_lo: int, j_hi: int, radii: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Node/cell arrays for rings j_lo..j_hi with the given radii."""
    nodes = []
    ring_start = {}
    count = 0
    for k, j in enumerate(range(j_lo, j_hi + 1)):
        ring = _ring_nodes(j, radii[k])
        ring_start[j] = count
        count += ring.shape[0]
        nodes.append(ring)
    cells = []
    for j in range(j_lo, j_hi):
        cells.extend(_strip_cells(ring_start[j], j, ring_start[j + 1]))
    return np.concatenate(nodes, axis=0), np.asarray(cells, dtype=np.int64)


def generate_annulus_benchmark(
    fluid_radius: float, wall_thickness: float, target_h: float
) -> MeshPair:
    """Disc-shaped fluid chamber surrounded by an annular elastic wall.

    The two meshes conform along the shared circle of radius ``fluid_radius``,
    tagged ``interface`` on both sides; the outer circle of the wall is tagged
    ``exterior``.
    """
    if fluid_radius <= 0 or wall_thickness <= 0 or target_h <= 0:
        raise MeshGenerationError("all annulus dimensions must be positive")
    if target_h >= fluid_radius / 5:
        raise MeshGenerationError(
            f"target_h {target_h} too coarse; needs target_h < fluid_radius/5"
        )

    n_f = max(5, int(round(fluid_radius / target_h)))
    n_s = max(1, int(round(wall_thickness / target_h)))

    fluid_radii = np.linspace(0.0, fluid_radius, n_f + 1)
    solid_radii = np.linspace(fluid_radius, fluid_radius + wall_thickness, n_s + 1)

    f_nodes, f_cells = _spiderweb(0, n_f, fluid_radii)
    s_nodes, s_cells = _spiderweb(n_f, n_f + n_s, solid_radii)

    r_mid = fluid_radius + 0.5 * wall_thickness

    fluid = _finish_mesh(2, f_nodes, f_cells, "fluid", lambda m: INTERFACE_TAG)
    solid = _finish_mesh(
        2,
        s_nodes,
        s_cells,
        "solid",
        lambda m: INTERFACE_TAG if np.hypot(*m) < r_mid else EXTERIOR_TAG,
    )
    interface = build_interface_map(fluid, solid)
    return MeshPair(fluid, solid, interface)


# ---------------------------------------------------------------------------
# Structured rectangles and the channel benchmark
# ---------------------------------------------------------------------------


def rectangle_grid(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Union-jack triangulation of the tensor grid x × y."""
    nx, ny = len(x) - 1, len(y) - 1
    xx, yy = np.meshgrid(x, y, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def node(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            a, b = node(i, j), node(i + 1, j)
            c, d = node(i + 1, j + 1), node(i, j + 1)
            if (i + j) % 2 == 0:
                cells.append((a, b, c))
                cells.append((a, c, d))
            else:
                cells.append((a, b, d))
                cells.append((b, c, d))
    return nodes, np.asarray(cells, dtype=np.int64)


def _extract_submesh(nodes, cells, keep_mask, region, tag_fn) -> Mesh:
    kept = cells[keep_mask]
    used = np.unique(kept)
    renum = -np.ones(nodes.shape[0], dtype=np.int64)
    renum[used] = np.arange(used.size)
    return _finish_mesh(2, nodes[used], renum[kept], region, tag_fn)


def generate_channel_benchmark(
    length: float, height: float, target_h: float, wall_thickness: float
) -> MeshPair:
    """Rectangular fluid channel with solid wall strips above and below.

    Fluid ends are tagged ``inlet`` (x = 0) and ``outlet`` (x = length); the
    shared horizontal edges are ``interface`` and the remaining wall boundary
    is ``exterior``.
    """
    if min(length, height, target_h, wall_thickness) <= 0:
        raise MeshGenerationError("all channel dimensions must be positive")
    if target_h >= height / 4:
        raise MeshGenerationError(
            f"target_h {target_h} too coarse; needs target_h < height/4"
        )

    nx = max(2, int(round(length / target_h)))
    ny = max(4, int(round(height / target_h)))
    nw = max(1, int(round(wall_thickness / target_h)))

    x = np.linspace(0.0, length, nx + 1)
    y_bot = np.linspace(-height / 2 - wall_thickness, -height / 2, nw + 1)
    y_mid = np.linspace(-height / 2, height / 2, ny + 1)
    y_top = np.linspace(height / 2, height / 2 + wall_thickness, nw + 1)
    y = np.concatenate([y_bot[:-1], y_mid, y_top[1:]])

    nodes, cells = rectangle_grid(x, y)
    centroid_y = nodes[cells].mean(axis=1)[:, 1]
    in_fluid = np.abs(centroid_y) < height / 2

    half_h = height / 2
    tol = 0.25 * min(target_h, wall_thickness)

    def fluid_tag(m):
        if abs(m[0]) < tol:
            return INLET_TAG
        if abs(m[0] - length) < tol:
            return OUTLET_TAG
        return INTERFACE_TAG

    def solid_tag(m):
        return INTERFACE_TAG if abs(abs(m[1]) - half_h) < tol else EXTERIOR_TAG

    fluid = _extract_submesh(nodes, cells, in_fluid, "fluid", fluid_tag)
    solid = _extract_submesh(nodes, cells, ~in_fluid, "solid", solid_tag)
    interface = build_interface_map(fluid, solid)
    return MeshPair(fluid, solid, interface)


# ---------------------------------------------------------------------------
# Interface pairing and validation
# ---------------------------------------------------------------------------


def build_interface_map(fluid: Mesh, solid: Mesh, tol: float = CONFORMITY_TOL) -> InterfaceMap:
    """Pair coincident interface nodes of the two meshes by coordinates."""
    f_nodes = fluid.nodes_with_tag(INTERFACE_TAG)
    s_nodes = solid.nodes_with_tag(INTERFACE_TAG)
    if len(f_nodes) == 0 or len(s_nodes) == 0:
        raise MeshValidationError("one of the meshes has no interface-tagged facets")
    if len(f_nodes) != len(s_nodes):
        raise MeshValidationError(
            f"interface node counts differ: fluid {len(f_nodes)}, solid {len(s_nodes)}"
        )
    tree = cKDTree(solid.nodes[s_nodes])
    dist, nearest = tree.query(fluid.nodes[f_nodes])
    if np.any(dist > tol):
        worst = int(np.argmax(dist))
        raise MeshValidationError(
            f"non-conforming interface: fluid node {f_nodes[worst]} is "
            f"{dist[worst]:.3e} m from the nearest solid node (tol {tol:.1e})"
        )
    if len(np.unique(nearest)) != len(nearest):
        raise MeshValidationError("interface pairing is not one-to-one")
    return InterfaceMap(
        fluid_nodes=f_nodes.astype(np.int64),
        solid_nodes=s_nodes[nearest].astype(np.int64),
    )


def validate(pair: MeshPair) -> ValidationReport:
    """Structural checks on a mesh pair; failures are reported, not raised."""
    report = ValidationReport(passed=True)

    for mesh in (pair.fluid, pair.solid):
        vols = mesh.cell_volumes()
        bad = np.flatnonzero(vols <= 0.0)
        report.add(
            f"{mesh.region}: positive cell volumes",
            bad.size == 0,
            f"non-positive cells {bad.tolist()}" if bad.size else "",
        )
        in_range = mesh.cells.min() >= 0 and mesh.cells.max() < mesh.n_nodes
        report.add(f"{mesh.region}: cell node indices in range", in_range)
        report.add(
            f"{mesh.region}: boundary facets tagged",
            len(mesh.boundary_facets) == len(mesh.facet_tags)
            and all(isinstance(t, str) and t for t in mesh.facet_tags),
        )

    iface = pair.interface
    gaps = np.linalg.norm(
        pair.fluid.nodes[iface.fluid_nodes] - pair.solid.nodes[iface.solid_nodes],
        axis=1,
    )
    worst = float(gaps.max()) if len(gaps) else np.inf
    report.add(
        "interface conformity",
        len(gaps) > 0 and worst <= CONFORMITY_TOL,
        f"worst node gap {worst:.3e} m",
    )

    f_iface = set(pair.fluid.nodes_with_tag(INTERFACE_TAG).tolist())
    report.add(
        "every tagged fluid interface node is paired",
        f_iface == set(iface.fluid_nodes.tolist()),
    )

    # matching facets: each fluid interface facet must map to a solid facet
    pairing = dict(zip(iface.fluid_nodes.tolist(), iface.solid_nodes.tolist()))
    solid_facets = {
        tuple(sorted(f)) for f in pair.solid.facets_with_tag(INTERFACE_TAG).tolist()
    }
    unmatched = [
        f
        for f in pair.fluid.facets_with_tag(INTERFACE_TAG).tolist()
        if tuple(sorted(pairing[n] for n in f)) not in solid_facets
    ]
    report.add(
        "interface facets match",
        not unmatched,
        f"{len(unmatched)} fluid facets without a solid counterpart" if unmatched else "",
    )
    return report


# ---------------------------------------------------------------------------
# Field helpers
# ---------------------------------------------------------------------------


def current_coordinates(mesh: Mesh, displacement) -> np.ndarray:
    """Deformed node coordinates: reference plus nodal displacement."""
    values = np.asarray(getattr(displacement, "values", displacement), dtype=float)
    if values.shape != mesh.nodes.shape:
        raise ValueError(
            f"displacement shape {values.shape} does not match mesh nodes "
            f"{mesh.nodes.shape}"
        )
    return mesh.nodes + values


def circumferential_fibers(mesh: Mesh) -> np.ndarray:
    """Per-cell unit tangents to concentric circles, evaluated at centroids."""
    centroids = mesh.nodes[mesh.cells].mean(axis=1)
    radii = np.linalg.norm(centroids, axis=1)
    if np.any(radii == 0.0):
        raise MeshGenerationError("fiber direction undefined at the origin")
    fibers = np.column_stack([-centroids[:, 1], centroids[:, 0]]) / radii[:, None]
    return fibers


def horizontal_fibers(mesh: Mesh) -> np.ndarray:
    """Per-cell unit vectors along +x (used by the channel scenario)."""
    fibers = np.zeros((mesh.n_cells, mesh.dim))
    fibers[:, 0] = 1.0
    return fibers


# ---------------------------------------------------------------------------
# Plain-text import/export
# ---------------------------------------------------------------------------


def write_mesh_text(mesh: Mesh, path) -> None:
    """Write a mesh in the package's plain-text format.

    The format is line oriented::

        dim <d>
        region <fluid|solid>
        nodes <n>
        <x> <y> [<z>]          (n lines, full double precision)
        cells <m>
        <i> <j> <k> [<l>]      (m lines)
        facets <f>
        <i> <j> [<k>] <tag>    (f lines)
    """
    with open(path, "w") as fh:
        fh.write(f"dim {mesh.dim}\n")
        fh.write(f"region {mesh.region}\n")
        fh.write(f"nodes {mesh.n_nodes}\n")
        for row in mesh.nodes:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(f"cells {mesh.n_cells}\n")
        for row in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
        fh.write(f"facets {len(mesh.boundary_facets)}\n")
        for facet, tag, owner in zip(mesh.boundary_facets, mesh.facet_tags, mesh.facet_cells):
            idx = " ".join(str(int(v)) for v in facet)
            fh.write(f"{idx} {tag} {int(owner)}\n")


def read_mesh_text(path) -> Mesh:
    """Read a mesh written by :func:`write_mesh_text`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    pos = 0

    def expect(keyword):
        nonlocal pos
        parts = tokens[pos].split()
        if not parts or parts[0] != keyword:
            raise MeshValidationError(f"expected '{keyword}' at line {pos + 1}")
        pos += 1
        return parts[1:]

    dim = int(expect("dim")[0])
    region = expect("region")[0]
    n_nodes = int(expect("nodes")[0])
    nodes = np.array(
        [[float(v) for v in tokens[pos + i].split()] for i in range(n_nodes)]
    )
    pos += n_nodes
    n_cells = int(expect("cells")[0])
    cells = np.array(
        [[int(v) for v in tokens[pos + i].split()] for i in range(n_cells)],
        dtype=np.int64,
    )
    pos += n_cells
    n_facets = int(expect("facets")[0])
    facets, tags, owners = [], [], []
    for i in range(n_facets):
        parts = tokens[pos + i].split()
        facets.append([int(v) for v in parts[:dim]])
        tags.append(parts[dim])
        owners.append(int(parts[dim + 1]))
    return Mesh(
        dim=dim,
        nodes=nodes,
        cells=cells,
        boundary_facets=np.asarray(facets, dtype=np.int64),
        facet_tags=np.asarray(tags, dtype=object),
        facet_cells=np.asarray(owners, dtype=np.int64),
        region=region,
    )

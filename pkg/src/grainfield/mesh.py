"""Tetrahedral grain meshes and grain-boundary geometry.

A mesh is a conformal tetrahedral tessellation where every element carries a
grain label.  Two kinds of boundary structure drive the spatial model:

* second-order boundaries: triangular faces shared by two elements of
  different grains.  Their nodes form the per-grain sets ``B_g`` with
  area-based quadrature weights (one third of the incident interface area).
* third-order boundaries: edges whose incident elements span at least three
  grains (junction lines).  Their nodes form the per-grain sets ``C_g`` with
  length-based weights (half of the incident junction-edge length).

File format (plain text)::

    nodes N elements M grains G
    x y z            # N node lines
    n0 n1 n2 n3 g    # M element lines, node ids 0-based, grain ids 1-based
"""

import logging
import re
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import MeshFormatError, MeshValidationError, NonConformalMeshError

logger = logging.getLogger(__name__)

_HEADER_RE = re.compile(r"nodes\s+(\d+)\s+elements\s+(\d+)\s+grains\s+(\d+)\s*")

# Vertex index triples of the four faces of a tetrahedron.
_TET_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
_TET_EDGES = tuple(combinations(range(4), 2))


@dataclass
class GrainMesh:
    """Node coordinates, element connectivity and grain labels."""

    nodes: np.ndarray            # (N, 3) float64
    elements: np.ndarray         # (M, 4) int64, 0-based node ids
    grain_of_element: np.ndarray  # (M,) int64, 1-based grain ids
    n_grains: int

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]


@dataclass
class GrainBoundarySet:
    """One order of boundary nodes for all grains, in canonical flat order.

    Flattening is grains ascending, node id ascending within each grain, so
    each grain occupies the contiguous index range
    ``offsets[g-1]:offsets[g]``.
    """

    node_lists: list             # per grain, sorted node id arrays
    weight_lists: list           # per grain, aligned quadrature weights
    offsets: np.ndarray          # (G+1,) flat block boundaries
    grains: np.ndarray           # (P,) 1-based grain id per flat index
    nodes: np.ndarray            # (P,) node id per flat index
    weights: np.ndarray          # (P,) quadrature weight per flat index
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return int(self.offsets[-1])

    @property
    def n_grains(self):
        return len(self.node_lists)

    def index_of(self, grain, node):
        """Flat index of (grain, node); KeyError if absent."""
        if not self._index:
            for p in range(self.dim):
                self._index[(int(self.grains[p]), int(self.nodes[p]))] = p
        return self._index[(int(grain), int(node))]

    def contains(self, grain, node):
        try:
            self.index_of(grain, node)
            return True
        except KeyError:
            return False


@dataclass
class BoundaryGeometry:
    """Second- and third-order boundary sets plus grain adjacency."""

    second_order: GrainBoundarySet
    third_order: GrainBoundarySet
    grain_neighbors: list        # per grain (0-based position), set of 1-based grain ids


@dataclass
class NeighborhoodGraph:
    """Within-grain and between-grain neighbor structure on a boundary set.

    Indices refer to the flat order of ``boundary``.  Within-grain neighbors
    (wgn) are boundary nodes of the same grain sharing a tetrahedral element;
    between-grain neighbors (bgn) are copies of the same node owned by
    adjacent grains.  Stored as CSR-style adjacency.
    """

    boundary: GrainBoundarySet
    wgn_indptr: np.ndarray
    wgn_indices: np.ndarray
    bgn_indptr: np.ndarray
    bgn_indices: np.ndarray
    wgn_count: np.ndarray
    bgn_count: np.ndarray

    @property
    def dim(self):
        return self.boundary.dim

    def wgn(self, p):
        return self.wgn_indices[self.wgn_indptr[p]:self.wgn_indptr[p + 1]]

    def bgn(self, p):
        return self.bgn_indices[self.bgn_indptr[p]:self.bgn_indptr[p + 1]]


def load_mesh(path):
    """Read and validate a mesh file.

    Raises
    ------
    MeshFormatError
        Malformed header or body.
    MeshValidationError
        Structural problems (bad indices, empty grains, degenerate elements,
        non-manifold or non-conformal interfaces).
    """
    with open(path) as fh:
        header = fh.readline()
        m = _HEADER_RE.fullmatch(header.strip() + " ")
        if m is None:
            raise MeshFormatError(f"bad mesh header: {header.strip()!r}")
        n_nodes, n_elements, n_grains = (int(g) for g in m.groups())
        try:
            nodes = np.loadtxt(fh, dtype=np.float64, max_rows=n_nodes, ndmin=2)
            elems = np.loadtxt(fh, dtype=np.int64, max_rows=n_elements, ndmin=2)
        except ValueError as exc:
            raise MeshFormatError(f"cannot parse mesh body: {exc}") from exc
    if nodes.shape != (n_nodes, 3):
        raise MeshFormatError(f"expected {n_nodes} node lines of 3 coordinates, got {nodes.shape}")
    if elems.shape != (n_elements, 5):
        raise MeshFormatError(f"expected {n_elements} element lines of 5 integers, got {elems.shape}")
    mesh = GrainMesh(nodes, np.ascontiguousarray(elems[:, :4]),
                     np.ascontiguousarray(elems[:, 4]), n_grains)
    validate_mesh(mesh)
    return mesh


def save_mesh(mesh, path):
    """Write a mesh in the text format read by :func:`load_mesh`.

    Coordinates are written with shortest round-trip formatting, so a
    save/load cycle reproduces them bit for bit.
    """
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} elements {mesh.n_elements} grains {mesh.n_grains}\n")
        for x, y, z in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for (a, b, c, d), g in zip(mesh.elements, mesh.grain_of_element):
            fh.write(f"{a} {b} {c} {d} {g}\n")


def centroids(mesh):
    """Element centroids, the observation locations of the model."""
    return mesh.nodes[mesh.elements].mean(axis=1)


def element_volumes(mesh):
    """Signed tetrahedron volumes."""
    v = mesh.nodes[mesh.elements]
    d = v[:, 1:] - v[:, :1]
    return np.linalg.det(d) / 6.0


def validate_mesh(mesh):
    """Run all structural checks; raises on the first violation."""
    n_nodes, n_elements = mesh.n_nodes, mesh.n_elements
    if n_elements == 0:
        raise MeshValidationError("mesh has no elements")
    el = mesh.elements
    if el.min(initial=0) < 0 or el.max(initial=-1) >= n_nodes:
        raise MeshValidationError("element node index out of range")
    sorted_el = np.sort(el, axis=1)
    if np.any(sorted_el[:, 1:] == sorted_el[:, :-1]):
        bad = int(np.nonzero(np.any(sorted_el[:, 1:] == sorted_el[:, :-1], axis=1))[0][0])
        raise MeshValidationError(f"element {bad} has repeated node indices")
    g = mesh.grain_of_element
    if g.min() < 1 or g.max() > mesh.n_grains:
        raise MeshValidationError("grain id out of range")
    present = np.bincount(g, minlength=mesh.n_grains + 1)[1:]
    if np.any(present == 0):
        missing = int(np.nonzero(present == 0)[0][0]) + 1
        raise MeshValidationError(f"grain {missing} has no elements")
    vol = element_volumes(mesh)
    if np.any(vol == 0.0) or not np.all(np.isfinite(vol)):
        bad = int(np.nonzero(~np.isfinite(vol) | (vol == 0.0))[0][0])
        raise MeshValidationError(f"element {bad} has zero volume")
    _check_conformal(mesh)


def _face_incidence(mesh):
    """Map sorted face node triple -> list of (element, grain)."""
    faces = {}
    el = mesh.elements
    g = mesh.grain_of_element
    for m in range(mesh.n_elements):
        tet = el[m]
        gm = int(g[m])
        for fa in _TET_FACES:
            key = tuple(sorted((int(tet[fa[0]]), int(tet[fa[1]]), int(tet[fa[2]]))))
            faces.setdefault(key, []).append((m, gm))
    return faces


def _check_conformal(mesh):
    faces = _face_incidence(mesh)
    seen = {}
    for key, inc in faces.items():
        if len(inc) > 2:
            raise MeshValidationError(f"face {key} shared by {len(inc)} elements (non-manifold)")
        if len(inc) == 1:
            # A surface face geometrically coincident with another surface
            # face under different node indices means hanging nodes were
            # introduced; report rather than repair.  Exact coincidence only.
            sig = tuple(sorted(tuple(mesh.nodes[v]) for v in key))
            other = seen.setdefault(sig, key)
            if other != key:
                raise NonConformalMeshError(
                    f"faces {other} and {key} are geometrically coincident but indexed differently")


def _triangle_area(nodes, key):
    a, b, c = nodes[key[0]], nodes[key[1]], nodes[key[2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a))


def _build_boundary_set(per_grain_weights, n_grains):
    node_lists, weight_lists = [], []
    for g in range(1, n_grains + 1):
        entries = per_grain_weights.get(g, {})
        ns = np.array(sorted(entries), dtype=np.int64)
        ws = np.array([entries[v] for v in ns], dtype=np.float64)
        node_lists.append(ns)
        weight_lists.append(ws)
    offsets = np.zeros(n_grains + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(ns) for ns in node_lists])
    grains = np.repeat(np.arange(1, n_grains + 1, dtype=np.int64),
                       [len(ns) for ns in node_lists])
    nodes = (np.concatenate(node_lists) if offsets[-1] else np.empty(0, np.int64))
    weights = (np.concatenate(weight_lists) if offsets[-1] else np.empty(0, np.float64))
    return GrainBoundarySet(node_lists, weight_lists, offsets, grains, nodes, weights)


def extract_boundaries(mesh):
    """Compute second- and third-order boundary sets with quadrature weights.

    Returns
    -------
    BoundaryGeometry
        ``second_order`` weights are one third of the total interface area
        bordering the grain at each node; ``third_order`` weights are half of
        the total junction-edge length bordering the grain at each node.

    Raises
    ------
    MeshValidationError
        Degenerate (zero-area) interface faces, or a third-order node that is
        not also a second-order node of the same grain, which cannot happen
        on a conformal mesh.
    """
    faces = _face_incidence(mesh)
    dv = {}       # grain -> {node -> weight}
    adjacency = {gr: set() for gr in range(1, mesh.n_grains + 1)}
    interface_areas = []
    interface = []
    for key, inc in faces.items():
        if len(inc) == 2 and inc[0][1] != inc[1][1]:
            area = _triangle_area(mesh.nodes, key)
            interface_areas.append(area)
            interface.append((key, inc[0][1], inc[1][1], area))
    if interface:
        max_area = max(interface_areas)
        if max_area <= 0.0:
            raise MeshValidationError("all interface faces are degenerate")
        for key, g1, g2, area in interface:
            if area < 1e-12 * max_area:
                raise MeshValidationError(f"interface face {key} has (near-)zero area")
            adjacency[g1].add(g2)
            adjacency[g2].add(g1)
            for gr in (g1, g2):
                bucket = dv.setdefault(gr, {})
                for v in key:
                    bucket[v] = bucket.get(v, 0.0) + area / 3.0

    edge_grains = {}
    el = mesh.elements
    gl = mesh.grain_of_element
    for m in range(mesh.n_elements):
        tet = el[m]
        gm = int(gl[m])
        for (i, j) in _TET_EDGES:
            a, b = int(tet[i]), int(tet[j])
            key = (a, b) if a < b else (b, a)
            edge_grains.setdefault(key, set()).add(gm)
    dvp = {}
    for (a, b), gset in edge_grains.items():
        if len(gset) < 3:
            continue
        length = float(np.linalg.norm(mesh.nodes[a] - mesh.nodes[b]))
        for gr in gset:
            bucket = dvp.setdefault(gr, {})
            bucket[a] = bucket.get(a, 0.0) + length / 2.0
            bucket[b] = bucket.get(b, 0.0) + length / 2.0

    second = _build_boundary_set(dv, mesh.n_grains)
    third = _build_boundary_set(dvp, mesh.n_grains)
    for gr in range(1, mesh.n_grains + 1):
        b_nodes = set(second.node_lists[gr - 1].tolist())
        for v in third.node_lists[gr - 1]:
            if int(v) not in b_nodes:
                raise MeshValidationError(
                    f"third-order node {int(v)} of grain {gr} is not a second-order node; "
                    "mesh is not conformal")
    neighbors = [adjacency[gr] for gr in range(1, mesh.n_grains + 1)]
    return BoundaryGeometry(second, third, neighbors)


def build_neighborhoods(mesh, bset, grain_neighbors):
    """Neighborhood graph (wgn and bgn adjacency) over a boundary set.

    Parameters
    ----------
    mesh : GrainMesh
    bset : GrainBoundarySet
        Either order of boundary set from :func:`extract_boundaries`.
    grain_neighbors : list of sets
        Face-sharing grain adjacency from :func:`extract_boundaries`.

    Notes
    -----
    Two flat indices are within-grain neighbors when they belong to the same
    grain and their nodes are vertices of a common tetrahedral element (of
    any grain).  They are between-grain neighbors when they are copies of
    the same node in two grains that share an interface face.
    """
    dim = bset.dim
    grains_of_node = {}
    for gr in range(1, bset.n_grains + 1):
        for v in bset.node_lists[gr - 1]:
            grains_of_node.setdefault(int(v), []).append(gr)

    wgn_sets = [set() for _ in range(dim)]
    el = mesh.elements
    for m in range(mesh.n_elements):
        tet = el[m]
        for (i, j) in _TET_EDGES:
            a, b = int(tet[i]), int(tet[j])
            ga = grains_of_node.get(a)
            gb = grains_of_node.get(b)
            if not ga or not gb:
                continue
            for gr in ga:
                if gr in gb:
                    p = bset.index_of(gr, a)
                    q = bset.index_of(gr, b)
                    wgn_sets[p].add(q)
                    wgn_sets[q].add(p)

    bgn_sets = [set() for _ in range(dim)]
    for v, owners in grains_of_node.items():
        for gr in owners:
            for g2 in owners:
                if g2 != gr and g2 in grain_neighbors[gr - 1]:
                    bgn_sets[bset.index_of(gr, v)].add(bset.index_of(g2, v))

    def _csr(neigh):
        ptr = np.zeros(dim + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(s) for s in neigh])
        idx = (np.concatenate([np.array(sorted(s), dtype=np.int64) for s in neigh])
               if ptr[-1] else np.empty(0, np.int64))
        return ptr, idx

    wgn_ptr, wgn_idx = _csr(wgn_sets)
    bgn_ptr, bgn_idx = _csr(bgn_sets)
    wgn_count = np.diff(wgn_ptr)
    bgn_count = np.diff(bgn_ptr)
    isolated = int(np.sum((wgn_count == 0) & (bgn_count == 0)))
    if isolated:
        logger.warning("%d boundary indices have no neighbors at all", isolated)
    return NeighborhoodGraph(bset, wgn_ptr, wgn_idx, bgn_ptr, bgn_idx,
                             wgn_count.astype(np.int64), bgn_count.astype(np.int64))

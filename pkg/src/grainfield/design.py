"""Exponential-kernel design matrices linking boundary fields to elements.

Each element observation responds to the latent field at every boundary node
of its own grain through ``exp(-phi * d(centroid, node)) * weight``, where
the weight is the node's quadrature weight.  The matrix is block diagonal by
grain: entries across grains are structurally zero.  Distances never change
during sampling, so they are computed once and re-exponentiated whenever a
new decay rate ``phi`` is proposed.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import core

__all__ = ["KernelDesign", "DesignBlock", "build_design", "rebuild_for_phi", "apply_design", "dense_design"]


@dataclass
class DesignBlock:
    """Per-grain dense block of the design matrix."""

    grain: int
    rows: np.ndarray          # element indices of this grain
    col_lo: int
    col_hi: int
    node_xyz: np.ndarray      # (n_cols, 3) boundary node coordinates
    weights: np.ndarray       # (n_cols,) quadrature weights
    cent: np.ndarray          # (n_rows, 3) centroids of this grain's elements
    dist: np.ndarray          # (n_rows, n_cols) distances, or None when not cached
    values: np.ndarray        # (n_rows, n_cols) current kernel values


@dataclass
class KernelDesign:
    """Design matrix for one boundary field at a fixed decay rate."""

    phi: float
    blocks: list
    n_elements: int
    n_cols: int
    cache_distances: bool = True
    truncate_eps: float = 0.0


def _fill_values(dist, weights, phi, truncate_eps):
    values = np.empty_like(dist)
    if values.size:
        core.exp_scale(dist, weights, phi, values)
        if truncate_eps > 0.0:
            values[values < truncate_eps] = 0.0
    return values


def build_design(mesh, bset, phi, *, centroids=None, cache_distances=True, truncate_eps=0.0):
    """Build the kernel design for one boundary set.

    Parameters
    ----------
    mesh : GrainMesh
    bset : GrainBoundarySet
        Boundary node sets with quadrature weights.
    phi : float
        Kernel decay rate, > 0.
    centroids : ndarray, optional
        Precomputed element centroids (avoids recomputation across fields).
    cache_distances : bool
        Keep the centroid-to-node distance blocks in memory.  Disable to
        trade rebuild time for memory on large meshes.
    truncate_eps : float
        Zero out kernel entries below this absolute threshold (0 disables).
    """
    if not phi > 0.0:
        raise ValueError(f"phi must be positive, got {phi}")
    if centroids is None:
        centroids = mesh.nodes[mesh.elements].mean(axis=1)
    blocks = []
    for g in range(1, bset.n_grains + 1):
        rows = np.nonzero(mesh.grain_of_element == g)[0]
        nodes = bset.node_lists[g - 1]
        weights = bset.weight_lists[g - 1]
        node_xyz = mesh.nodes[nodes]
        cent = centroids[rows]
        dist = cdist(cent, node_xyz) if len(nodes) else np.zeros((len(rows), 0))
        values = _fill_values(dist, weights, phi, truncate_eps)
        blocks.append(DesignBlock(
            grain=g, rows=rows, col_lo=int(bset.offsets[g - 1]), col_hi=int(bset.offsets[g]),
            node_xyz=node_xyz, weights=weights, cent=cent,
            dist=dist if cache_distances else None, values=values))
    return KernelDesign(phi=float(phi), blocks=blocks, n_elements=mesh.n_elements,
                        n_cols=bset.dim, cache_distances=cache_distances,
                        truncate_eps=truncate_eps)


def rebuild_for_phi(design, phi):
    """New design at a different decay rate, sharing cached distances.

    The returned object owns fresh value arrays, so a proposal can be staged
    and discarded without touching the current design.
    """
    if not phi > 0.0:
        raise ValueError(f"phi must be positive, got {phi}")
    blocks = []
    for blk in design.blocks:
        dist = blk.dist
        if dist is None:
            dist = cdist(blk.cent, blk.node_xyz) if blk.node_xyz.shape[0] else np.zeros((len(blk.rows), 0))
        values = _fill_values(dist, blk.weights, phi, design.truncate_eps)
        blocks.append(DesignBlock(
            grain=blk.grain, rows=blk.rows, col_lo=blk.col_lo, col_hi=blk.col_hi,
            node_xyz=blk.node_xyz, weights=blk.weights, cent=blk.cent,
            dist=blk.dist, values=values))
    return KernelDesign(phi=float(phi), blocks=blocks, n_elements=design.n_elements,
                        n_cols=design.n_cols, cache_distances=design.cache_distances,
                        truncate_eps=design.truncate_eps)


def apply_design(design, coeffs, out=None, sign=1.0):
    """Accumulate ``sign * X @ coeffs`` into ``out`` (allocated when None)."""
    if out is None:
        out = np.zeros(design.n_elements, dtype=np.float64)
    for blk in design.blocks:
        if blk.values.shape[1]:
            out[blk.rows] += sign * (blk.values @ coeffs[blk.col_lo:blk.col_hi])
    return out


def dense_design(design):
    """Dense (n_elements, n_cols) matrix; for oracles and small cases only."""
    X = np.zeros((design.n_elements, design.n_cols), dtype=np.float64)
    for blk in design.blocks:
        if blk.values.size:
            X[np.ix_(blk.rows, np.arange(blk.col_lo, blk.col_hi))] = blk.values
    return X

"""Synthetic geometries and simulated datasets.

Meshes are regular grids of cells split into six tetrahedra each (the
translation-invariant corner-to-corner split, which is conformal across
cells), with grain labels assigned per element:

* ``slab-stack``: grains are horizontal slabs stacked along z; interfaces
  are flat planes and no third-order boundary exists.
* ``cartoon3``: three grains are angular sectors around the vertical axis
  through the domain center, so they meet along a junction line.
* ``voronoi-grains``: elements take the label of the nearest of G random
  seed points, giving generic grain shapes with junction lines.
"""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.spatial.distance import cdist

from .design import apply_design, build_design
from .errors import ConfigError
from .gmrf import FieldHyperparams, assemble_precision, sample_gmrf
from .mesh import GrainMesh, build_neighborhoods, extract_boundaries, validate_mesh
from .model import scale_mixture_draw

__all__ = ["FieldTruth", "TrueParams", "SynthSpec", "SimulatedData",
           "generate_geometry", "simulate_data"]

GEOMETRY_KINDS = ("slab-stack", "voronoi-grains", "cartoon3")


@dataclass
class FieldTruth:
    """True hyperparameters of one latent field."""

    nu: float = 0.0
    theta: float = 2.0
    kappa: float = 0.6
    rho: float = 0.2
    phi: float = 2.0

    def as_hyperparams(self):
        return FieldHyperparams(nu=self.nu, theta=self.theta, kappa=self.kappa,
                                rho=self.rho, phi=self.phi)


@dataclass
class TrueParams:
    """True generating parameters for a simulated dataset."""

    mu: float = 100.0
    tau2: float = 100.0
    mu_g: list = None           # explicit grain means; drawn from N(mu, tau2) when None
    sigma2: float = 1.0
    df: float = 6.0
    beta: FieldTruth = field(default_factory=FieldTruth)
    gamma: FieldTruth = field(default_factory=lambda: FieldTruth(theta=4.0, phi=3.0))


@dataclass
class SynthSpec:
    """Geometry kind, size and true parameters of a synthetic dataset."""

    geometry: str = "cartoon3"
    n_grains: int = 3
    resolution: tuple = (6, 6, 4)
    domain: tuple = (1.0, 1.0, 1.0)
    truth: TrueParams = field(default_factory=TrueParams)


@dataclass
class SimulatedData:
    """Simulated observations plus every realized latent quantity."""

    y: np.ndarray
    mu_g: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray
    eps: np.ndarray
    boundaries: object
    graph_beta: object
    graph_gamma: object
    design_beta: object
    design_gamma: object


def _grid_tets(resolution, domain):
    nx, ny, nz = (int(v) for v in resolution)
    if min(nx, ny, nz) < 1:
        raise ConfigError(f"resolution must be at least 1 cell per axis, got {resolution}")
    lx, ly, lz = (float(v) for v in domain)
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def nid(ix, iy, iz):
        return (ix * (ny + 1) + iy) * (nz + 1) + iz

    paths = list(permutations(range(3)))
    tets = []
    for ix in range(nx):
        for iy in range(ny):
            for iz in range(nz):
                base = np.array([ix, iy, iz])
                for perm in paths:
                    corner = base.copy()
                    verts = [nid(*corner)]
                    for axis in perm:
                        corner = corner.copy()
                        corner[axis] += 1
                        verts.append(nid(*corner))
                    tets.append(verts)
    return nodes, np.array(tets, dtype=np.int64)


def _assign_grains(cent, spec, rng):
    kind = spec.geometry
    lx, ly, lz = (float(v) for v in spec.domain)
    G = int(spec.n_grains)
    if kind == "slab-stack":
        if spec.resolution[2] < G:
            raise ConfigError(f"slab-stack needs at least {G} cells along z, got {spec.resolution[2]}")
        idx = np.minimum((cent[:, 2] / (lz / G)).astype(np.int64), G - 1)
        return idx + 1
    if kind == "cartoon3":
        if G != 3:
            raise ConfigError("cartoon3 geometry has exactly 3 grains")
        ang = np.arctan2(cent[:, 1] - ly / 2.0, cent[:, 0] - lx / 2.0) % (2.0 * np.pi)
        return np.minimum((3.0 * ang / (2.0 * np.pi)).astype(np.int64), 2) + 1
    if kind == "voronoi-grains":
        seeds = rng.uniform(0.0, 1.0, size=(G, 3)) * np.array([lx, ly, lz])
        return np.argmin(cdist(cent, seeds), axis=1).astype(np.int64) + 1
    raise ConfigError(f"unknown geometry kind {kind!r}; expected one of {GEOMETRY_KINDS}")


def generate_geometry(spec, rng):
    """Build and validate a labeled tetrahedral mesh for the spec.

    Raises
    ------
    ConfigError
        Unknown kind, or resolution too coarse to give every grain at least
        one element.
    """
    nodes, tets = _grid_tets(spec.resolution, spec.domain)
    cent = nodes[tets].mean(axis=1)
    grains = _assign_grains(cent, spec, rng)
    counts = np.bincount(grains, minlength=spec.n_grains + 1)[1:]
    if np.any(counts == 0):
        empty = int(np.nonzero(counts == 0)[0][0]) + 1
        raise ConfigError(
            f"grain {empty} received no elements; increase the resolution {spec.resolution}")
    mesh = GrainMesh(nodes, tets, grains, int(spec.n_grains))
    validate_mesh(mesh)
    return mesh


def simulate_data(mesh, spec, rng):
    """Simulate observations on a mesh under the spec's true parameters.

    Draw order is fixed (grain means, second-order field, third-order field,
    error scales and errors) so one seed determines the dataset.
    """
    truth = spec.truth
    bg = extract_boundaries(mesh)
    graph_b = build_neighborhoods(mesh, bg.second_order, bg.grain_neighbors)
    graph_c = build_neighborhoods(mesh, bg.third_order, bg.grain_neighbors)

    if truth.mu_g is not None:
        mu_g = np.asarray(truth.mu_g, dtype=np.float64)
        if mu_g.shape != (mesh.n_grains,):
            raise ConfigError(f"mu_g must have one entry per grain, got {mu_g.shape}")
    else:
        mu_g = truth.mu + np.sqrt(truth.tau2) * rng.standard_normal(mesh.n_grains)

    prec_b = assemble_precision(graph_b, truth.beta.as_hyperparams())
    beta = sample_gmrf(prec_b, truth.beta.nu, rng)
    prec_c = assemble_precision(graph_c, truth.gamma.as_hyperparams())
    gamma = sample_gmrf(prec_c, truth.gamma.nu, rng)

    cent = mesh.nodes[mesh.elements].mean(axis=1)
    design_b = build_design(mesh, bg.second_order, truth.beta.phi, centroids=cent)
    design_c = build_design(mesh, bg.third_order, truth.gamma.phi, centroids=cent)

    omega, eps = scale_mixture_draw(truth.df, truth.sigma2, mesh.n_elements, rng)
    y = mu_g[mesh.grain_of_element - 1].copy()
    apply_design(design_b, beta, out=y)
    apply_design(design_c, gamma, out=y)
    y += eps
    return SimulatedData(y=y, mu_g=mu_g, beta=beta, gamma=gamma, omega=omega, eps=eps,
                         boundaries=bg, graph_beta=graph_b, graph_gamma=graph_c,
                         design_beta=design_b, design_gamma=design_c)

"""Uniform Q1 finite elements on the unit square.

Builds the structured bilinear-quadrilateral mesh for both benchmark
problems and assembles every parameter-independent matrix and vector:
mass, per-strip stiffness, convection, Dirichlet-lift couplings, and the
affine pieces of the target load. All integrals use 2x2 Gauss quadrature
per element, which is exact for Q1 mass and stiffness on axis-aligned
squares.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .parameters import ParameterVector, Problem

# local node order within an element: (0,0), (1,0), (1,1), (0,1) corners
_XI_NODES = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA_NODES = np.array([-1.0, -1.0, 1.0, 1.0])
_GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)

EDGES = ("bottom", "right", "top", "left")

GRAETZ_SPLIT_Y = 0.3


def _reference_element():
    """Shape functions and reference derivatives at the 2x2 Gauss points.

    Returns (phi, dphi_dxi, dphi_deta, eta_gauss), each row one Gauss
    point, each column one local node (eta_gauss is per Gauss point).
    """
    pts = [(gx, gy) for gy in _GAUSS_1D for gx in _GAUSS_1D]
    phi = np.array(
        [0.25 * (1 + _XI_NODES * gx) * (1 + _ETA_NODES * gy) for gx, gy in pts]
    )
    dxi = np.array([0.25 * _XI_NODES * (1 + _ETA_NODES * gy) for _, gy in pts])
    deta = np.array([0.25 * _ETA_NODES * (1 + _XI_NODES * gx) for gx, _ in pts])
    eta = np.array([gy for _, gy in pts])
    return phi, dxi, deta, eta


@dataclass(frozen=True)
class MeshSpec:
    """Mesh refinement and subdomain layout for one benchmark problem.

    The grid has elements_per_side x elements_per_side square elements;
    the default follows the (2^nc + 1) convention. Diffusion splits the
    square into n_subdomains horizontal strips; Graetz always uses the
    two target regions separated at y = 0.3.
    """

    nc: int
    problem: Problem = Problem.DIFFUSION
    n_subdomains: int = 3
    elements_per_side: int = None

    def __post_init__(self):
        if self.nc < 0:
            raise ConfigError("nc must be >= 0")
        if self.elements_per_side is None:
            object.__setattr__(self, "elements_per_side", 2**self.nc + 1)
        if self.elements_per_side < 2:
            raise ConfigError("need at least 2 elements per side")
        if self.problem is Problem.GRAETZ:
            object.__setattr__(self, "n_subdomains", 2)
        if not 1 <= self.n_subdomains <= self.elements_per_side:
            raise ConfigError(
                f"n_subdomains={self.n_subdomains} needs at least one element "
                f"row per strip ({self.elements_per_side} rows available)"
            )

    @property
    def n_nodes(self):
        return (self.elements_per_side + 1) ** 2


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet/Neumann split of the boundary by named edges.

    dirichlet pairs each edge name with its constant boundary value;
    neumann edges carry the homogeneous natural condition. Together the
    two lists must cover the four edges exactly once.
    """

    dirichlet: tuple
    neumann: tuple

    def __post_init__(self):
        named = [edge for edge, _ in self.dirichlet] + list(self.neumann)
        if sorted(named) != sorted(EDGES):
            raise ConfigError(
                f"dirichlet+neumann edges must partition the boundary, got {named}"
            )

    @classmethod
    def for_problem(cls, problem: Problem) -> "BoundarySpec":
        if problem is Problem.DIFFUSION:
            return cls(dirichlet=(("top", 0.0),), neumann=("bottom", "left", "right"))
        # Graetz: inlet value 1 on the left edge, 2 on the right edge.
        # The remaining edges are natural. This placement is an assumption;
        # see README (benchmark problems).
        return cls(dirichlet=(("left", 1.0), ("right", 2.0)), neumann=("bottom", "top"))


@dataclass
class Mesh:
    """Structured quadrilateral mesh with subdomain and boundary tags."""

    spec: MeshSpec
    bc: BoundarySpec
    coords: np.ndarray          # (n_nodes, 2)
    elements: np.ndarray        # (n_elements, 4) counterclockwise connectivity
    elem_subdomain: np.ndarray  # (n_elements,) 1-based strip index
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    interior_nodes: np.ndarray
    full_to_interior: np.ndarray  # -1 on Dirichlet nodes

    @property
    def h(self):
        return 1.0 / self.spec.elements_per_side

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_interior(self):
        return self.interior_nodes.shape[0]

    @property
    def fingerprint(self) -> str:
        key = "|".join(
            [
                self.spec.problem.value,
                str(self.spec.nc),
                str(self.spec.elements_per_side),
                str(self.spec.n_subdomains),
                str(self.n_nodes),
                str(self.n_interior),
                ";".join(f"{e}={v}" for e, v in self.bc.dirichlet),
            ]
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def subdomain_of_centroid(y_c, n_subdomains, problem=Problem.DIFFUSION):
    """1-based strip index for an element centroid height.

    Diffusion strips are [k-1, k] / n_subdomains; an element belongs to
    the strip containing its centroid (last strip absorbs y_c = 1).
    Graetz elements split at y = 0.3, ties to the lower region.
    """
    y_c = np.asarray(y_c, dtype=float)
    if problem is Problem.GRAETZ:
        return np.where(y_c <= GRAETZ_SPLIT_Y, 1, 2)
    k = np.minimum(np.floor(y_c * n_subdomains).astype(int), n_subdomains - 1)
    return k + 1


def build_mesh(spec: MeshSpec, bc: BoundarySpec = None) -> Mesh:
    """Build the uniform grid, connectivity, subdomain and boundary tags."""
    if bc is None:
        bc = BoundarySpec.for_problem(spec.problem)
    m = spec.elements_per_side
    side = np.linspace(0.0, 1.0, m + 1)
    xx, yy = np.meshgrid(side, side, indexing="xy")
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    cols, rows = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    n00 = rows.ravel() * (m + 1) + cols.ravel()
    elements = np.column_stack([n00, n00 + 1, n00 + m + 2, n00 + m + 1])

    y_centroid = (rows.ravel() + 0.5) / m
    elem_subdomain = subdomain_of_centroid(y_centroid, spec.n_subdomains, spec.problem)

    on_edge = {
        "bottom": coords[:, 1] == 0.0,
        "top": coords[:, 1] == 1.0,
        "left": coords[:, 0] == 0.0,
        "right": coords[:, 0] == 1.0,
    }
    dirichlet_mask = np.zeros(coords.shape[0], dtype=bool)
    values_full = np.zeros(coords.shape[0])
    for edge, value in bc.dirichlet:
        dirichlet_mask |= on_edge[edge]
        values_full[on_edge[edge]] = value

    dirichlet_nodes = np.flatnonzero(dirichlet_mask)
    interior_nodes = np.flatnonzero(~dirichlet_mask)
    full_to_interior = np.full(coords.shape[0], -1, dtype=int)
    full_to_interior[interior_nodes] = np.arange(interior_nodes.size)

    return Mesh(
        spec=spec,
        bc=bc,
        coords=coords,
        elements=elements,
        elem_subdomain=elem_subdomain,
        dirichlet_nodes=dirichlet_nodes,
        dirichlet_values=values_full[dirichlet_nodes],
        interior_nodes=interior_nodes,
        full_to_interior=full_to_interior,
    )


def _scatter(conn, data_per_element, n_nodes):
    """Assemble per-element 4x4 blocks into a CSR matrix over all nodes."""
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    mat = sp.coo_matrix(
        (data_per_element.reshape(-1), (rows, cols)), shape=(n_nodes, n_nodes)
    )
    return mat.tocsr()


def assemble_full_matrices(mesh: Mesh) -> dict:
    """Assemble mass, per-subdomain stiffness, and convection over all nodes.

    The convection field is w = (y (1 - y), 0), assembled only for the
    Graetz problem. Returned matrices are unrestricted; Dirichlet
    elimination happens in assemble_operators.
    """
    phi, dxi, deta, eta_g = _reference_element()
    h = mesh.h
    conn = mesh.elements
    ne = conn.shape[0]
    n = mesh.n_nodes

    # detJ = h^2/4, grad_x = (2/h) grad_xi; weights are all 1
    mass_el = (h * h / 4.0) * sum(np.outer(p, p) for p in phi)
    stiff_el = sum(np.outer(d, d) for d in dxi) + sum(np.outer(d, d) for d in deta)

    out = {"mass": _scatter(conn, np.broadcast_to(mass_el, (ne, 4, 4)), n)}

    stiffness = []
    for q in range(1, mesh.spec.n_subdomains + 1):
        sel = mesh.elem_subdomain == q
        stiffness.append(
            _scatter(conn[sel], np.broadcast_to(stiff_el, (int(sel.sum()), 4, 4)), n)
        )
    out["stiffness"] = stiffness

    if mesh.spec.problem is Problem.GRAETZ:
        y0 = mesh.coords[conn[:, 0], 1]
        y_gauss = y0[:, None] + (eta_g[None, :] + 1.0) * (h / 2.0)
        w1 = y_gauss * (1.0 - y_gauss)                      # (ne, 4 gauss pts)
        conv_gp = np.einsum("gi,gj->gij", phi, dxi)          # test x d/dx trial
        conv_el = (h / 2.0) * np.einsum("eg,gij->eij", w1, conv_gp)
        out["convection"] = _scatter(conn, conv_el, n)
    else:
        out["convection"] = None

    # element load: integral of each shape function, h^2/4 per node
    load = []
    for q in range(1, mesh.spec.n_subdomains + 1):
        b = np.zeros(n)
        sel = mesh.elem_subdomain == q
        np.add.at(b, conn[sel].ravel(), h * h / 4.0)
        load.append(b)
    out["load"] = load
    return out


@dataclass
class FemOperators:
    """All parameter-independent assembled operators for one mesh.

    Interior matrices act on the test space (Dirichlet DOFs eliminated);
    the lift blocks couple interior test functions to Dirichlet trial
    functions and build the boundary contribution of the constraint rhs.
    stiffness_at combines the affine stiffness terms for a parameter.
    """

    problem: Problem
    n_subdomains: int
    h: float
    n_nodes: int
    n_interior: int
    interior_nodes: np.ndarray
    dirichlet_nodes: np.ndarray
    full_to_interior: np.ndarray
    mass: sp.csr_matrix
    mass_full: sp.csr_matrix
    stiffness_blocks: list
    stiffness_ref: sp.csr_matrix
    convection: sp.csr_matrix
    convection_full: sp.csr_matrix
    stiffness_lift_blocks: list
    convection_lift: sp.csr_matrix
    dirichlet_values: np.ndarray
    load_blocks: np.ndarray
    fingerprint: str
    _affine_data: np.ndarray = field(default=None, repr=False)
    _affine_indices: np.ndarray = field(default=None, repr=False)
    _affine_indptr: np.ndarray = field(default=None, repr=False)

    def stiffness_coefficients(self, mu) -> np.ndarray:
        """Affine weights of the stiffness terms at a parameter.

        Diffusion: one strip diffusivity per stiffness block. Graetz:
        mu_1 scales every Laplacian block and the convection term enters
        with weight one.
        """
        mu = np.asarray(mu, dtype=float)
        if self.problem is Problem.DIFFUSION:
            return mu
        return np.array([mu[0]] * self.n_subdomains + [1.0])

    def _affine_terms(self):
        terms = list(self.stiffness_blocks)
        if self.problem is Problem.GRAETZ:
            terms.append(self.convection)
        return terms

    def _build_affine_stack(self):
        """Align every stiffness term on one shared sparsity pattern.

        scipy prunes explicit zeros on addition, so the union pattern is
        built from linearized (row, col) keys instead.
        """
        terms = self._affine_terms()
        n = self.n_interior
        coos, keys = [], []
        for t in terms:
            c = t.tocoo()
            coos.append(c)
            keys.append(c.row.astype(np.int64) * n + c.col.astype(np.int64))
        union = np.unique(np.concatenate(keys))
        rows_u = (union // n).astype(np.int32)
        cols_u = (union % n).astype(np.int32)
        data = np.zeros((len(terms), union.size))
        for i, (c, k) in enumerate(zip(coos, keys)):
            data[i, np.searchsorted(union, k)] = c.data
        self._affine_data = data
        self._affine_indices = cols_u
        self._affine_indptr = np.searchsorted(rows_u, np.arange(n + 1)).astype(np.int32)

    def stiffness_at(self, mu) -> sp.csr_matrix:
        """K(mu): weighted sum of the affine stiffness terms (plus
        convection for Graetz), on a shared sparsity pattern.

        Accumulated term by term so the result is bitwise identical to
        the weighted sum of the individual blocks.
        """
        if self._affine_data is None:
            self._build_affine_stack()
        theta = self.stiffness_coefficients(mu)
        data = theta[0] * self._affine_data[0]
        for q in range(1, len(theta)):
            data += theta[q] * self._affine_data[q]
        return sp.csr_matrix(
            (data, self._affine_indices, self._affine_indptr),
            shape=(self.n_interior, self.n_interior),
        )

    def lift_vector(self, mu) -> np.ndarray:
        """Constraint-rhs boundary term: minus the Dirichlet columns of
        the parameter-weighted operator applied to the boundary values."""
        theta = self.stiffness_coefficients(mu)
        lifts = list(self.stiffness_lift_blocks)
        if self.problem is Problem.GRAETZ:
            lifts.append(self.convection_lift)
        d = np.zeros(self.n_interior)
        for coef, lift in zip(theta, lifts):
            if coef != 0.0:
                d -= coef * (lift @ self.dirichlet_values)
        return d

    def target_rhs(self, mu) -> np.ndarray:
        """Target load over interior test functions, affine in mu."""
        mu = np.asarray(mu, dtype=float)
        if self.problem is Problem.DIFFUSION:
            return self.load_blocks.sum(axis=0)
        return mu[1] * self.load_blocks[0] + mu[2] * self.load_blocks[1]


def assemble_operators(mesh: Mesh) -> FemOperators:
    """Restrict the full-node matrices to the test space and store lifts."""
    full = assemble_full_matrices(mesh)
    ii = mesh.interior_nodes
    dd = mesh.dirichlet_nodes

    def interior(mat):
        return mat[ii][:, ii].tocsr()

    def lift(mat):
        return mat[ii][:, dd].tocsr()

    stiffness_blocks = [interior(k) for k in full["stiffness"]]
    stiffness_ref = sum(stiffness_blocks[1:], stiffness_blocks[0]).tocsr()
    convection = convection_full = convection_lift = None
    if full["convection"] is not None:
        convection_full = full["convection"]
        convection = interior(convection_full)
        convection_lift = lift(convection_full)

    ops = FemOperators(
        problem=mesh.spec.problem,
        n_subdomains=mesh.spec.n_subdomains,
        h=mesh.h,
        n_nodes=mesh.n_nodes,
        n_interior=mesh.n_interior,
        interior_nodes=ii,
        dirichlet_nodes=dd,
        full_to_interior=mesh.full_to_interior,
        mass=interior(full["mass"]),
        mass_full=full["mass"],
        stiffness_blocks=stiffness_blocks,
        stiffness_ref=stiffness_ref,
        convection=convection,
        convection_full=convection_full,
        stiffness_lift_blocks=[lift(k) for k in full["stiffness"]],
        convection_lift=convection_lift,
        dirichlet_values=mesh.dirichlet_values,
        load_blocks=np.array([b[ii] for b in full["load"]]),
        fingerprint=mesh.fingerprint,
    )
    # eager, so concurrent sweeps only ever read the operators
    ops._build_affine_stack()
    return ops


def assemble_target_rhs(ops: FemOperators, mu: ParameterVector) -> np.ndarray:
    """Target load b(mu) over interior test functions.

    The parameter vector is validated against its box on construction,
    so only the dimension is re-checked here.
    """
    values = mu.values if isinstance(mu, ParameterVector) else np.asarray(mu)
    expected = 3 if ops.problem is Problem.GRAETZ else ops.n_subdomains
    if values.shape != (expected,):
        raise ConfigError(
            f"parameter has dimension {values.shape[0]}, expected {expected}"
        )
    return ops.target_rhs(values)

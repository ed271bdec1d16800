from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
import scipy.sparse as sparse

from .coeffs import ProblemSpec
from .mesh import ROBIN, TwoLevelMesh
from .numerics import Factorization, SparseSystem, check_residual, factorize

logger = logging.getLogger(__name__)

# A fine-grid function is its coefficient vector over all (N+1)^2 fine nodes.
FineFunction = np.ndarray
Source = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]

# Q1 element matrices on a square cell, nodes counter-clockwise from lower-left.
Q1_STIFFNESS = (
    np.array(
        [
            [4.0, -1.0, -2.0, -1.0],
            [-1.0, 4.0, -1.0, -2.0],
            [-2.0, -1.0, 4.0, -1.0],
            [-1.0, -2.0, -1.0, 4.0],
        ]
    )
    / 6.0
)
Q1_MASS = (
    np.array(
        [
            [4.0, 2.0, 1.0, 2.0],
            [2.0, 4.0, 2.0, 1.0],
            [1.0, 2.0, 4.0, 2.0],
            [2.0, 1.0, 2.0, 4.0],
        ]
    )
    / 36.0
)
EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def assemble_cells(
    mesh: TwoLevelMesh,
    cells: np.ndarray,
    weights: np.ndarray,
    local: np.ndarray,
    nodes: np.ndarray | None = None,
) -> sparse.csr_matrix:
    """
    Sum of weights[c] * local over the given fine cells. Full-size by default; with a
    sorted `nodes` covering the cells, numbered by position in `nodes` instead.
    """
    conn = mesh.cell_nodes[cells]
    n = mesh.n_nodes
    if nodes is not None:
        conn = np.searchsorted(nodes, conn)
        n = nodes.size
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = (np.asarray(weights)[:, None] * local.ravel()[None, :]).ravel()
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def assemble_segments(mesh: TwoLevelMesh, segments: np.ndarray, weights: np.ndarray) -> sparse.csr_matrix:
    n = mesh.n_nodes
    if not len(segments):
        return sparse.csr_matrix((n, n), dtype=np.result_type(weights, np.float64))
    rows = np.repeat(segments, 2, axis=1).ravel()
    cols = np.tile(segments, (1, 2)).ravel()
    vals = ((np.asarray(weights) * mesh.h)[:, None] * EDGE_MASS.ravel()[None, :]).ravel()
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class AssembledProblem:
    """
    Fine Q1 discretization of a(u, v) = (A∇u,∇v) + (Vu,v) - (βu,v)_Γ2.

    Coefficients are constant per fine cell (sampled at the cell center), β constant per
    Γ2 segment (sampled at the segment midpoint).
    """

    mesh: TwoLevelMesh
    spec: ProblemSpec
    A_cells: np.ndarray
    V_cells: np.ndarray
    beta_segments: np.ndarray
    stiffness: sparse.csr_matrix
    mass: sparse.csr_matrix
    mass_V: sparse.csr_matrix
    mass_absV: sparse.csr_matrix
    robin: sparse.csr_matrix
    solver: str = "direct"

    @property
    def dtype(self):
        return self.spec.dtype

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        s = self.stiffness + self.mass_V - self.robin
        return s.astype(self.dtype).tocsr()

    @cached_property
    def energy(self) -> sparse.csr_matrix:
        """Matrix of the energy inner product (A∇u,∇v) + (|V|u,v)."""
        return (self.stiffness + self.mass_absV).tocsr()

    @cached_property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.mesh.boundary.dirichlet)

    @cached_property
    def system(self) -> SparseSystem:
        return SparseSystem(matrix=self.matrix, free=self.free)

    @cached_property
    def factorization(self) -> Factorization:
        logger.debug("factorizing fine system: %d free DOFs", self.free.size)
        return factorize(self.system.reduced, method=self.solver)

    def cells_energy(self, cells: np.ndarray, nodes: np.ndarray | None = None) -> sparse.csr_matrix:
        """Energy inner product restricted to a set of fine cells (on `nodes` when given)."""
        return assemble_cells(self.mesh, cells, self.A_cells[cells], Q1_STIFFNESS, nodes) + assemble_cells(
            self.mesh, cells, np.abs(self.V_cells[cells]) * self.mesh.h**2, Q1_MASS, nodes
        )

    def load(self, f: Source | None = None) -> np.ndarray:
        """Fine load vector (f, φ_i): consistent mass applied to the nodal interpolant of f."""
        f = self.spec.f if f is None else f
        if callable(f):
            values = np.asarray(f(self.mesh.node_coords))
        else:
            values = np.asarray(f)
            if values.shape != (self.mesh.n_nodes,):
                raise ValueError(f"nodal source must have length {self.mesh.n_nodes}, got {values.shape}")
        return self.mass @ values.astype(np.result_type(values.dtype, np.float64))

    def zero(self) -> FineFunction:
        return np.zeros(self.mesh.n_nodes, dtype=self.dtype)


def _check_spec(mesh: TwoLevelMesh, spec: ProblemSpec, A_cells: np.ndarray, V_cells: np.ndarray, beta: np.ndarray) -> None:
    if spec.bc_layout != mesh.bc_layout:
        raise ValueError(f"boundary layout mismatch: spec {spec.bc_layout}, mesh {mesh.bc_layout}")
    if spec.scalar_kind not in ("real", "complex"):
        raise ValueError(f"unknown scalar kind: {spec.scalar_kind}")
    if not np.all(np.isfinite(A_cells)) or A_cells.min() <= 0:
        raise ValueError(f"A must be positive and finite, min={A_cells.min()}")
    if spec.scalar_kind == "real":
        if np.iscomplexobj(V_cells) or np.iscomplexobj(beta) or np.any(beta != 0):
            raise ValueError("scalar-kind mismatch: real problem with complex V or nonzero β")
        if V_cells.size and V_cells.min() < 0:
            raise ValueError("scalar-kind mismatch: real problem requires V >= 0")


def assemble(mesh: TwoLevelMesh, spec: ProblemSpec, *, solver: str = "direct") -> AssembledProblem:
    h = mesh.h
    centers = mesh.cell_centers
    A_cells = np.asarray(spec.A(centers), dtype=float)
    V_cells = np.asarray(spec.V(centers)) if spec.V is not None else np.zeros(mesh.n_cells)

    bmap = mesh.boundary
    beta = np.zeros(len(bmap.segments), dtype=spec.dtype)
    robin = bmap.segment_kind == ROBIN
    if spec.beta is not None and robin.any():
        mid = 0.5 * (mesh.node_coords[bmap.segments[robin, 0]] + mesh.node_coords[bmap.segments[robin, 1]])
        beta[robin] = spec.beta(mid)

    _check_spec(mesh, spec, A_cells, V_cells, beta)

    all_cells = np.arange(mesh.n_cells)
    prob = AssembledProblem(
        mesh=mesh,
        spec=spec,
        A_cells=A_cells,
        V_cells=V_cells.real.astype(float),
        beta_segments=beta,
        stiffness=assemble_cells(mesh, all_cells, A_cells, Q1_STIFFNESS),
        mass=assemble_cells(mesh, all_cells, np.full(mesh.n_cells, h**2), Q1_MASS),
        mass_V=assemble_cells(mesh, all_cells, V_cells.real * h**2, Q1_MASS),
        mass_absV=assemble_cells(mesh, all_cells, np.abs(V_cells.real) * h**2, Q1_MASS),
        robin=assemble_segments(mesh, bmap.segments, beta),
        solver=solver,
    )
    logger.info(
        "assembled %s on %dx%d fine cells (%s, A in [%.3g, %.3g])",
        spec.descriptor,
        mesh.n_fine,
        mesh.n_fine,
        spec.scalar_kind,
        A_cells.min(),
        A_cells.max(),
    )
    return prob


def solve_reference(prob: AssembledProblem, f: Source | None = None, *, load: np.ndarray | None = None) -> FineFunction:
    """Fine Galerkin solution; pass either a source f or a ready load vector."""
    rhs = prob.load(f) if load is None else np.asarray(load)
    free = prob.free
    u = prob.zero().astype(np.result_type(prob.dtype, rhs.dtype))
    u[free] = prob.factorization.solve(rhs[free])
    check_residual(prob.system.reduced, u[free], rhs[free], tol=1e-9)
    return u


def _check_length(prob: AssembledProblem, *ws: np.ndarray) -> None:
    for w in ws:
        if np.shape(w) != (prob.mesh.n_nodes,):
            raise ValueError(f"fine function must have length {prob.mesh.n_nodes}, got {np.shape(w)}")


def bilinear(prob: AssembledProblem, u: FineFunction, v: FineFunction) -> complex | float:
    """a(u, v), conjugate-linear in the test slot v."""
    _check_length(prob, u, v)
    return np.vdot(v, prob.matrix @ u)


def energy_norm(prob: AssembledProblem, w: FineFunction) -> float:
    """sqrt((A∇w,∇w) + |(Vw,w)|)"""
    _check_length(prob, w)
    grad = np.vdot(w, prob.stiffness @ w).real
    pot = abs(np.vdot(w, prob.mass_V @ w))
    return float(np.sqrt(max(grad, 0.0) + pot))


def l2_norm(prob: AssembledProblem, w: FineFunction) -> float:
    _check_length(prob, w)
    return float(np.sqrt(max(np.vdot(w, prob.mass @ w).real, 0.0)))

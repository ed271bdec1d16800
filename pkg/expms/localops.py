from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, TypeVar

import numpy as np
import scipy.linalg as la
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .fem import AssembledProblem, FineFunction
from .mesh import TwoLevelMesh
from .numerics import Factorization, SolverError, factorize, submatrix

logger = logging.getLogger(__name__)

ELLIPTIC_TOL = 1e-8
ELLIPTIC_DENSE_MAX = 50
ELLIPTIC_ARPACK_TOL = 1e-3
ELLIPTIC_MAXITER = 300
ELLIPTIC_STEPS = 30
# H*k above this share of c_loc is logged
C_LOC_WARN = 0.8
# edges per batch when local corrections are summed
ACCUMULATE_CHUNK = 256

T = TypeVar("T")
R = TypeVar("R")


def pmap(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """map() over independent local tasks; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class PatchError(RuntimeError):
    def __init__(self, patch: str, message: str) -> None:
        super().__init__(f"{patch}: {message}")
        self.patch = patch


@dataclass(frozen=True)
class LocalFunction:
    """A fine function stored on a sorted node subset; zero everywhere else."""

    nodes: np.ndarray
    values: np.ndarray

    def to_fine(self, n_nodes: int) -> FineFunction:
        out = np.zeros(n_nodes, dtype=self.values.dtype)
        out[self.nodes] = self.values
        return out

    def add_to(self, out: FineFunction) -> None:
        out[self.nodes] += self.values


@dataclass(frozen=True)
class LocalPatch:
    """
    A union of coarse elements with its fine nodes split into
    - free: solved for (patch interior, plus Γ2 nodes when robin_free)
    - data: prescribed values (the part of the patch boundary carrying skeleton data)
    - Γ1 nodes, fixed to zero (neither free nor data)
    """

    label: str
    elements: tuple[int, ...]
    cells: np.ndarray
    nodes: np.ndarray
    free: np.ndarray
    data: np.ndarray
    coupling: sparse.csr_matrix  # S[free, data]
    factorization: Factorization

    def extend(self, g: FineFunction) -> FineFunction:
        """Discrete harmonic extension of the data-node values of g into the patch."""
        w = np.zeros(g.shape[0], dtype=np.result_type(g.dtype, self.factorization.dtype))
        gd = g[self.data]
        w[self.data] = gd
        if self.free.size and np.any(gd):
            w[self.free] = -self.factorization.solve(self.coupling @ gd)
        return w

    def extend_many(self, gd: np.ndarray) -> np.ndarray:
        """Free-node values of the extensions of several data vectors (columns of gd)."""
        rhs = self.coupling @ gd
        if sparse.issparse(rhs):
            rhs = rhs.toarray()
        return -self.factorization.solve(rhs)

    def bubble_free(self, load: np.ndarray) -> np.ndarray:
        """Free-node values of the local solve with zero data and Γ1 values."""
        return self.factorization.solve(load[self.free])

    def bubble(self, load: np.ndarray) -> FineFunction:
        """Local solve with zero data and Γ1 values; the load enters only through free nodes."""
        w = np.zeros(load.shape[0], dtype=np.result_type(load.dtype, self.factorization.dtype))
        if self.free.size:
            w[self.free] = self.bubble_free(load)
        return w


def _smallest_by_inverse_iteration(fac: Factorization, n: int) -> float:
    x = np.random.default_rng(0).standard_normal(n).astype(fac.dtype)
    x /= np.linalg.norm(x)
    growth = 1.0
    for _ in range(ELLIPTIC_STEPS):
        y = fac.solve(x)
        growth = float(np.linalg.norm(y))
        if not np.isfinite(growth) or growth == 0:
            return 0.0
        x = y / growth
    return 1.0 / growth


def _check_elliptic(label: str, a: sparse.csc_matrix, fac: Factorization) -> None:
    """Smallest-magnitude eigenvalue of the local system, shift-inverted with its own factors."""
    n = a.shape[0]
    scale = spla.norm(a, 1)
    if n <= ELLIPTIC_DENSE_MAX:
        smallest = float(np.abs(la.eigvals(a.toarray())).min())
    else:
        op_inv = spla.LinearOperator(a.shape, matvec=fac.solve, dtype=fac.dtype)
        try:
            vals = spla.eigs(
                a,
                k=1,
                sigma=0,
                which="LM",
                OPinv=op_inv,
                tol=ELLIPTIC_ARPACK_TOL,
                maxiter=ELLIPTIC_MAXITER,
                return_eigenvectors=False,
            )
            smallest = float(np.abs(vals).min())
        except spla.ArpackNoConvergence:
            smallest = _smallest_by_inverse_iteration(fac, n)
            logger.debug("%s: ARPACK did not converge, inverse iteration gives %.3e", label, smallest)
        except (RuntimeError, spla.ArpackError) as e:
            raise PatchError(label, f"patch not elliptic; reduce H ({e})") from e
    if smallest <= ELLIPTIC_TOL * scale:
        raise PatchError(label, f"patch not elliptic; reduce H (|λ_min|={smallest:.3e}, ‖S‖={scale:.3e})")


def patch_masks(mesh: TwoLevelMesh, cells: np.ndarray, nodes: np.ndarray, robin_free: bool) -> tuple[np.ndarray, np.ndarray]:
    """(free, data) masks over `nodes` for the patch made of `cells`."""
    local = np.searchsorted(nodes, mesh.cell_nodes[cells])
    count = np.bincount(local.ravel(), minlength=nodes.size)
    omega_count = mesh.node_cell_count[nodes]
    # every cell of Ω around the node belongs to the patch
    inside = count == omega_count
    dirichlet = mesh.boundary.dirichlet[nodes]
    free = inside & ~dirichlet
    if not robin_free:
        free &= omega_count == 4
    return free, ~free & ~dirichlet


def build_patch(
    prob: AssembledProblem,
    elements: Iterable[int],
    *,
    label: str,
    robin_free: bool,
    check_elliptic: bool = False,
) -> LocalPatch:
    mesh = prob.mesh
    elements = tuple(sorted(elements))
    cells = mesh.elements_cells(elements)
    nodes = mesh.elements_nodes(elements)
    free_mask, data_mask = patch_masks(mesh, cells, nodes, robin_free)

    free = nodes[free_mask]
    data = nodes[data_mask]
    rows = submatrix(prob.matrix, free, nodes)
    a = rows[:, np.flatnonzero(free_mask)].tocsc()
    try:
        fac = factorize(a, method=prob.solver)
    except SolverError as e:
        raise PatchError(label, f"singular local system: {e}") from e
    if check_elliptic and free.size:
        _check_elliptic(label, a, fac)
    return LocalPatch(
        label=label,
        elements=elements,
        cells=cells,
        nodes=nodes,
        free=free,
        data=data,
        coupling=rows[:, np.flatnonzero(data_mask)].tocsr(),
        factorization=fac,
    )


# skeleton traces -------------------------------------------------------------


def coarse_interpolant(mesh: TwoLevelMesh, coarse_values: np.ndarray) -> FineFunction:
    """Bilinear coarse interpolant of coarse nodal values, evaluated at every fine node."""
    n1 = mesh.n_fine + 1
    r = mesh.refine
    i = np.arange(n1)
    ci = np.minimum(i // r, mesh.nc - 1)
    t = (i - ci * r) / r
    c = np.asarray(coarse_values).reshape(mesh.nc + 1, mesh.nc + 1)  # [J, I]
    # rows: y index j, cols: x index i
    cj, tj = ci[:, None], t[:, None]
    cii, ti = ci[None, :], t[None, :]
    out = (
        (1 - tj) * (1 - ti) * c[cj, cii]
        + (1 - tj) * ti * c[cj, cii + 1]
        + tj * (1 - ti) * c[cj + 1, cii]
        + tj * ti * c[cj + 1, cii + 1]
    )
    return out.ravel()


def skeleton_restrict(mesh: TwoLevelMesh, u: FineFunction) -> FineFunction:
    """Keep the values on E_H (every coarse edge), zero elsewhere."""
    out = np.zeros_like(u)
    out[mesh.skeleton_nodes] = u[mesh.skeleton_nodes]
    return out


def nodal_interpolation(mesh: TwoLevelMesh, skel: FineFunction) -> FineFunction:
    """I_H: edgewise-linear interpolation of the coarse-node values of skel, on the skeleton."""
    coarse = np.array([skel[mesh.coarse_node_fine(p)] for p in range(mesh.n_coarse_nodes)])
    return skeleton_restrict(mesh, coarse_interpolant(mesh, coarse))


def edge_restriction(mesh: TwoLevelMesh, u: FineFunction, e: int) -> FineFunction:
    """R_e: trace on e minus the linear interpolant of its endpoint values, zero-extended."""
    tr = mesh.edge_trace_nodes(e)
    out = np.zeros(mesh.n_nodes, dtype=u.dtype)
    out[tr.interior] = _linear_residual(u[tr.nodes])
    return out


def _linear_residual(vals: np.ndarray) -> np.ndarray:
    ramp = np.linspace(0.0, 1.0, vals.size)
    return (vals - ((1 - ramp) * vals[0] + ramp * vals[-1]))[1:-1]


def coarse_hat_values(mesh: TwoLevelMesh, p: int, nodes: np.ndarray) -> np.ndarray:
    """ψ̃_p at the given fine nodes: the coarse hat of p on the skeleton, zero off it."""
    n1, r = mesh.n_fine + 1, mesh.refine
    i, j = nodes % n1, nodes // n1
    pi, pj = p % (mesh.nc + 1), p // (mesh.nc + 1)
    hx = np.clip(1.0 - np.abs(i - pi * r) / r, 0.0, None)
    hy = np.clip(1.0 - np.abs(j - pj * r) / r, 0.0, None)
    on_skeleton = (i % r == 0) | (j % r == 0)
    return np.where(on_skeleton, hx * hy, 0.0)


def coarse_hat_trace(mesh: TwoLevelMesh, p: int) -> FineFunction:
    """ψ̃_p: the edgewise-linear nodal function of coarse node p on E_H."""
    return coarse_hat_values(mesh, p, np.arange(mesh.n_nodes))


def _values_at(nodes: np.ndarray, values: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """ids -> values at the ids found in sorted `nodes`, zero elsewhere."""

    def lookup(ids: np.ndarray) -> np.ndarray:
        out = np.zeros(ids.size, dtype=values.dtype)
        if nodes.size:
            pos = np.minimum(np.searchsorted(nodes, ids), nodes.size - 1)
            hit = nodes[pos] == ids
            out[hit] = values[pos[hit]]
        return out

    return lookup


# local operators -------------------------------------------------------------


class LocalOperators:
    """
    Element and oversampling patches of one assembled problem, with cached factorizations.

    Element problems take Dirichlet data on all of ∂T off Γ1; oversampling problems on ω_e
    take data on the part of ∂ω_e inside Ω and the natural Robin condition on Γ2.
    """

    def __init__(
        self,
        prob: AssembledProblem,
        *,
        threads: int = 1,
        c_loc: float | None = 2.0,
        keep_patches: bool = True,
    ) -> None:
        self.prob = prob
        self.mesh = prob.mesh
        self.threads = max(int(threads), 1)
        self.keep_patches = keep_patches
        self.check_elliptic = prob.spec.is_complex
        self._lock = threading.Lock()
        self._elements: dict[int, LocalPatch] = {}
        self._patches: dict[int, LocalPatch] = {}

        k = prob.spec.k
        if self.check_elliptic and k is not None and c_loc is not None:
            hk = self.mesh.H * k
            if hk > c_loc:
                raise PatchError("mesh", f"patch not elliptic; reduce H (H*k = {hk:.3g} exceeds c_loc = {c_loc})")
            if hk > C_LOC_WARN * c_loc:
                logger.warning(
                    "H*k = %.3g is close to c_loc = %g; local problems may be nearly singular",
                    hk,
                    c_loc,
                )

    # patches

    def element_patch(self, t: int) -> LocalPatch:
        patch = self._elements.get(t)
        if patch is None:
            patch = build_patch(
                self.prob, (t,), label=f"T{t}", robin_free=False, check_elliptic=self.check_elliptic
            )
            with self._lock:
                patch = self._elements.setdefault(t, patch)
        return patch

    def edge_patch(self, e: int) -> LocalPatch:
        patch = self._patches.get(e)
        if patch is None:
            ed = self.mesh.edge(e)
            patch = build_patch(
                self.prob,
                self.mesh.oversampling_domain(e),
                label=ed.label,
                robin_free=True,
                check_elliptic=self.check_elliptic,
            )
            logger.debug("%s: %d free, %d data nodes", ed.label, patch.free.size, patch.data.size)
            if not self.keep_patches:
                return patch
            with self._lock:
                patch = self._patches.setdefault(e, patch)
        return patch

    def prepare(self) -> None:
        """Factorize every element patch up front."""
        pmap(self.element_patch, range(self.mesh.n_elements), self.threads)

    # Q_{E_H}

    def extend(self, skel: FineFunction, elements: Iterable[int] | None = None) -> FineFunction:
        """Element-wise harmonic extension of skeleton data (Γ1 values forced to zero)."""
        skel = np.where(self.mesh.boundary.dirichlet, 0, skel)
        elements = range(self.mesh.n_elements) if elements is None else elements
        out = np.zeros(self.mesh.n_nodes, dtype=np.result_type(skel.dtype, self.prob.dtype))
        for t in elements:
            patch = self.element_patch(t)
            w = patch.extend(skel)
            out[patch.free] = w[patch.free]
            out[patch.data] = w[patch.data]
        return out

    def extend_local(
        self,
        data: Callable[[np.ndarray], np.ndarray],
        elements: Iterable[int],
        dtype=None,
    ) -> LocalFunction:
        """Q_{E_H} on `elements` only; data(ids) returns the skeleton values at fine node ids."""
        elements = tuple(elements)
        nodes = self.mesh.elements_nodes(elements)
        dtype = self.prob.dtype if dtype is None else np.result_type(dtype, self.prob.dtype)
        values = np.zeros(nodes.size, dtype=dtype)
        for t in elements:
            patch = self.element_patch(t)
            gd = data(patch.data)
            values[np.searchsorted(nodes, patch.data)] = gd
            if patch.free.size and np.any(gd):
                values[np.searchsorted(nodes, patch.free)] = -patch.factorization.solve(patch.coupling @ gd)
        return LocalFunction(nodes=nodes, values=values)

    def edge_extension(self, e: int) -> tuple[np.ndarray, np.ndarray]:
        """
        Q_{E_H} on zero-extended data of edge e: returns (nodes, Z) where column c of Z is
        the extension of the unit value at the c-th interior fine node of e, on `nodes`.
        """
        interior = self.mesh.edge_trace_nodes(e).interior
        cols = np.arange(interior.size)
        elements = self.mesh.edge_elements(e)
        nodes = self.mesh.elements_nodes(elements)
        z = np.zeros((nodes.size, interior.size), dtype=self.prob.dtype)
        z[np.searchsorted(nodes, interior), cols] = 1.0
        for t in elements:
            patch = self.element_patch(t)
            gd = np.zeros((patch.data.size, interior.size))
            gd[np.searchsorted(patch.data, interior), cols] = 1.0
            if patch.free.size:
                z[np.searchsorted(nodes, patch.free)] = patch.extend_many(gd)
        return nodes, z

    # splitting

    def bubble(self, load: np.ndarray) -> FineFunction:
        """u^b: element-wise solves with zero skeleton trace."""
        out = np.zeros(self.mesh.n_nodes, dtype=np.result_type(load.dtype, self.prob.dtype))
        for t in range(self.mesh.n_elements):
            patch = self.element_patch(t)
            if patch.free.size:
                out[patch.free] = patch.bubble_free(load)
        return out

    def harmonic_part(self, u: FineFunction) -> FineFunction:
        """u^h = Q_{E_H}(ũ)."""
        return self.extend(skeleton_restrict(self.mesh, u))

    def edge_online(self, e: int, load: np.ndarray) -> LocalFunction:
        """Q_{E_H} R_e u^b_{ω_e} for one edge, on the elements next to e."""
        patch = self.edge_patch(e)
        tr = self.mesh.edge_trace_nodes(e)
        dtype = np.result_type(load.dtype, self.prob.dtype)
        trace = np.zeros(tr.nodes.size, dtype=dtype)
        if patch.free.size:
            trace = _values_at(patch.free, patch.bubble_free(load).astype(dtype, copy=False))(tr.nodes)
        resid = _linear_residual(trace)
        return self.extend_local(_values_at(tr.interior, resid), self.mesh.edge_elements(e), dtype=dtype)

    def online_part(self, load: np.ndarray) -> FineFunction:
        """u^n = u^b + Σ_e Q_{E_H} R_e u^b_{ω_e}, summed in edge order."""
        out = self.bubble(load)
        edges = self.mesh.active_edges
        for start in range(0, len(edges), ACCUMULATE_CHUNK):
            chunk = edges[start : start + ACCUMULATE_CHUNK]
            for part in pmap(lambda e: self.edge_online(e, load), chunk, self.threads):
                part.add_to(out)
        return out


def harmonic_extension(patch: LocalPatch, g: FineFunction) -> FineFunction:
    return patch.extend(g)


def bubble_solve(patch: LocalPatch, load: np.ndarray) -> FineFunction:
    return patch.bubble(load)


def msfem_basis(ops: LocalOperators) -> list[tuple[int, LocalFunction]]:
    """ψ_p = Q_{E_H} ψ̃_p for every active coarse node p, stored on the elements around p."""
    mesh = ops.mesh

    def one(p: int) -> tuple[int, LocalFunction]:
        return p, ops.extend_local(lambda ids: coarse_hat_values(mesh, p, ids), mesh.node_elements(p))

    return pmap(one, mesh.active_nodes, ops.threads)


def online_part(ops: LocalOperators, load: np.ndarray) -> FineFunction:
    return ops.online_part(load)

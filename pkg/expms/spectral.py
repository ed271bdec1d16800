from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .localops import LocalOperators, LocalPatch, pmap
from .numerics import GramError, fix_signs, generalized_hermitian_eig

logger = logging.getLogger(__name__)

__all__ = [
    "DecayFit",
    "EdgeBasis",
    "GramError",
    "HarmonicSpace",
    "build_harmonic_space",
    "compute_edge_bases",
    "decay_report",
    "edge_singular_basis",
    "fit_log_decay",
]

SV_FLOOR = 1e-13


@dataclass(frozen=True)
class HarmonicSpace:
    """
    Discrete U(ω_e): one A,V-harmonic function per data node of the oversampling patch.
    basis[:, c] lives on `nodes` (the closed patch); gram is the H(ω_e) Gram matrix.
    """

    edge: int
    patch: LocalPatch
    nodes: np.ndarray
    basis: np.ndarray
    gram: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class EdgeBasis:
    """
    Left singular vectors of Q_{E_H} R_e on U(ω_e), supported on the elements next to e.

    vectors[:, j] is v_{e,j+1} on `nodes`, normalized in ‖·‖_H(Ω); values are the matching
    singular values, spectrum all singular values above the floor.
    """

    edge: int
    nodes: np.ndarray
    vectors: np.ndarray
    values: np.ndarray
    spectrum: np.ndarray

    @property
    def m(self) -> int:
        return self.vectors.shape[1]

    def truncate(self, m: int) -> "EdgeBasis":
        return EdgeBasis(
            edge=self.edge,
            nodes=self.nodes,
            vectors=self.vectors[:, :m],
            values=self.values[:m],
            spectrum=self.spectrum,
        )


def build_harmonic_space(ops: LocalOperators, e: int) -> HarmonicSpace:
    patch = ops.edge_patch(e)
    nodes = patch.nodes
    nd = patch.data.size
    basis = np.zeros((nodes.size, nd), dtype=ops.prob.dtype)
    basis[np.searchsorted(nodes, patch.data), np.arange(nd)] = 1.0
    if patch.free.size and nd:
        basis[np.searchsorted(nodes, patch.free)] = patch.extend_many(np.eye(nd))

    energy = ops.prob.cells_energy(patch.cells, nodes)
    gram = basis.conj().T @ (energy @ basis)
    logger.debug("%s: harmonic space of dim %d on %d fine nodes", patch.label, nd, nodes.size)
    return HarmonicSpace(edge=e, patch=patch, nodes=nodes, basis=basis, gram=gram)


def _empty_basis(ops: LocalOperators, e: int) -> EdgeBasis:
    mesh = ops.mesh
    nodes = mesh.elements_nodes(mesh.edge_elements(e))
    return EdgeBasis(
        edge=e,
        nodes=nodes,
        vectors=np.zeros((nodes.size, 0), dtype=ops.prob.dtype),
        values=np.zeros(0),
        spectrum=np.zeros(0),
    )


def edge_singular_basis(space: HarmonicSpace, ops: LocalOperators, m: int) -> EdgeBasis:
    mesh = ops.mesh
    e = space.edge
    r = mesh.refine
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > r - 1:
        raise ValueError(f"m={m} exceeds the {r - 1} fine DOFs inside edge {e}")
    if space.dim == 0:
        # ω_e = Ω without Γ2: U(ω_e) = {0}
        logger.debug("%s: empty harmonic space, no edge functions", mesh.edge(e).label)
        return _empty_basis(ops, e)

    # R_e on the harmonic basis: trace on e minus the linear interpolant of its ends
    tr = mesh.edge_trace_nodes(e)
    trace = space.basis[np.searchsorted(space.nodes, tr.nodes)]
    ramp = np.linspace(0.0, 1.0, r + 1)[:, None]
    resid = trace - (1 - ramp) * trace[0][None, :] - ramp * trace[-1][None, :]
    p = resid[1:-1]

    nodes, z = ops.edge_extension(e)
    cells = mesh.elements_cells(mesh.edge_elements(e))
    energy = ops.prob.cells_energy(cells, nodes)
    gram_out = z.conj().T @ (energy @ z)

    stiff = p.conj().T @ gram_out @ p
    n_pairs = min(space.dim, r - 1)
    try:
        lam2, coef = generalized_hermitian_eig(stiff, space.gram, n_pairs)
    except GramError as err:
        raise GramError(f"{mesh.edge(e).label}: {err}") from err

    sv = np.sqrt(np.clip(lam2, 0.0, None))
    if sv[0] <= 0:
        logger.debug("%s: Q R_e vanishes on U(ω_e)", mesh.edge(e).label)
        return _empty_basis(ops, e)
    keep = int(np.count_nonzero(sv > SV_FLOOR * sv[0]))
    mm = min(m, keep)
    if mm < m:
        logger.debug("%s: only %d singular values above floor, using %d of %d", mesh.edge(e).label, keep, mm, m)

    data = p @ coef[:, :mm] / sv[:mm]
    vectors = z @ data
    norms = np.sqrt(np.einsum("ij,ij->j", vectors.conj(), energy @ vectors).real)
    vectors = fix_signs(vectors / norms)
    return EdgeBasis(edge=e, nodes=nodes, vectors=vectors, values=sv[:mm], spectrum=sv[:keep])


def compute_edge_bases(ops: LocalOperators, m: int) -> list[EdgeBasis]:
    """Top-m edge bases of every active edge, in edge order."""
    if m <= 0:
        return []

    def one(e: int) -> EdgeBasis:
        return edge_singular_basis(build_harmonic_space(ops, e), ops, m)

    bases = pmap(one, ops.mesh.active_edges, ops.threads)
    short = [b for b in bases if b.m < m]
    if short:
        logger.warning(
            "%d of %d edges have fewer than m=%d singular values above the %.0e floor (smallest kept: %d)",
            len(short),
            len(bases),
            m,
            SV_FLOOR,
            min(b.m for b in short),
        )
    return bases


@dataclass(frozen=True)
class DecayFit:
    """log y ≈ intercept + slope * x; b = -slope when x = m^(1/3)."""

    values: np.ndarray
    slope: float
    intercept: float
    residual: float
    r2: float

    @property
    def b(self) -> float:
        return -self.slope


def fit_log_decay(x: np.ndarray, y: np.ndarray) -> DecayFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ly = np.log(y)
    design = np.stack([np.ones_like(x), x], axis=1)
    (intercept, slope), *_ = np.linalg.lstsq(design, ly, rcond=None)
    pred = intercept + slope * x
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(
        values=y,
        slope=float(slope),
        intercept=float(intercept),
        residual=float(np.sqrt(ss_res / x.size)),
        r2=r2,
    )


def decay_report(basis: EdgeBasis | np.ndarray, max_terms: int | None = None) -> DecayFit:
    """Fit log λ_m ≈ log C - b m^(1/3) over the singular values above the floor."""
    lam = np.asarray(basis.spectrum if isinstance(basis, EdgeBasis) else basis, dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        raise ValueError("decay report needs positive singular values")
    lam = lam[lam > SV_FLOOR * lam[0]]
    if max_terms is not None:
        lam = lam[:max_terms]
    if lam.size < 3:
        raise ValueError(f"decay report needs >= 3 singular values above floor, got {lam.size}")
    m = np.arange(1, lam.size + 1)
    return fit_log_decay(np.cbrt(m), lam)

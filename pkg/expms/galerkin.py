from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sparse

from .fem import AssembledProblem, FineFunction, Source, energy_norm, l2_norm
from .localops import LocalOperators, msfem_basis
from .numerics import Factorization, check_residual, factorize, submatrix
from .spectral import EdgeBasis, compute_edge_bases

logger = logging.getLogger(__name__)

DENSE_COARSE_MAX = 5000
ENRICH_DROP = 1e-12


@dataclass(frozen=True)
class OfflineSpace:
    """
    The multiscale space S = span{ψ_p} + span{v_{e,j}} with its coarse Galerkin matrix.

    basis is the (n_fine_nodes, dim) synthesis map; columns are ordered as `labels`
    (all nodal functions, then edge functions grouped by edge).
    """

    prob: AssembledProblem
    ops: LocalOperators
    m: int
    labels: tuple[str, ...]
    basis: sparse.csc_matrix
    matrix: np.ndarray | sparse.csc_matrix
    factorization: Factorization
    n_nodal: int
    edge_bases: tuple[EdgeBasis, ...] = ()
    conjugate_enrich: bool = False
    seconds: float = 0.0

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def column(self, c: int) -> FineFunction:
        return self.basis[:, c].toarray().ravel()


def _enrich_block(prob: AssembledProblem, nodes: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Energy-orthonormal real basis of span{Re w, Im w : w in block}."""
    if block.shape[1] == 0:
        return np.zeros(block.shape)
    real = np.concatenate([block.real, block.imag], axis=1)
    energy = submatrix(prob.energy, nodes, nodes)
    gram = real.T @ (energy @ real)
    gram = 0.5 * (gram + gram.T)
    vals, vecs = la.eigh(gram)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > ENRICH_DROP * max(vals[0], 0.0)
    return real @ (vecs[:, keep] / np.sqrt(vals[keep]))


def _columns(
    prob: AssembledProblem,
    blocks: Sequence[tuple[str, np.ndarray, np.ndarray]],
    conjugate_enrich: bool,
) -> tuple[list[str], sparse.csc_matrix]:
    rows, cols, vals, labels = [], [], [], []
    for name, nodes, block in blocks:
        if conjugate_enrich:
            block = _enrich_block(prob, nodes, block)
        for j in range(block.shape[1]):
            col = block[:, j]
            nz = np.flatnonzero(col)
            rows.append(nodes[nz])
            cols.append(np.full(nz.size, len(labels)))
            vals.append(col[nz])
            labels.append(name if name.startswith("psi(") and not conjugate_enrich else f"{name}[{j}]")
    n = prob.mesh.n_nodes
    if not labels:
        return labels, sparse.csc_matrix((n, 0), dtype=prob.dtype)
    phi = sparse.coo_matrix(
        (np.concatenate(vals).astype(prob.dtype), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, len(labels)),
    )
    return labels, phi.tocsc()


def build_offline(
    prob: AssembledProblem,
    m: int,
    *,
    ops: LocalOperators | None = None,
    edge_bases: Sequence[EdgeBasis] | None = None,
    threads: int = 1,
    c_loc: float | None = 2.0,
    conjugate_enrich: bool = False,
) -> OfflineSpace:
    """
    Synthesize ψ_p and the top-m edge functions on the fine grid and factorize the coarse matrix.
    Precomputed edge_bases (from a larger m) are truncated instead of recomputed.
    """
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    start = time.perf_counter()
    ops = ops or LocalOperators(prob, threads=threads, c_loc=c_loc)
    mesh = prob.mesh
    enrich = conjugate_enrich and prob.spec.is_complex
    if conjugate_enrich and not enrich:
        logger.debug("conjugate enrichment ignored for real problem %s", prob.spec.descriptor)

    blocks: list[tuple[str, np.ndarray, np.ndarray]] = []
    for p, psi in msfem_basis(ops):
        blocks.append((f"psi({p})", psi.nodes, psi.values[:, None]))
    n_nodal = len(blocks)

    if m == 0:
        bases: list[EdgeBasis] = []
    elif edge_bases is None:
        bases = compute_edge_bases(ops, m)
    else:
        bases = [eb.truncate(m) for eb in edge_bases]
        if any(eb.m < m and eb.spectrum.size > eb.m for eb in bases):
            raise ValueError(f"precomputed edge bases hold fewer than m={m} vectors")
    for eb in bases:
        blocks.append((mesh.edge(eb.edge).label, eb.nodes, eb.vectors))

    labels, phi = _columns(prob, blocks, enrich)
    if enrich:
        n_nodal = sum(1 for lb in labels if lb.startswith("psi("))

    k = (phi.conj().T @ (prob.matrix @ phi)).tocsc()
    if k.shape[0] <= DENSE_COARSE_MAX:
        k = k.toarray()
    fac = factorize(k, method="direct")
    seconds = time.perf_counter() - start
    logger.info(
        "offline space H=1/%d m=%d: dim(S)=%d (%d nodal) in %.2fs",
        mesh.nc,
        m,
        len(labels),
        n_nodal,
        seconds,
    )
    return OfflineSpace(
        prob=prob,
        ops=ops,
        m=m,
        labels=tuple(labels),
        basis=phi,
        matrix=k,
        factorization=fac,
        n_nodal=n_nodal,
        edge_bases=tuple(bases),
        conjugate_enrich=enrich,
        seconds=seconds,
    )


def solve_effective(
    off: OfflineSpace,
    f: Source | None = None,
    u_n: FineFunction | None = None,
    *,
    load: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficients of u_S from a(u_S, φ_p) = (f, φ_p) - a(u^n, φ_p); u_n=None means u^n = 0."""
    prob = off.prob
    rhs = prob.load(f) if load is None else np.asarray(load)
    if u_n is not None:
        rhs = rhs - prob.matrix @ u_n
    r = off.basis.conj().T @ rhs
    c = off.factorization.solve(r)
    check_residual(off.matrix, c, r)
    return c


def reconstruct(off: OfflineSpace, coeffs: np.ndarray, u_n: FineFunction | None = None) -> FineFunction:
    u = off.basis @ np.asarray(coeffs)
    if u_n is not None:
        u = u + u_n
    return np.asarray(u).ravel()


@dataclass(frozen=True)
class Solution:
    u: FineFunction
    coeffs: np.ndarray
    u_n: FineFunction | None
    t_online: float
    t_coarse: float


def solve(
    off: OfflineSpace,
    f: Source | None = None,
    *,
    online_part: bool = True,
    load: np.ndarray | None = None,
) -> Solution:
    """One online query against a built OfflineSpace."""
    prob = off.prob
    rhs = prob.load(f) if load is None else np.asarray(load)
    start = time.perf_counter()
    u_n = off.ops.online_part(rhs) if online_part else None
    t_online = time.perf_counter() - start
    start = time.perf_counter()
    c = solve_effective(off, u_n=u_n, load=rhs)
    t_coarse = time.perf_counter() - start
    return Solution(u=reconstruct(off, c, u_n), coeffs=c, u_n=u_n, t_online=t_online, t_coarse=t_coarse)


@dataclass(frozen=True)
class SolveReport:
    scenario: str
    H: float
    h: float
    m: int
    dim: int
    e_l2: float
    e_h: float
    timings: dict[str, float] = field(default_factory=dict)
    flags: str = ""


def evaluate_errors(
    prob: AssembledProblem,
    u_sol: FineFunction,
    u_ref: FineFunction,
    *,
    m: int = 0,
    dim: int = 0,
    timings: dict[str, float] | None = None,
    flags: str = "",
) -> SolveReport:
    ref_h = energy_norm(prob, u_ref)
    ref_l2 = l2_norm(prob, u_ref)
    if ref_h == 0 or ref_l2 == 0:
        raise ValueError("reference solution has zero norm")
    diff = np.asarray(u_ref) - np.asarray(u_sol)
    return SolveReport(
        scenario=prob.spec.descriptor,
        H=prob.mesh.H,
        h=prob.mesh.h,
        m=m,
        dim=dim,
        e_l2=l2_norm(prob, diff) / ref_l2,
        e_h=energy_norm(prob, diff) / ref_h,
        timings=dict(timings or {}),
        flags=flags,
    )

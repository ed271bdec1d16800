from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

BC_LAYOUTS = ("dirichlet", "mixed")

HORIZONTAL = 0
VERTICAL = 1

# Γ2 segment kinds
NEUMANN = "neumann"
ROBIN = "robin"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CoarseEdge:
    id: int
    orientation: int  # HORIZONTAL | VERTICAL
    i: int
    j: int
    side: str | None  # "bottom" | "top" | "left" | "right" for boundary edges
    active: bool

    @property
    def boundary(self) -> bool:
        return self.side is not None

    @property
    def label(self) -> str:
        return f"e({self.orientation},{self.i},{self.j})"


@dataclass(frozen=True)
class EdgeTrace:
    edge: int
    nodes: np.ndarray  # refine+1 fine node ids in coordinate order
    dirichlet: np.ndarray  # bool per node

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]


@dataclass(frozen=True)
class BoundaryMap:
    """
    Γ1/Γ2 split of ∂Ω on the fine grid.

    - dirichlet: bool per fine node (Γ1, corners where Γ1 meets Γ2 included)
    - segments: (n, 2) fine node pairs of the Γ2 boundary segments
    - segment_kind: NEUMANN | ROBIN per segment
    """

    layout: str
    dirichlet: np.ndarray
    segments: np.ndarray
    segment_kind: np.ndarray
    gamma2_sides: tuple[str, ...]

    @property
    def robin_segments(self) -> np.ndarray:
        return self.segments[self.segment_kind == ROBIN]

    def side_kind(self, side: str) -> str:
        if side not in self.gamma2_sides:
            return "dirichlet"
        return NEUMANN if (self.layout == "mixed" and side == "top") else ROBIN


def _side_sets(layout: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if layout == "dirichlet":
        return ("bottom", "top", "left", "right"), ()
    if layout == "mixed":
        # bottom: Dirichlet, top: Neumann, left/right: Robin
        return ("bottom",), ("top", "left", "right")
    raise ValueError(f"unknown bc_layout: {layout} (supported: {', '.join(BC_LAYOUTS)})")


def build_boundary_map(n_fine: int, layout: str) -> BoundaryMap:
    gamma1, gamma2 = _side_sets(layout)
    n1 = n_fine + 1
    ii, jj = np.meshgrid(np.arange(n1), np.arange(n1))
    ii = ii.ravel()
    jj = jj.ravel()
    on_side = {
        "bottom": jj == 0,
        "top": jj == n_fine,
        "left": ii == 0,
        "right": ii == n_fine,
    }
    dirichlet = np.zeros(n1 * n1, dtype=bool)
    for side in gamma1:
        dirichlet |= on_side[side]

    segs: list[np.ndarray] = []
    kinds: list[str] = []
    k = np.arange(n_fine)
    for side in gamma2:
        if side == "bottom":
            a, b = k, k + 1
        elif side == "top":
            a, b = n_fine * n1 + k, n_fine * n1 + k + 1
        elif side == "left":
            a, b = k * n1, (k + 1) * n1
        else:
            a, b = k * n1 + n_fine, (k + 1) * n1 + n_fine
        segs.append(np.stack([a, b], axis=1))
        kind = NEUMANN if (layout == "mixed" and side == "top") else ROBIN
        kinds.extend([kind] * n_fine)

    segments = np.concatenate(segs) if segs else np.zeros((0, 2), dtype=int)
    return BoundaryMap(
        layout=layout,
        dirichlet=_frozen(dirichlet),
        segments=_frozen(segments.astype(np.int64)),
        segment_kind=_frozen(np.array(kinds, dtype=object)),
        gamma2_sides=gamma2,
    )


@dataclass(frozen=True)
class TwoLevelMesh:
    """
    Uniform two-level quadrilateral mesh of [0,1]^2.

    nc coarse cells per side, each split into refine x refine bilinear fine cells.
    Fine node (i, j) has id j*(N+1)+i, fine cell (i, j) has id j*N+i, coarse element
    (I, J) has id J*nc+I, coarse node (I, J) has id J*(nc+1)+I.
    """

    nc: int
    refine: int
    bc_layout: str = "dirichlet"
    layers: int = 1

    @property
    def n_fine(self) -> int:
        return self.nc * self.refine

    @property
    def H(self) -> float:
        return 1.0 / self.nc

    @property
    def h(self) -> float:
        return 1.0 / self.n_fine

    @property
    def n_nodes(self) -> int:
        return (self.n_fine + 1) ** 2

    @property
    def n_cells(self) -> int:
        return self.n_fine**2

    @property
    def n_elements(self) -> int:
        return self.nc**2

    def node_id(self, i: int, j: int) -> int:
        return j * (self.n_fine + 1) + i

    @cached_property
    def boundary(self) -> BoundaryMap:
        return build_boundary_map(self.n_fine, self.bc_layout)

    @cached_property
    def node_coords(self) -> np.ndarray:
        x = np.arange(self.n_fine + 1) / self.n_fine
        xx, yy = np.meshgrid(x, x)
        return _frozen(np.stack([xx.ravel(), yy.ravel()], axis=1))

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        """(n_cells, 4) node ids, counter-clockwise from the lower-left corner."""
        n = self.n_fine
        ci, cj = np.meshgrid(np.arange(n), np.arange(n))
        ll = (cj * (n + 1) + ci).ravel()
        return _frozen(np.stack([ll, ll + 1, ll + n + 2, ll + n + 1], axis=1))

    @cached_property
    def cell_centers(self) -> np.ndarray:
        n = self.n_fine
        x = (np.arange(n) + 0.5) / n
        xx, yy = np.meshgrid(x, x)
        return _frozen(np.stack([xx.ravel(), yy.ravel()], axis=1))

    @cached_property
    def node_cell_count(self) -> np.ndarray:
        """Number of fine cells of Ω touching each node (4 inside, 2 on sides, 1 at corners)."""
        return _frozen(np.bincount(self.cell_nodes.ravel(), minlength=self.n_nodes))

    @cached_property
    def cell_element(self) -> np.ndarray:
        n = self.n_fine
        ci, cj = np.meshgrid(np.arange(n), np.arange(n))
        return _frozen(((cj // self.refine) * self.nc + ci // self.refine).ravel())

    @cached_property
    def element_cell_table(self) -> np.ndarray:
        """(n_elements, refine²) fine cell ids of each coarse element, row-major."""
        r, n = self.refine, self.n_fine
        k = np.arange(r)
        local = (k[:, None] * n + k[None, :]).ravel()
        ei, ej = np.meshgrid(np.arange(self.nc), np.arange(self.nc))
        corner = (ej * r * n + ei * r).ravel()
        return _frozen(corner[:, None] + local[None, :])

    @cached_property
    def element_node_table(self) -> np.ndarray:
        """(n_elements, (refine+1)²) fine node ids of each closed coarse element, row-major."""
        r, n1 = self.refine, self.n_fine + 1
        k = np.arange(r + 1)
        local = (k[:, None] * n1 + k[None, :]).ravel()
        ei, ej = np.meshgrid(np.arange(self.nc), np.arange(self.nc))
        corner = (ej * r * n1 + ei * r).ravel()
        return _frozen(corner[:, None] + local[None, :])

    def element_cells(self, t: int) -> np.ndarray:
        self._check_element(t)
        return self.element_cell_table[t]

    def element_nodes(self, t: int) -> np.ndarray:
        """Fine nodes of the closed element, row-major."""
        self._check_element(t)
        return self.element_node_table[t]

    def elements_nodes(self, elements) -> np.ndarray:
        return np.unique(self.element_node_table[self._element_ids(elements)])

    def elements_cells(self, elements) -> np.ndarray:
        return np.sort(self.element_cell_table[self._element_ids(elements)], axis=None)

    def _element_ids(self, elements) -> np.ndarray:
        ids = np.asarray(list(elements), dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_elements):
            bad = ids[(ids < 0) | (ids >= self.n_elements)][0]
            raise KeyError(f"unknown element id: {bad}")
        return ids

    def _check_element(self, t: int) -> None:
        if not 0 <= t < self.n_elements:
            raise KeyError(f"unknown element id: {t}")

    # coarse nodes -----------------------------------------------------------

    @property
    def n_coarse_nodes(self) -> int:
        return (self.nc + 1) ** 2

    def coarse_node_fine(self, p: int) -> int:
        pi, pj = p % (self.nc + 1), p // (self.nc + 1)
        return self.node_id(pi * self.refine, pj * self.refine)

    @cached_property
    def active_nodes(self) -> tuple[int, ...]:
        """Coarse nodes off Γ1, row-major."""
        d = self.boundary.dirichlet
        return tuple(p for p in range(self.n_coarse_nodes) if not d[self.coarse_node_fine(p)])

    def node_elements(self, p: int) -> tuple[int, ...]:
        pi, pj = p % (self.nc + 1), p // (self.nc + 1)
        out = []
        for ej in (pj - 1, pj):
            for ei in (pi - 1, pi):
                if 0 <= ei < self.nc and 0 <= ej < self.nc:
                    out.append(ej * self.nc + ei)
        return tuple(out)

    # coarse edges -----------------------------------------------------------

    @cached_property
    def edges(self) -> tuple[CoarseEdge, ...]:
        nc = self.nc
        gamma2 = self.boundary.gamma2_sides
        out: list[CoarseEdge] = []
        for j in range(nc + 1):
            for i in range(nc):
                side = "bottom" if j == 0 else "top" if j == nc else None
                out.append(CoarseEdge(len(out), HORIZONTAL, i, j, side, side is None or side in gamma2))
        for j in range(nc):
            for i in range(nc + 1):
                side = "left" if i == 0 else "right" if i == nc else None
                out.append(CoarseEdge(len(out), VERTICAL, i, j, side, side is None or side in gamma2))
        return tuple(out)

    @cached_property
    def interior_edges(self) -> tuple[int, ...]:
        return tuple(e.id for e in self.edges if not e.boundary)

    @cached_property
    def active_edges(self) -> tuple[int, ...]:
        return tuple(e.id for e in self.edges if e.active)

    def edge(self, e: int) -> CoarseEdge:
        if not 0 <= e < len(self.edges):
            raise KeyError(f"unknown edge id: {e}")
        return self.edges[e]

    def edge_elements(self, e: int) -> tuple[int, ...]:
        """Coarse elements sharing edge e (2 inside, 1 on ∂Ω)."""
        ed = self.edge(e)
        nc = self.nc
        if ed.orientation == HORIZONTAL:
            cand = [(ed.i, ed.j - 1), (ed.i, ed.j)]
        else:
            cand = [(ed.i - 1, ed.j), (ed.i, ed.j)]
        return tuple(cj * nc + ci for ci, cj in cand if 0 <= ci < nc and 0 <= cj < nc)

    def edge_endpoints(self, e: int) -> tuple[int, int]:
        """Coarse node ids at the ends of e, in coordinate order."""
        ed = self.edge(e)
        n1 = self.nc + 1
        a = ed.j * n1 + ed.i
        return (a, a + 1) if ed.orientation == HORIZONTAL else (a, a + n1)

    def edge_trace_nodes(self, e: int) -> EdgeTrace:
        ed = self.edge(e)
        r = self.refine
        k = np.arange(r + 1)
        if ed.orientation == HORIZONTAL:
            nodes = ed.j * r * (self.n_fine + 1) + ed.i * r + k
        else:
            nodes = (ed.j * r + k) * (self.n_fine + 1) + ed.i * r
        return EdgeTrace(edge=e, nodes=nodes, dirichlet=self.boundary.dirichlet[nodes].copy())

    def oversampling_domain(self, e: int, layers: int | None = None) -> tuple[int, ...]:
        """ω_e: coarse elements within `layers` layers of e (closure meets e for one layer), clipped to Ω."""
        ed = self.edge(e)
        if not ed.active:
            raise ValueError(f"edge {e} is not an active skeleton edge")
        ell = self.layers if layers is None else layers
        if ed.orientation == HORIZONTAL:
            irange = range(ed.i - ell, ed.i + ell + 1)
            jrange = range(ed.j - ell, ed.j + ell)
        else:
            irange = range(ed.i - ell, ed.i + ell)
            jrange = range(ed.j - ell, ed.j + ell + 1)
        nc = self.nc
        return tuple(cj * nc + ci for cj in jrange for ci in irange if 0 <= ci < nc and 0 <= cj < nc)

    @cached_property
    def skeleton_nodes(self) -> np.ndarray:
        """Fine nodes lying on some coarse edge (all of ∂T for every T)."""
        n1 = self.n_fine + 1
        ii, jj = np.meshgrid(np.arange(n1), np.arange(n1))
        mask = (ii % self.refine == 0) | (jj % self.refine == 0)
        return _frozen(np.flatnonzero(mask.ravel()))


def build_mesh(nc: int, refine: int, bc_layout: str = "dirichlet", *, layers: int = 1) -> TwoLevelMesh:
    if int(nc) != nc or nc < 2:
        raise ValueError(f"nc must be an integer >= 2: {nc}")
    if int(refine) != refine or refine < 2:
        raise ValueError(f"refine must be an integer >= 2: {refine}")
    if bc_layout not in BC_LAYOUTS:
        raise ValueError(f"unknown bc_layout: {bc_layout} (supported: {', '.join(BC_LAYOUTS)})")
    if layers < 1:
        raise ValueError(f"layers must be >= 1: {layers}")
    mesh = TwoLevelMesh(nc=int(nc), refine=int(refine), bc_layout=bc_layout, layers=int(layers))
    logger.debug(
        "mesh nc=%d refine=%d layout=%s: %d elements, %d active nodes, %d active edges",
        mesh.nc,
        mesh.refine,
        bc_layout,
        mesh.n_elements,
        len(mesh.active_nodes),
        len(mesh.active_edges),
    )
    return mesh

from __future__ import annotations

import numpy as np
import pytest

from expms.mesh import HORIZONTAL, NEUMANN, ROBIN, VERTICAL, build_mesh


def _edge_id(mesh, orientation, i, j):
    for e in mesh.edges:
        if (e.orientation, e.i, e.j) == (orientation, i, j):
            return e.id
    raise AssertionError("edge not found")


def test_counts_all_dirichlet():
    mesh = build_mesh(4, 4)
    assert mesh.n_elements == 16
    assert len(mesh.interior_edges) == 2 * 4 * 3
    assert len(mesh.active_nodes) == 9
    assert len(mesh.edges) == 2 * 4 * 5
    assert mesh.active_edges == mesh.interior_edges


def test_fine_resolution_1024():
    mesh = build_mesh(32, 32)
    assert mesh.H == pytest.approx(2.0**-5)
    assert mesh.h == pytest.approx(2.0**-10)
    assert mesh.n_fine == 1024


def test_mixed_layout_boundary():
    mesh = build_mesh(2, 2, "mixed")
    bmap = mesh.boundary
    n1 = mesh.n_fine + 1
    bottom = np.arange(n1)
    top = mesh.n_fine * n1 + np.arange(n1)
    assert bmap.dirichlet[bottom].all()
    assert not bmap.dirichlet[top].any()
    assert bmap.dirichlet.sum() == n1
    assert bmap.side_kind("top") == NEUMANN
    assert bmap.side_kind("left") == ROBIN
    assert bmap.side_kind("right") == ROBIN
    assert bmap.side_kind("bottom") == "dirichlet"
    assert len(bmap.robin_segments) == 2 * mesh.n_fine
    # coarse nodes on the bottom row are not active
    assert mesh.active_nodes == (3, 4, 5, 6, 7, 8)
    # interior edges plus the Γ2 edges on top/left/right
    assert len(mesh.active_edges) == len(mesh.interior_edges) + 3 * 2


@pytest.mark.parametrize(
    "nc,refine,layout",
    [(1, 4, "dirichlet"), (4, 1, "dirichlet"), (4, 4, "periodic"), (0, 0, "dirichlet")],
)
def test_build_mesh_rejects(nc, refine, layout):
    with pytest.raises(ValueError):
        build_mesh(nc, refine, layout)


def test_elements_tile_the_square():
    mesh = build_mesh(4, 3)
    counts = np.bincount(mesh.cell_element, minlength=mesh.n_elements)
    assert (counts == 9).all()
    cells = np.concatenate([mesh.element_cells(t) for t in range(mesh.n_elements)])
    assert np.array_equal(np.sort(cells), np.arange(mesh.n_cells))


def test_edge_sharing():
    mesh = build_mesh(4, 2)
    for e in mesh.edges:
        n = len(mesh.edge_elements(e.id))
        assert n == (1 if e.boundary else 2)


def test_cell_nodes_counter_clockwise():
    mesh = build_mesh(2, 2)
    x = mesh.node_coords[mesh.cell_nodes[0]]
    np.testing.assert_allclose(x, [[0, 0], [0.25, 0], [0.25, 0.25], [0, 0.25]])


def test_oversampling_interior_horizontal():
    mesh = build_mesh(8, 2)
    e = _edge_id(mesh, HORIZONTAL, 3, 4)
    omega = mesh.oversampling_domain(e)
    assert len(omega) == 6
    assert set(omega) == {j * 8 + i for i in (2, 3, 4) for j in (3, 4)}


def test_oversampling_vertical_touching_top():
    mesh = build_mesh(8, 2)
    e = _edge_id(mesh, VERTICAL, 4, 7)
    assert len(mesh.oversampling_domain(e)) == 4


def test_oversampling_small_mesh_is_everything():
    mesh = build_mesh(2, 2)
    for e in mesh.interior_edges:
        assert sorted(mesh.oversampling_domain(e)) == [0, 1, 2, 3]


def test_oversampling_layers():
    mesh = build_mesh(8, 2, layers=2)
    e = _edge_id(mesh, HORIZONTAL, 3, 4)
    assert len(mesh.oversampling_domain(e)) == 5 * 4
    assert len(mesh.oversampling_domain(e, layers=1)) == 6


def test_oversampling_errors():
    mesh = build_mesh(4, 2)
    with pytest.raises(KeyError):
        mesh.oversampling_domain(10_000)
    boundary = next(e.id for e in mesh.edges if e.boundary)
    with pytest.raises(ValueError):
        mesh.oversampling_domain(boundary)


@pytest.mark.parametrize("refine", [2, 4])
def test_edge_trace_nodes(refine):
    mesh = build_mesh(2, refine)
    tr = mesh.edge_trace_nodes(mesh.interior_edges[0])
    assert tr.nodes.size == refine + 1
    assert tr.interior.size == refine - 1
    # endpoints are coarse nodes
    a, b = mesh.edge_endpoints(tr.edge)
    assert tr.nodes[0] == mesh.coarse_node_fine(a)
    assert tr.nodes[-1] == mesh.coarse_node_fine(b)
    assert not tr.dirichlet[1:-1].any()


def test_edge_trace_gamma2_endpoint_flagged():
    mesh = build_mesh(2, 4, "mixed")
    e = _edge_id(mesh, VERTICAL, 0, 0)
    assert mesh.edge(e).active
    tr = mesh.edge_trace_nodes(e)
    assert tr.nodes.size == 5
    assert tr.dirichlet[0]
    assert not tr.dirichlet[1:].any()


def test_edge_trace_unknown():
    with pytest.raises(KeyError):
        build_mesh(2, 2).edge_trace_nodes(-1)


def test_skeleton_nodes():
    mesh = build_mesh(2, 2)
    # 5x5 fine nodes, only the central cell midpoints (1,1),(3,1),(1,3),(3,3) are off the skeleton
    assert mesh.skeleton_nodes.size == 25 - 4

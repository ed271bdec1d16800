from __future__ import annotations

import logging

import numpy as np
import pytest
import scipy.sparse as sparse

from expms.coeffs import ProblemSpec, constant, make_scenario
from expms.fem import assemble, energy_norm, solve_reference
from expms.localops import (
    LocalOperators,
    PatchError,
    bubble_solve,
    coarse_interpolant,
    coarse_hat_trace,
    edge_restriction,
    harmonic_extension,
    msfem_basis,
    _smallest_by_inverse_iteration,
    nodal_interpolation,
    online_part,
    patch_masks,
    pmap,
    skeleton_restrict,
)
from expms.mesh import build_mesh
from expms.numerics import factorize


def test_pmap_keeps_order():
    assert pmap(lambda x: x * x, range(10), threads=4) == [x * x for x in range(10)]


def test_extension_of_zero(laplace_ops):
    patch = laplace_ops.element_patch(5)
    g = np.zeros(laplace_ops.mesh.n_nodes)
    assert not np.any(harmonic_extension(patch, g))


def test_extension_reproduces_bilinear(laplace_ops):
    mesh = laplace_ops.mesh
    xy = mesh.node_coords[:, 0] * mesh.node_coords[:, 1]
    # element (1, 1) of the 4x4 mesh does not touch ∂Ω
    patch = laplace_ops.element_patch(5)
    w = harmonic_extension(patch, xy)
    nodes = mesh.element_nodes(5)
    np.testing.assert_allclose(w[nodes], xy[nodes], atol=1e-12)


def test_extension_of_constant(periodic_ops):
    mesh = periodic_ops.mesh
    patch = periodic_ops.element_patch(5)
    w = harmonic_extension(patch, np.ones(mesh.n_nodes))
    np.testing.assert_allclose(w[mesh.element_nodes(5)], 1.0, atol=1e-12)


def test_element_cache(laplace_ops):
    assert laplace_ops.element_patch(3) is laplace_ops.element_patch(3)
    assert laplace_ops.edge_patch(laplace_ops.mesh.active_edges[0]) is laplace_ops.edge_patch(
        laplace_ops.mesh.active_edges[0]
    )


def test_bubble_of_zero(periodic_ops):
    patch = periodic_ops.element_patch(0)
    assert not np.any(bubble_solve(patch, np.zeros(periodic_ops.mesh.n_nodes)))


@pytest.mark.parametrize("name", ["laplace_ops", "periodic_ops", "helmholtz_ops"])
def test_splitting_identity(name, request):
    ops = request.getfixturevalue(name)
    prob = ops.prob
    load = prob.load()
    u = solve_reference(prob, load=load)
    split = ops.harmonic_part(u) + ops.bubble(load)
    assert energy_norm(prob, split - u) <= 1e-9 * energy_norm(prob, u)
    # bubbles vanish on the skeleton
    assert not np.any(ops.bubble(load)[ops.mesh.skeleton_nodes])


def test_interpolation_residual_vanishes(periodic_ops):
    mesh = periodic_ops.mesh
    u = solve_reference(periodic_ops.prob)
    skel = skeleton_restrict(mesh, u)
    res = skel - nodal_interpolation(mesh, skel)
    for p in mesh.active_nodes:
        assert res[mesh.coarse_node_fine(p)] == 0.0


def test_interpolation_is_a_projection(rng):
    mesh = build_mesh(3, 4)
    skel = skeleton_restrict(mesh, rng.standard_normal(mesh.n_nodes))
    once = nodal_interpolation(mesh, skel)
    np.testing.assert_allclose(nodal_interpolation(mesh, once), once, atol=1e-14)
    linear = skeleton_restrict(mesh, coarse_interpolant(mesh, rng.standard_normal(mesh.n_coarse_nodes)))
    np.testing.assert_allclose(nodal_interpolation(mesh, linear), linear, atol=1e-14)


def test_edge_restriction_example():
    mesh = build_mesh(2, 4)
    e = mesh.interior_edges[0]
    tr = mesh.edge_trace_nodes(e)
    u = np.zeros(mesh.n_nodes)
    u[tr.nodes] = [0, 1, 3, 2, 4]
    r = edge_restriction(mesh, u, e)
    np.testing.assert_allclose(r[tr.nodes], [0, 0, 1, -1, 0], atol=1e-15)
    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[tr.nodes] = False
    assert not np.any(r[mask])


def test_edge_restriction_of_linear():
    mesh = build_mesh(2, 4)
    e = mesh.interior_edges[1]
    u = 3 * mesh.node_coords[:, 0] - 2 * mesh.node_coords[:, 1] + 1
    np.testing.assert_allclose(edge_restriction(mesh, u, e), 0, atol=1e-14)


@pytest.mark.parametrize("layout", ["dirichlet", "mixed"])
def test_msfem_partition_of_unity(layout):
    mesh = build_mesh(4, 4, layout)
    spec = ProblemSpec(
        name="rough",
        A=lambda x: 1.5 + np.sin(20 * x[:, 0]) * np.cos(13 * x[:, 1]),
        f=constant(1.0),
        bc_layout=layout,
    )
    ops = LocalOperators(assemble(mesh, spec))
    total = sum(psi.to_fine(mesh.n_nodes) for _, psi in msfem_basis(ops))
    dirichlet = mesh.boundary.dirichlet
    for t in range(mesh.n_elements):
        nodes = mesh.element_nodes(t)
        if dirichlet[nodes].any():
            continue
        np.testing.assert_allclose(total[nodes], 1.0, atol=1e-9)


def test_msfem_nodal_property_and_support(periodic_ops):
    mesh = periodic_ops.mesh
    basis = {p: psi.to_fine(mesh.n_nodes) for p, psi in msfem_basis(periodic_ops)}
    assert sorted(basis) == list(mesh.active_nodes)
    coarse_fine = np.array([mesh.coarse_node_fine(q) for q in range(mesh.n_coarse_nodes)])
    for p, psi in basis.items():
        expected = np.zeros(mesh.n_coarse_nodes)
        expected[p] = 1.0
        np.testing.assert_allclose(psi[coarse_fine], expected, atol=1e-14)
        outside = np.setdiff1d(np.arange(mesh.n_nodes), mesh.elements_nodes(mesh.node_elements(p)))
        assert not np.any(psi[outside])


def test_msfem_energy_matches_direct_patch_solve():
    mesh = build_mesh(4, 4)
    prob = assemble(mesh, make_scenario("high_contrast", {"M": 1e4}))
    ops = LocalOperators(prob)
    p = mesh.active_nodes[4]
    psi = dict(msfem_basis(ops))[p].to_fine(mesh.n_nodes)
    # independent dense solve on the four elements around p
    ref = np.zeros(mesh.n_nodes)
    a = prob.matrix.toarray()
    trace = coarse_hat_trace(mesh, p)
    for t in mesh.node_elements(p):
        nodes = mesh.element_nodes(t)
        inner = nodes[mesh.node_cell_count[nodes] == 4]
        inner = np.setdiff1d(inner, mesh.skeleton_nodes)
        bnd = np.setdiff1d(nodes, inner)
        ref[bnd] = trace[bnd]
        ref[inner] = np.linalg.solve(a[np.ix_(inner, inner)], -a[np.ix_(inner, bnd)] @ trace[bnd])
    a_psi = psi @ (prob.matrix @ psi)
    a_ref = ref @ (prob.matrix @ ref)
    assert a_psi == pytest.approx(a_ref, rel=1e-10)
    tent = coarse_interpolant(mesh, np.eye(mesh.n_coarse_nodes)[p])
    assert np.abs(psi - tent).max() > 1e-3


def test_harmonic_part_expansion(periodic_ops):
    mesh = periodic_ops.mesh
    u = solve_reference(periodic_ops.prob)
    total = np.zeros(mesh.n_nodes)
    for p, psi in msfem_basis(periodic_ops):
        total += u[mesh.coarse_node_fine(p)] * psi.to_fine(mesh.n_nodes)
    for e in mesh.active_edges:
        total += periodic_ops.extend(edge_restriction(mesh, u, e), mesh.edge_elements(e))
    uh = periodic_ops.harmonic_part(u)
    assert energy_norm(periodic_ops.prob, total - uh) <= 1e-9 * energy_norm(periodic_ops.prob, uh)


def test_linearity(helmholtz_ops, rng):
    mesh = helmholtz_ops.mesh
    a = rng.standard_normal(mesh.n_nodes)
    b = rng.standard_normal(mesh.n_nodes)
    s, t = 0.7, -1.3 + 0.5j
    lhs = helmholtz_ops.harmonic_part(s * a + t * b)
    rhs = s * helmholtz_ops.harmonic_part(a) + t * helmholtz_ops.harmonic_part(b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(rhs).max())
    lhs = helmholtz_ops.online_part(s * a + t * b)
    rhs = s * helmholtz_ops.online_part(a) + t * helmholtz_ops.online_part(b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(rhs).max())


def test_online_part_of_zero(helmholtz_ops):
    assert not np.any(online_part(helmholtz_ops, np.zeros(helmholtz_ops.mesh.n_nodes)))


def test_online_part_locality(periodic_ops):
    mesh = periodic_ops.mesh
    t = 0
    load = np.zeros(mesh.n_nodes)
    inner = np.setdiff1d(mesh.element_nodes(t), mesh.skeleton_nodes)
    load[inner] = 1.0
    un = periodic_ops.online_part(load)
    touched = {t}
    for e in mesh.active_edges:
        if t in mesh.oversampling_domain(e):
            touched.update(mesh.edge_elements(e))
    outside = np.setdiff1d(np.arange(mesh.n_nodes), mesh.elements_nodes(sorted(touched)))
    assert np.any(un)
    assert not np.any(un[outside])


def test_patch_error_when_h_too_coarse():
    mesh = build_mesh(2, 4, "mixed")
    prob = assemble(mesh, make_scenario("helmholtz_rough", {"k": 8.0}))
    with pytest.raises(PatchError, match="patch not elliptic; reduce H"):
        LocalOperators(prob)
    LocalOperators(prob, c_loc=None)


@pytest.mark.parametrize("robin_free", [True, False])
def test_patch_masks_match_global_cell_count(helmholtz, robin_free):
    mesh = helmholtz.mesh
    for e in mesh.active_edges:
        elements = mesh.oversampling_domain(e)
        cells = mesh.elements_cells(elements)
        nodes = mesh.elements_nodes(elements)
        free, data = patch_masks(mesh, cells, nodes, robin_free)
        count = np.bincount(mesh.cell_nodes[cells].ravel(), minlength=mesh.n_nodes)[nodes]
        inside = count == mesh.node_cell_count[nodes]
        dirichlet = mesh.boundary.dirichlet[nodes]
        expected = inside & ~dirichlet
        if not robin_free:
            expected &= mesh.node_cell_count[nodes] == 4
        np.testing.assert_array_equal(free, expected)
        np.testing.assert_array_equal(data, ~expected & ~dirichlet)


def test_element_tables_match_coordinates():
    mesh = build_mesh(3, 4)
    t = 5  # element (2, 1)
    centers = mesh.cell_centers[mesh.element_cells(t)]
    assert np.all((centers[:, 0] > 2 / 3) & (centers[:, 1] > 1 / 3) & (centers[:, 1] < 2 / 3))
    coords = mesh.node_coords[mesh.element_nodes(t)]
    assert coords.shape == (25, 2)
    np.testing.assert_allclose(coords[0], [2 / 3, 1 / 3])
    np.testing.assert_allclose(coords[-1], [1.0, 2 / 3])
    with pytest.raises(KeyError):
        mesh.elements_nodes([0, 9])


def test_online_part_sums_local_corrections(periodic_ops, rng):
    mesh = periodic_ops.mesh
    load = rng.standard_normal(mesh.n_nodes)
    expected = periodic_ops.bubble(load)
    for e in mesh.active_edges:
        part = periodic_ops.edge_online(e, load)
        np.testing.assert_array_equal(part.nodes, mesh.elements_nodes(mesh.edge_elements(e)))
        w = periodic_ops.edge_patch(e).bubble(load)
        full = periodic_ops.extend(edge_restriction(mesh, w, e), mesh.edge_elements(e))
        np.testing.assert_allclose(part.to_fine(mesh.n_nodes), full, atol=1e-13 * max(np.abs(full).max(), 1.0))
        expected += full
    np.testing.assert_allclose(periodic_ops.online_part(load), expected, atol=1e-12 * np.abs(expected).max())


def test_online_part_is_independent_of_batching(periodic, monkeypatch, rng):
    load = rng.standard_normal(periodic.mesh.n_nodes)
    serial = LocalOperators(periodic).online_part(load)
    monkeypatch.setattr("expms.localops.ACCUMULATE_CHUNK", 5)
    batched = LocalOperators(periodic, threads=3).online_part(load)
    np.testing.assert_array_equal(batched, serial)


def test_msfem_basis_is_stored_locally(periodic_ops):
    mesh = periodic_ops.mesh
    for p, psi in msfem_basis(periodic_ops):
        np.testing.assert_array_equal(psi.nodes, mesh.elements_nodes(mesh.node_elements(p)))
        assert psi.values.size < mesh.n_nodes


def test_warns_when_h_close_to_c_loc(caplog):
    mesh = build_mesh(4, 4, "mixed")
    prob = assemble(mesh, make_scenario("helmholtz_rough", {"k": 7.0}))
    with caplog.at_level(logging.WARNING, logger="expms.localops"):
        LocalOperators(prob)
    assert any("close to c_loc" in r.getMessage() for r in caplog.records)
    caplog.clear()
    with caplog.at_level(logging.WARNING, logger="expms.localops"):
        LocalOperators(prob, c_loc=10.0)
    assert not caplog.records


def test_inverse_iteration_finds_smallest_magnitude():
    a = sparse.diags(np.arange(1.0, 101.0)).tocsc()
    assert _smallest_by_inverse_iteration(factorize(a), 100) == pytest.approx(1.0, rel=1e-6)


def test_helmholtz_edge_patches_pass_ellipticity(helmholtz_ops):
    # ω_e systems are larger than the dense cutoff, so the shift-invert path runs
    for e in helmholtz_ops.mesh.active_edges[:4]:
        assert helmholtz_ops.edge_patch(e).free.size > 50

from __future__ import annotations

import numpy as np
import pytest

from expms.coeffs import make_scenario
from expms.images import field_raster, write_coefficient_pngs, write_field_png
from expms.mesh import build_mesh


def test_constant_field_is_mid_gray():
    mesh = build_mesh(2, 2)
    raster = field_raster(mesh, np.full(mesh.n_cells, 3.0))
    assert raster.shape == (4, 4)
    assert np.all(raster == 128)


def test_raster_puts_large_y_on_top():
    mesh = build_mesh(2, 4)
    raster = field_raster(mesh, mesh.cell_centers[:, 1])
    assert raster.dtype == np.uint8
    assert np.all(raster[0] == 255)
    assert np.all(raster[-1] == 0)


def test_write_field_png(tmp_path):
    Image = pytest.importorskip("PIL.Image")
    mesh = build_mesh(2, 4)
    path = write_field_png(mesh, mesh.cell_centers[:, 0], tmp_path / "sub" / "x.png")
    with Image.open(path) as img:
        assert img.size == (8, 8)
        assert img.mode == "L"
        pixels = np.asarray(img)
    assert pixels[0, 0] == 0 and pixels[0, -1] == 255


def test_coefficient_pngs(tmp_path):
    pytest.importorskip("PIL")
    mesh = build_mesh(4, 4)
    paths = write_coefficient_pngs(mesh, make_scenario("periodic"), tmp_path, "p")
    assert [p.name for p in paths] == ["coeff_p.png"]
    mixed = build_mesh(4, 4, "mixed")
    paths = write_coefficient_pngs(mixed, make_scenario("helmholtz_rough", {"k": 4}), tmp_path, "h")
    assert [p.name for p in paths] == ["coeff_h.png", "potential_h.png"]

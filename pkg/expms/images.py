from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .coeffs import ProblemSpec
from .mesh import TwoLevelMesh

logger = logging.getLogger(__name__)


def field_raster(mesh: TwoLevelMesh, values: np.ndarray) -> np.ndarray:
    """Cell values as an 8-bit grayscale raster, top row = largest x2."""
    grid = np.asarray(values, dtype=float).reshape(mesh.n_fine, mesh.n_fine)[::-1]
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo <= 0:
        return np.full(grid.shape, 128, dtype=np.uint8)
    return np.round(255 * (grid - lo) / (hi - lo)).astype(np.uint8)


def write_field_png(mesh: TwoLevelMesh, values: np.ndarray, out_path: Path) -> Path:
    _require_pillow()
    from PIL import Image

    img = Image.fromarray(field_raster(mesh, values))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    img.save(out_path)
    return out_path


def write_coefficient_pngs(mesh: TwoLevelMesh, spec: ProblemSpec, out_dir: Path, label: str) -> list[Path]:
    """coeff_<label>.png (log10 A), plus potential_<label>.png (|V|/k^2) for Helmholtz problems."""
    centers = mesh.cell_centers
    paths = [write_field_png(mesh, np.log10(spec.A(centers)), out_dir / f"coeff_{label}.png")]
    if spec.V is not None and spec.k:
        paths.append(write_field_png(mesh, np.abs(spec.V(centers)) / spec.k**2, out_dir / f"potential_{label}.png"))
    for p in paths:
        logger.info("wrote %s", p)
    return paths


def _require_pillow() -> None:
    try:
        import PIL  # noqa: F401
    except Exception as e:
        raise RuntimeError(
            "係数画像の書き出しには Pillow が必要です。\n"
            "インストール: python -m pip install -r requirements.txt"
        ) from e

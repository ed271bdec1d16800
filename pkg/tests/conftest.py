from __future__ import annotations

import numpy as np
import pytest

from expms.coeffs import make_scenario
from expms.fem import assemble
from expms.localops import LocalOperators
from expms.mesh import build_mesh


@pytest.fixture
def laplace():
    """-Δu = 2π² sin πx sin πy on a 4x4 coarse / 16x16 fine mesh."""
    mesh = build_mesh(4, 4)
    return assemble(mesh, make_scenario("custom", {"A": 1.0, "f": "sine"}))


@pytest.fixture
def periodic():
    mesh = build_mesh(4, 8)
    return assemble(mesh, make_scenario("periodic"))


@pytest.fixture
def helmholtz():
    mesh = build_mesh(4, 8, "mixed")
    return assemble(mesh, make_scenario("helmholtz_rough", {"k": 4.0}))


@pytest.fixture
def laplace_ops(laplace):
    return LocalOperators(laplace)


@pytest.fixture
def periodic_ops(periodic):
    return LocalOperators(periodic)


@pytest.fixture
def helmholtz_ops(helmholtz):
    return LocalOperators(helmholtz)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel(a, b) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))

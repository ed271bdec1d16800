from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]

SCENARIOS = ("periodic", "high_contrast", "helmholtz_rough", "custom")

PERIODIC_EPS = (1 / 5, 1 / 13, 1 / 17, 1 / 31, 1 / 65)

HIGH_CONTRAST_RADIUS = 0.015
HIGH_CONTRAST_CENTERS = np.round(np.arange(2, 9) / 10, 12)

RANDOM_FIELD_LEVEL = 7
DEFAULT_SEEDS = (1, 2, 3)


def _points(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    if p.shape[-1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {p.shape}")
    return p


@dataclass(frozen=True)
class ProblemSpec:
    """
    Coefficients and data of  -div(A grad u) + V u = f  with u = 0 on Γ1 and
    A grad u · ν = β u on Γ2.

    A, V, f take (n, 2) point arrays and return (n,) values. beta is evaluated on
    Robin segments only; Neumann-type segments of Γ2 always carry β = 0.
    """

    name: str
    A: Field
    f: Field
    V: Field | None = None
    beta: Field | None = None
    scalar_kind: str = "real"
    k: float | None = None
    bc_layout: str = "dirichlet"
    params: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def is_complex(self) -> bool:
        return self.scalar_kind == "complex"

    @property
    def dtype(self):
        return np.complex128 if self.is_complex else np.float64

    @property
    def descriptor(self) -> str:
        shown = {k: v for k, v in self.params.items() if k in ("M", "k", "A", "V", "f")}
        if not shown:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in sorted(shown.items()))
        return f"{self.name}({inner})"


# coefficient fields ----------------------------------------------------------


def periodic_multiscale_A(x) -> np.ndarray:
    p = _points(x)
    x1, x2 = p[:, 0], p[:, 1]
    e1, e2, e3, e4, e5 = PERIODIC_EPS
    s, c, tau = np.sin, np.cos, 2 * np.pi
    total = (
        (1.1 + s(tau * x1 / e1)) / (1.1 + s(tau * x2 / e1))
        + (1.1 + s(tau * x2 / e2)) / (1.1 + c(tau * x1 / e2))
        + (1.1 + c(tau * x1 / e3)) / (1.1 + s(tau * x2 / e3))
        + (1.1 + s(tau * x2 / e4)) / (1.1 + c(tau * x1 / e4))
        + (1.1 + c(tau * x1 / e5)) / (1.1 + s(tau * x2 / e5))
        + s(4 * x1**2 * x2**2)
        + 1
    )
    return total / 6


def high_contrast_A(x, M: float) -> np.ndarray:
    """M within distance 0.015 of the 7x7 lattice {0.2,...,0.8}^2, 1 elsewhere."""
    if M < 1:
        raise ValueError(f"contrast M must be >= 1: {M}")
    p = _points(x)
    lo, hi = HIGH_CONTRAST_CENTERS[0], HIGH_CONTRAST_CENTERS[-1]
    # nearest lattice point of a tensor set is the per-axis nearest coordinate
    nearest = np.clip(np.round(p * 10) / 10, lo, hi)
    dist = np.hypot(p[:, 0] - nearest[:, 0], p[:, 1] - nearest[:, 1])
    return np.where(dist < HIGH_CONTRAST_RADIUS, float(M), 1.0)


@dataclass(frozen=True)
class RandomField:
    """
    Piecewise bilinear Gaussian field on the 2^-7 grid.

    values[i, j] = ξ_{i,j}, i along x1. Draws: PCG64(seed) uniforms u in [0,1), taken
    pairwise (u1, u2) in order, z = sqrt(-2 log(1-u1)) * (cos 2πu2, sin 2πu2), flattened
    row-major over (i, j).
    """

    seed: int
    values: np.ndarray

    @property
    def level(self) -> int:
        return (self.values.shape[0] - 1).bit_length() - 1


def make_random_field(seed: int, level: int = RANDOM_FIELD_LEVEL) -> RandomField:
    n = (2**level + 1) ** 2
    n_pairs = (n + 1) // 2
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    u = rng.random(2 * n_pairs)
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.empty(2 * n_pairs)
    z[0::2] = r * np.cos(2 * np.pi * u2)
    z[1::2] = r * np.sin(2 * np.pi * u2)
    values = z[:n].reshape(2**level + 1, 2**level + 1)
    values.setflags(write=False)
    return RandomField(seed=int(seed), values=values)


def random_field_eval(field: RandomField, x) -> np.ndarray:
    p = _points(x)
    n = field.values.shape[0] - 1
    s = p * n
    idx = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    t = s - idx
    i, j = idx[:, 0], idx[:, 1]
    tx, ty = t[:, 0], t[:, 1]
    v = field.values
    return (
        (1 - tx) * (1 - ty) * v[i, j]
        + tx * (1 - ty) * v[i + 1, j]
        + (1 - tx) * ty * v[i, j + 1]
        + tx * ty * v[i + 1, j + 1]
    )


def rough_magnitude(field: RandomField) -> Field:
    """x -> |ξ(x)| + 0.5"""

    def evaluate(x) -> np.ndarray:
        return np.abs(random_field_eval(field, x)) + 0.5

    return evaluate


# sources ---------------------------------------------------------------------


def constant(value: float) -> Field:
    def evaluate(x) -> np.ndarray:
        return np.full(_points(x).shape[0], float(value))

    return evaluate


def poly_source(x) -> np.ndarray:
    p = _points(x)
    return p[:, 0] ** 4 - p[:, 1] ** 3 + 1


def sine_source(x) -> np.ndarray:
    p = _points(x)
    return 2 * np.pi**2 * np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])


def sine_solution(x) -> np.ndarray:
    p = _points(x)
    return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1])


_NAMED_SOURCES: dict[str, Field] = {
    "minus_one": constant(-1.0),
    "poly": poly_source,
    "sine": sine_source,
}


def resolve_source(f) -> Field:
    if callable(f):
        return f
    if isinstance(f, str):
        if f not in _NAMED_SOURCES:
            raise ValueError(f"unknown source: {f} (supported: {', '.join(_NAMED_SOURCES)} or a number)")
        return _NAMED_SOURCES[f]
    if isinstance(f, (int, float)) and not isinstance(f, bool):
        return constant(float(f))
    raise ValueError(f"source must be a number or one of {', '.join(_NAMED_SOURCES)}: {f!r}")


# scenarios -------------------------------------------------------------------


def make_scenario(name: str, params: dict[str, Any] | None = None) -> ProblemSpec:
    params = dict(params or {})
    if name == "periodic":
        return ProblemSpec(
            name=name,
            A=periodic_multiscale_A,
            f=resolve_source(params.get("f", "minus_one")),
            params=params,
        )

    if name == "high_contrast":
        M = float(params.setdefault("M", 2**4))
        if M < 1:
            raise ValueError(f"contrast M must be >= 1: {M}")

        def A(x) -> np.ndarray:
            return high_contrast_A(x, M)

        return ProblemSpec(name=name, A=A, f=resolve_source(params.get("f", "poly")), params=params)

    if name == "helmholtz_rough":
        if params.get("k") is None:
            raise ValueError("helmholtz_rough requires the wavenumber k")
        k = float(params["k"])
        if k <= 0:
            raise ValueError(f"wavenumber k must be positive: {k}")
        seeds = tuple(int(s) for s in params.get("seeds", DEFAULT_SEEDS))
        if len(seeds) != 3:
            raise ValueError(f"helmholtz_rough needs 3 seeds (A, V, beta), got {len(seeds)}")
        fa, fv, fb = (rough_magnitude(make_random_field(s)) for s in seeds)

        def V(x) -> np.ndarray:
            return -(k**2) * fv(x)

        def beta(x) -> np.ndarray:
            return 1j * k * fb(x)

        return ProblemSpec(
            name=name,
            A=fa,
            f=resolve_source(params.get("f", "poly")),
            V=V,
            beta=beta,
            scalar_kind="complex",
            k=k,
            bc_layout="mixed",
            params=params,
        )

    if name == "custom":
        a = float(params.get("A", 1.0))
        v = float(params.get("V", 0.0))
        if a <= 0:
            raise ValueError(f"custom A must be positive: {a}")
        if v < 0:
            raise ValueError(f"custom V must be >= 0 for a real problem: {v}")
        return ProblemSpec(
            name=name,
            A=constant(a),
            f=resolve_source(params.get("f", "minus_one")),
            V=constant(v) if v else None,
            bc_layout=str(params.get("bc_layout", "dirichlet")),
            params=params,
        )

    raise ValueError(f"unknown scenario: {name} (supported: {', '.join(SCENARIOS)})")

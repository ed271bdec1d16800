from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .coeffs import SCENARIOS
from .mesh import BC_LAYOUTS
from .numerics import SOLVER_METHODS

SCALES = ("desk", "paper")
PAPER_FINE_RESOLUTION = 1024

# desk-scale suite: h = 1/256 everywhere
DEFAULT_SUITE: dict[str, Any] = {
    "name": "desk",
    "out_dir": "out",
    "threads": 1,
    "fine_resolution": 256,
    "solver": "direct",
    "timings": True,
    "c_loc": 2.0,
    "oversampling_layers": 1,
    "experiments": [
        {
            "scenario": "periodic",
            "label": "periodic",
            "params": {"f": "minus_one"},
            "nc": [8, 16, 32],
            "m": [1, 2, 3, 4],
            "decay": True,
            "paper": {"nc": [8, 16, 32, 64, 128], "m": [1, 2, 3, 4, 5, 6]},
        },
        {
            "scenario": "high_contrast",
            "label": "high_contrast_M16",
            "params": {"M": 16},
            "nc": [32],
            "m": [1, 2, 3, 4],
            "paper": {"m": [1, 2, 3, 4, 5, 6, 7]},
        },
        {
            "scenario": "high_contrast",
            "label": "high_contrast_M64",
            "params": {"M": 64},
            "nc": [32],
            "m": [1, 2, 3, 4],
            "paper": {"m": [1, 2, 3, 4, 5, 6, 7]},
        },
        {
            "scenario": "helmholtz_rough",
            "label": "helmholtz_k16",
            "params": {"k": 16, "seeds": [1, 2, 3]},
            "nc": [16],
            "m": [1, 2, 3, 4, 5],
            "paper": {"params": {"k": 32}, "nc": [32], "m": [1, 2, 3, 4, 5, 6, 7]},
        },
    ],
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    label: str
    params: dict[str, Any]
    nc: tuple[int, ...]
    m: tuple[int, ...]
    fine_resolution: int
    online_part: bool = True
    conjugate_enrich: bool = False
    decay: bool = False
    solver: str = "direct"
    c_loc: float = 2.0
    oversampling_layers: int = 1
    timings: bool = True
    threads: int = 1

    def refine(self, nc: int) -> int:
        return self.fine_resolution // nc

    @property
    def flags(self) -> str:
        out = ["online" if self.online_part else "no_online"]
        if self.conjugate_enrich:
            out.append("conj")
        if self.oversampling_layers != 1:
            out.append(f"layers={self.oversampling_layers}")
        return "+".join(out)


@dataclass(frozen=True)
class SuiteConfig:
    name: str
    out_dir: Path
    threads: int
    experiments: tuple[ExperimentConfig, ...]
    source: Path | None = None
    raw: dict[str, Any] = field(default_factory=dict, compare=False)


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ValueError(f"{path}: {message}")


def _int(value: Any, path: str, minimum: int) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool), path, f"expected an integer, got {value!r}")
    _require(value >= minimum, path, f"must be >= {minimum}, got {value}")
    return int(value)


def _bool(value: Any, path: str) -> bool:
    _require(isinstance(value, bool), path, f"expected true/false, got {value!r}")
    return value


def _int_list(value: Any, path: str, minimum: int) -> tuple[int, ...]:
    _require(isinstance(value, list) and len(value) > 0, path, "expected a non-empty list")
    return tuple(_int(v, f"{path}[{i}]", minimum) for i, v in enumerate(value))


def apply_scale(raw: dict[str, Any], scale: str) -> dict[str, Any]:
    """Return a copy of raw with the paper-scale overrides merged in (desk: unchanged)."""
    if scale not in SCALES:
        raise ValueError(f"unknown scale: {scale} (supported: {', '.join(SCALES)})")
    raw = copy.deepcopy(raw)
    if scale == "desk":
        return raw
    raw["fine_resolution"] = PAPER_FINE_RESOLUTION
    for exp in raw.get("experiments", []):
        if not isinstance(exp, dict):
            continue
        override = exp.get("paper") or {}
        for key, value in override.items():
            if key == "params" and isinstance(value, dict):
                exp["params"] = {**exp.get("params", {}), **value}
            else:
                exp[key] = value
        exp.pop("fine_resolution", None)
    return raw


def _experiment(raw: Any, path: str, suite: dict[str, Any]) -> ExperimentConfig:
    _require(isinstance(raw, dict), path, "expected an object")
    scenario = raw.get("scenario")
    _require(scenario in SCENARIOS, f"{path}.scenario", f"unknown scenario {scenario!r} (supported: {', '.join(SCENARIOS)})")
    params = raw.get("params", {})
    _require(isinstance(params, dict), f"{path}.params", "expected an object")
    if scenario == "helmholtz_rough":
        _require(params.get("k") is not None, f"{path}.params.k", "helmholtz_rough requires the wavenumber k")
    if scenario == "custom" and "bc_layout" in params:
        _require(params["bc_layout"] in BC_LAYOUTS, f"{path}.params.bc_layout", f"unknown layout {params['bc_layout']!r}")

    fine = _int(raw.get("fine_resolution", suite["fine_resolution"]), f"{path}.fine_resolution", 4)
    nc = _int_list(raw.get("nc"), f"{path}.nc", 2)
    for i, n in enumerate(nc):
        _require(fine % n == 0, f"{path}.nc[{i}]", f"{n} does not divide fine_resolution {fine}")
        _require(fine // n >= 2, f"{path}.nc[{i}]", f"refine {fine // n} < 2")
    m = _int_list(raw.get("m"), f"{path}.m", 0)
    for i, v in enumerate(m):
        for n in nc:
            _require(v <= fine // n - 1, f"{path}.m[{i}]", f"{v} exceeds refine-1 = {fine // n - 1} at nc={n}")

    known = {
        "scenario", "label", "params", "nc", "m", "online_part", "conjugate_enrich",
        "decay", "fine_resolution", "paper",
    }
    extra = sorted(set(raw) - known)
    _require(not extra, path, f"unknown keys: {', '.join(extra)}")

    return ExperimentConfig(
        scenario=scenario,
        label=str(raw.get("label") or scenario),
        params=dict(params),
        nc=nc,
        m=m,
        fine_resolution=fine,
        online_part=_bool(raw.get("online_part", True), f"{path}.online_part"),
        conjugate_enrich=_bool(raw.get("conjugate_enrich", False), f"{path}.conjugate_enrich"),
        decay=_bool(raw.get("decay", False), f"{path}.decay"),
        solver=suite["solver"],
        c_loc=suite["c_loc"],
        oversampling_layers=suite["oversampling_layers"],
        timings=suite["timings"],
        threads=suite["threads"],
    )


def parse_config(
    raw: dict[str, Any],
    *,
    scale: str = "desk",
    out_dir: Path | str | None = None,
    threads: int | None = None,
    source: Path | None = None,
) -> SuiteConfig:
    _require(isinstance(raw, dict), "config", "expected a JSON object")
    raw = apply_scale(raw, scale)
    if threads is not None:
        raw["threads"] = threads
    if out_dir is not None:
        raw["out_dir"] = str(out_dir)

    suite = {
        "threads": _int(raw.get("threads", 1), "threads", 1),
        "fine_resolution": raw.get("fine_resolution", 256),
        "solver": raw.get("solver", "direct"),
        "timings": _bool(raw.get("timings", True), "timings"),
        "c_loc": raw.get("c_loc", 2.0),
        "oversampling_layers": _int(raw.get("oversampling_layers", 1), "oversampling_layers", 1),
    }
    _int(suite["fine_resolution"], "fine_resolution", 4)
    _require(suite["solver"] in SOLVER_METHODS, "solver", f"unknown solver {suite['solver']!r}")
    _require(
        isinstance(suite["c_loc"], (int, float)) and not isinstance(suite["c_loc"], bool) and suite["c_loc"] > 0,
        "c_loc",
        f"expected a positive number, got {suite['c_loc']!r}",
    )
    suite["c_loc"] = float(suite["c_loc"])

    experiments = raw.get("experiments")
    _require(isinstance(experiments, list) and experiments, "experiments", "expected a non-empty list")
    parsed = tuple(_experiment(e, f"experiments[{i}]", suite) for i, e in enumerate(experiments))
    labels = [e.label for e in parsed]
    dup = sorted({lb for lb in labels if labels.count(lb) > 1})
    _require(not dup, "experiments", f"duplicate labels: {', '.join(dup)}")

    return SuiteConfig(
        name=str(raw.get("name", "suite")),
        out_dir=Path(raw.get("out_dir", "out")),
        threads=suite["threads"],
        experiments=parsed,
        source=source,
        raw=raw,
    )


def load_config(
    path: Path | None = None,
    *,
    scale: str = "desk",
    out_dir: Path | str | None = None,
    threads: int | None = None,
) -> SuiteConfig:
    """Load and validate a suite config; path=None loads the embedded desk suite."""
    if path is None:
        return parse_config(DEFAULT_SUITE, scale=scale, out_dir=out_dir, threads=threads)
    path = Path(path).resolve()
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from e
    return parse_config(raw, scale=scale, out_dir=out_dir, threads=threads, source=path)


def write_default_config(path: Path, *, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"config already exists: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(DEFAULT_SUITE, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path

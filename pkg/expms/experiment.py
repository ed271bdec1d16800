from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd

from .coeffs import make_scenario
from .config import ExperimentConfig, SuiteConfig
from .fem import assemble, energy_norm, l2_norm, solve_reference
from .galerkin import build_offline, evaluate_errors, reconstruct, solve_effective
from .localops import LocalOperators
from .mesh import build_mesh
from .spectral import DecayFit, compute_edge_bases, decay_report, fit_log_decay

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "scenario",
    "H",
    "h",
    "m",
    "dimS",
    "eL2",
    "eH",
    "t_offline_s",
    "t_online_s",
    "t_coarse_s",
    "flags",
    "error",
]
DECAY_TERMS = 10
ERROR_FLOOR = 1e-12

RUNTIME_ERRORS = (ValueError, KeyError, RuntimeError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class DecayTrend:
    """Least-squares fits of log e against m and against m^(1/3)."""

    metric: str
    n: int
    slope: float
    r2: float
    slope_cbrt: float
    r2_cbrt: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "n": self.n,
            "slope": self.slope,
            "r2": self.r2,
            "slope_cbrt": self.slope_cbrt,
            "r2_cbrt": self.r2_cbrt,
        }


def fit_decay(rows: Iterable[Mapping[str, Any]], metric: str = "eH") -> DecayTrend:
    """Fit the error decay of rows sharing one scenario and H."""
    pts = []
    for row in rows:
        if row.get("error"):
            continue
        value = row.get(metric)
        if value is None or not np.isfinite(value) or value <= ERROR_FLOOR:
            continue
        pts.append((float(row["m"]), float(value)))
    if len(pts) < 3:
        raise ValueError(f"fit_decay needs >= 3 rows with {metric} above {ERROR_FLOOR}, got {len(pts)}")
    pts.sort()
    m = np.array([p[0] for p in pts])
    e = np.array([p[1] for p in pts])
    lin = fit_log_decay(m, e)
    cbrt = fit_log_decay(np.cbrt(m), e)
    return DecayTrend(metric=metric, n=len(pts), slope=lin.slope, r2=lin.r2, slope_cbrt=cbrt.slope, r2_cbrt=cbrt.r2)


@dataclass
class ExperimentResult:
    label: str
    rows: list[dict[str, Any]] = field(default_factory=list)
    decay_tables: dict[int, pd.DataFrame] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def failed(self) -> list[dict[str, Any]]:
        return [r for r in self.rows if r["error"]]


def _row(cfg: ExperimentConfig, nc: int, m: int, **values: Any) -> dict[str, Any]:
    row = {c: None for c in RESULT_COLUMNS}
    row.update(
        scenario=cfg.label,
        H=1.0 / nc,
        h=1.0 / cfg.fine_resolution,
        m=m,
        flags=cfg.flags,
        error="",
    )
    row.update(values)
    if not cfg.timings:
        row.update(t_offline_s=None, t_online_s=None, t_coarse_s=None)
    return row


def _error_text(e: BaseException) -> str:
    return f"{type(e).__name__}: {e}"


def decay_table(mesh, bases) -> pd.DataFrame:
    records = []
    for eb in bases:
        edge = mesh.edge(eb.edge)
        rec: dict[str, Any] = {
            "edge": edge.id,
            "orientation": edge.orientation,
            "i": edge.i,
            "j": edge.j,
            "n_above_floor": int(eb.spectrum.size),
            "b": None,
            "r2": None,
        }
        try:
            fit: DecayFit = decay_report(eb, max_terms=DECAY_TERMS)
            rec.update(b=fit.b, r2=fit.r2)
        except ValueError as e:
            logger.debug("%s: no decay fit (%s)", edge.label, e)
        for j in range(DECAY_TERMS):
            rec[f"lambda{j + 1}"] = float(eb.spectrum[j]) if j < eb.spectrum.size else None
        records.append(rec)
    return pd.DataFrame.from_records(records)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """
    One reference solve per fine resolution; per nc one set of local operators, edge bases
    at the largest m and one online part, reused across the m sweep.
    """
    result = ExperimentResult(label=cfg.label)
    m_max = max(cfg.m)
    try:
        spec = make_scenario(cfg.scenario, cfg.params)
        ref_mesh = build_mesh(cfg.nc[0], cfg.refine(cfg.nc[0]), spec.bc_layout, layers=cfg.oversampling_layers)
        ref_prob = assemble(ref_mesh, spec, solver=cfg.solver)
        u_ref = solve_reference(ref_prob)
        ref_norms = {"H": energy_norm(ref_prob, u_ref), "L2": l2_norm(ref_prob, u_ref)}
        logger.info("%s: reference solved on h=1/%d (|u|_H=%.6e)", cfg.label, cfg.fine_resolution, ref_norms["H"])
    except RUNTIME_ERRORS as e:
        logger.warning("%s: reference failed: %s", cfg.label, e)
        for nc in cfg.nc:
            result.rows.extend(_row(cfg, nc, m, error=_error_text(e)) for m in cfg.m)
        result.summary = {"label": cfg.label, "error": _error_text(e)}
        return result

    per_nc: dict[str, Any] = {}
    for nc in cfg.nc:
        try:
            mesh = build_mesh(nc, cfg.refine(nc), spec.bc_layout, layers=cfg.oversampling_layers)
            prob = assemble(mesh, spec, solver=cfg.solver)
            start = time.perf_counter()
            ops = LocalOperators(prob, threads=cfg.threads, c_loc=cfg.c_loc)
            ops.prepare()
            m_bases = max(m_max, 1) if cfg.decay else m_max
            bases = compute_edge_bases(ops, m_bases)
            t_bases = time.perf_counter() - start
            load = prob.load()
            start = time.perf_counter()
            u_n = ops.online_part(load) if cfg.online_part else None
            t_online = time.perf_counter() - start
        except RUNTIME_ERRORS as e:
            logger.warning("%s nc=%d: offline stage failed: %s", cfg.label, nc, e)
            result.rows.extend(_row(cfg, nc, m, error=_error_text(e)) for m in cfg.m)
            per_nc[str(nc)] = {"error": _error_text(e)}
            continue

        if cfg.decay and bases:
            result.decay_tables[nc] = decay_table(mesh, bases)

        rows = []
        for m in cfg.m:
            try:
                off = build_offline(
                    prob, m, ops=ops, edge_bases=bases, conjugate_enrich=cfg.conjugate_enrich
                )
                start = time.perf_counter()
                c = solve_effective(off, u_n=u_n, load=load)
                t_coarse = time.perf_counter() - start
                u_sol = reconstruct(off, c, u_n)
                rep = evaluate_errors(prob, u_sol, u_ref, m=m, dim=off.dim, flags=cfg.flags)
                row = _row(
                    cfg,
                    nc,
                    m,
                    dimS=off.dim,
                    eL2=rep.e_l2,
                    eH=rep.e_h,
                    t_offline_s=t_bases + off.seconds,
                    t_online_s=t_online,
                    t_coarse_s=t_coarse,
                )
                logger.info("%s H=1/%d m=%d: dim(S)=%d eH=%.3e eL2=%.3e", cfg.label, nc, m, off.dim, rep.e_h, rep.e_l2)
            except RUNTIME_ERRORS as e:
                logger.warning("%s H=1/%d m=%d failed: %s", cfg.label, nc, m, e)
                row = _row(cfg, nc, m, error=_error_text(e))
            rows.append(row)
        result.rows.extend(rows)

        trends = {}
        for metric in ("eH", "eL2"):
            try:
                trends[metric] = fit_decay(rows, metric).to_dict()
            except ValueError as e:
                logger.debug("%s H=1/%d: no %s trend (%s)", cfg.label, nc, metric, e)
                trends[metric] = None
        per_nc[str(nc)] = {"H": 1.0 / nc, "dim_nodal": len(mesh.active_nodes), "trends": trends}

    result.summary = {
        "label": cfg.label,
        "scenario": spec.descriptor,
        "fine_resolution": cfg.fine_resolution,
        "reference_norms": ref_norms,
        "nc": per_nc,
    }
    return result


# writers ---------------------------------------------------------------------


def results_frame(rows: list[dict[str, Any]]) -> pd.DataFrame:
    df = pd.DataFrame.from_records(rows, columns=RESULT_COLUMNS)
    for col in ("m", "dimS"):
        df[col] = df[col].astype("Int64")
    for col in ("H", "h", "eL2", "eH", "t_offline_s", "t_online_s", "t_coarse_s"):
        df[col] = df[col].astype(float)
    return df


def write_results(rows: list[dict[str, Any]], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    results_frame(rows).to_csv(path, index=False, float_format="%.12e")
    return path


def write_decay(table: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.12e")
    return path


def write_summary(summary: dict[str, Any], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


@dataclass
class SuiteResult:
    out_dir: Path
    rows: list[dict[str, Any]]
    paths: list[Path]

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["error"])


def run_suite(suite: SuiteConfig, *, scale: str = "desk") -> SuiteResult:
    out_dir = suite.out_dir / suite.name
    rows: list[dict[str, Any]] = []
    paths: list[Path] = []
    summaries = []
    for cfg in suite.experiments:
        logger.info("experiment %s: scenario=%s nc=%s m=%s", cfg.label, cfg.scenario, list(cfg.nc), list(cfg.m))
        res = run_experiment(cfg)
        rows.extend(res.rows)
        summaries.append(res.summary)
        for nc, table in res.decay_tables.items():
            paths.append(write_decay(table, out_dir / f"decay_{cfg.label}_nc{nc}.csv"))

    paths.insert(0, write_results(rows, out_dir / "results.csv"))
    failed = [
        {"scenario": r["scenario"], "H": r["H"], "m": r["m"], "error": r["error"]} for r in rows if r["error"]
    ]
    paths.append(
        write_summary(
            {"name": suite.name, "scale": scale, "experiments": summaries, "failed": failed},
            out_dir / "summary.json",
        )
    )
    logger.info("wrote %d rows (%d failed) to %s", len(rows), len(failed), out_dir)
    return SuiteResult(out_dir=out_dir, rows=rows, paths=paths)

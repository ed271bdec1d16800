from __future__ import annotations

import argparse
import logging
from pathlib import Path

from .coeffs import make_scenario
from .config import SCALES, load_config, write_default_config
from .experiment import run_suite
from .images import write_coefficient_pngs
from .mesh import build_mesh

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, type=Path, help="出力ディレクトリ (configの out_dir を上書き)")
    p.add_argument("--scale", default="desk", choices=list(SCALES), help="desk: h=1/256 / paper: h=1/1024 と paper 上書きを適用")
    p.add_argument("-v", "--verbose", action="store_true", help="DEBUGログを表示")
    p.add_argument("-q", "--quiet", action="store_true", help="WARNING以上のみ表示")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="expms", description="指数収束マルチスケール有限要素法 (ExpMsFEM) のベンチマークツール")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="実験スイートを実行して results.csv / summary.json を書き出し")
    p_run.add_argument("config", nargs="?", type=Path, default=None, help="config JSON (省略時は組み込みの desk スイート)")
    p_run.add_argument("--threads", default=None, type=int, help="局所問題の並列数 (configを上書き)")
    _add_common(p_run)

    p_init = sub.add_parser("init", help="組み込みの desk スイートを config JSON として書き出し")
    p_init.add_argument("path", type=Path)
    p_init.add_argument("--force", action="store_true", help="既存ファイルがあっても上書き")

    p_png = sub.add_parser("coeff-png", help="係数 log10 A (と |V|/k^2) をPNGで書き出し")
    p_png.add_argument("config", type=Path)
    p_png.add_argument("--experiment", default=0, type=int, help="experiments の番号 (0始まり)")
    _add_common(p_png)

    args = parser.parse_args(argv)

    if args.cmd == "init":
        _configure_logging(False, False)
        try:
            path = write_default_config(args.path, force=args.force)
        except FileExistsError as e:
            logger.error("%s", e)
            return 2
        logger.info("wrote %s", path)
        return 0

    _configure_logging(args.verbose, args.quiet)
    try:
        suite = load_config(
            args.config,
            scale=args.scale,
            out_dir=args.out,
            threads=getattr(args, "threads", None),
        )
    except (FileNotFoundError, ValueError) as e:
        logger.error("config error: %s", e)
        return 2

    if args.cmd == "run":
        result = run_suite(suite, scale=args.scale)
        if result.n_failed:
            logger.warning("%d of %d rows failed", result.n_failed, len(result.rows))
            return 1
        return 0
    if args.cmd == "coeff-png":
        if not 0 <= args.experiment < len(suite.experiments):
            logger.error("config error: --experiment %d out of range (0..%d)", args.experiment, len(suite.experiments) - 1)
            return 2
        cfg = suite.experiments[args.experiment]
        spec = make_scenario(cfg.scenario, cfg.params)
        mesh = build_mesh(cfg.nc[0], cfg.refine(cfg.nc[0]), spec.bc_layout)
        write_coefficient_pngs(mesh, spec, suite.out_dir / suite.name, cfg.label)
        return 0

    parser.error("unknown command")
    return 2

"""Командная строка: solve-rs, oracle, compare, single-agent."""

import argparse
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from app.config.config import AppSettings, ConfigError, RunConfig, load_config
from app.logger.logger import disable_file_log, enable_file_log, logger
from app.metrics.metrics import export_metrics
from app.models.arrays import FieldPath
from app.models.models import ErrorResponse
from app.service.agent import single_agent_pipeline
from app.service.artifacts import (
    CompareInputError,
    compare_summaries,
    load_summary,
    write_json,
    write_oracle_artifacts,
    write_rs_artifacts,
    write_single_agent_artifacts,
)
from app.service.errors import SolverError
from app.service.oracle import quenched_average
from app.service.rs_solver import solve_rs

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_NOT_CONVERGED = 2
EXIT_COMPARE_FAILED = 3

settings = AppSettings()


@contextmanager
def run_context(run_dir: Path) -> Iterator[Path]:
    """run.log на время запуска и metrics.prom по его завершении."""
    run_dir = Path(run_dir)
    handler = enable_file_log(run_dir / "run.log")
    try:
        yield run_dir
    finally:
        export_metrics(run_dir / "metrics.prom")
        disable_file_log(handler)


def cmd_solve_rs(config: RunConfig) -> int:
    with run_context(config.run_dir(settings)) as run_dir:
        state = solve_rs(config.model, config.solver, config.space_grid, config.time_grid)
        summary = write_rs_artifacts(state, config, run_dir)
    if not summary.converged:
        logger.warning(f"[CLI] Итерации не сошлись за {summary.iterations}; результаты записаны")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_oracle(config: RunConfig) -> int:
    oracle = config.oracle
    if oracle.mode == "riccati" and not config.model.is_quadratic():
        raise ValueError("oracle.mode = riccati требует квадратичных model.nu_coeffs и model.phi_coeffs")
    with run_context(config.run_dir(settings)) as run_dir:
        estimate = quenched_average(
            config.model,
            N=oracle.N,
            n_instances=oracle.n_instances,
            mode=oracle.mode,
            n_paths=oracle.n_paths,
            rng=np.random.default_rng(oracle.seed),
            tg=config.time_grid,
        )
        write_oracle_artifacts(estimate, config, run_dir)
    return EXIT_OK


def cmd_single_agent(config: RunConfig) -> int:
    solver = config.solver
    tg = config.time_grid
    with run_context(config.run_dir(settings)) as run_dir:
        pipeline = single_agent_pipeline(
            config.model,
            FieldPath.zeros(tg),
            config.space_grid,
            tg,
            floor=solver.floor,
            u_max=solver.u_max,
            substeps=solver.fp_substeps,
        )
        summary = write_single_agent_artifacts(pipeline, config, run_dir, debug=settings.debug)
    logger.info(f"[CLI] −ln ψ(0,0) = {summary.cost!r}")
    return EXIT_OK


def cmd_compare(rs_path: Path, oracle_path: Path, output_dir: Optional[Path] = None) -> int:
    report = compare_summaries(load_summary(rs_path), load_summary(oracle_path))
    output_dir = Path(output_dir) if output_dir is not None else Path(settings.output_root)
    write_json(output_dir / "compare.json", report)
    sys.stdout.write(report.model_dump_json(indent=2) + "\n")
    if not report.passed:
        logger.warning(
            f"[CLI] |Δr₀| = {report.difference:.3e} больше допуска {report.tolerance:.3e}"
        )
        return EXIT_COMPARE_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rscontrol",
        description="Среднеполевое решение задачи стохастического управления со случайными связями",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Подробный лог (DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve-rs", "Итерации самосогласования D, F и стоимость r₀"),
        ("oracle", "Конечномерный оракул (Риккати или Фейнман–Кац)"),
        ("single-agent", "Одночастичная задача без полей"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", type=Path, help="Файл конфигурации section.key = value")
    compare = sub.add_parser("compare", help="Сравнение двух итогов с допуском")
    compare.add_argument("rs_summary", type=Path)
    compare.add_argument("oracle_summary", type=Path)
    compare.add_argument("-o", "--output", type=Path, default=None, help="Каталог для compare.json")
    return parser


def _fail(command: str, error: str, detail: str) -> int:
    logger.error(f"[CLI] {command}: {detail}")
    response = ErrorResponse(error=error, detail=detail, command=command)
    sys.stderr.write(response.model_dump_json() + "\n")
    return EXIT_FATAL


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logger.setLevel(logging.DEBUG)
    try:
        if args.command == "compare":
            return cmd_compare(args.rs_summary, args.oracle_summary, args.output)
        config = load_config(args.config, settings)
        logger.info(f"[CLI] {args.command}: конфигурация {args.config}, каталог {config.run_dir(settings)}")
        handlers = {
            "solve-rs": cmd_solve_rs,
            "oracle": cmd_oracle,
            "single-agent": cmd_single_agent,
        }
        return handlers[args.command](config)
    except ConfigError as e:
        return _fail(args.command, "config_error", str(e))
    except CompareInputError as e:
        return _fail(args.command, "compare_input", str(e))
    except SolverError as e:
        return _fail(args.command, e.error, str(e))
    except ValueError as e:
        return _fail(args.command, "invalid_argument", str(e))


if __name__ == "__main__":
    sys.exit(main())

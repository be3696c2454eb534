"""Запись результатов запуска (CSV, JSON) и чтение итогов для сравнения."""

import csv
from pathlib import Path
from typing import Annotated, Iterable, List, Sequence, Union

import numpy as np
from pydantic import Field, TypeAdapter, ValidationError

from app.config.config import RunConfig
from app.logger.logger import logger
from app.models.arrays import RSState, SinglePipeline
from app.models.models import (
    CompareReport,
    InstanceCost,
    OracleSummary,
    ResidualRow,
    RSSummary,
    SingleAgentSummary,
)
from app.service.fields import save_kernel
from app.service.oracle import QuenchedEstimate
from app.service.pde import dump_grid_function

AnySummary = Annotated[Union[RSSummary, OracleSummary], Field(discriminator="kind")]
_summary_adapter = TypeAdapter(AnySummary)


class CompareInputError(Exception):
    """Файл итогов отсутствует, повреждён или несовместим с парным."""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, document) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")


def trace_rows(state: RSState) -> List[ResidualRow]:
    return [
        ResidualRow(
            iteration=k + 1,
            delta_D=state.delta_D[k],
            delta_F=state.delta_F[k],
            ess_mean=state.ess_mean[k],
            ess_min=state.ess_min[k],
            low_ess_fraction=state.low_ess_fraction[k],
            clipped_mass=state.clipped_mass[k],
            r0=state.r0_trace[k],
            r0_stderr=state.r0_stderr_trace[k],
        )
        for k in range(state.iteration)
    ]


def write_rs_artifacts(state: RSState, config: RunConfig, run_dir: Path) -> RSSummary:
    """D.csv, F.csv, trace.csv, m_profile.csv, diag_D.csv и summary.json."""
    run_dir = Path(run_dir)
    tg = config.time_grid
    save_kernel(state.D, run_dir / "D.csv")
    save_kernel(state.F, run_dir / "F.csv")

    rows = trace_rows(state)
    fields = list(ResidualRow.model_fields)
    write_csv(run_dir / "trace.csv", fields, ([getattr(row, f) for f in fields] for row in rows))

    if state.m_profile is not None:
        write_csv(run_dir / "m_profile.csv", ["tau", "m"], zip(tg.nodes, state.m_profile))
    write_csv(run_dir / "diag_D.csv", ["tau", "D"], zip(tg.nodes, np.diag(state.D.values)))

    summary = RSSummary(
        r0=state.r0,
        r0_stderr=state.r0_stderr,
        kernel_term=state.kernel_term,
        log_norm_term=state.log_norm_term,
        converged=state.converged,
        iterations=state.iteration,
        low_ess_fraction=state.overall_low_ess_fraction,
        model=config.model,
        grid=config.grid.model_dump(),
        solver=config.solver,
    )
    write_json(run_dir / "summary.json", summary)
    logger.info(f"[CLI] Результаты RS записаны в {run_dir}")
    return summary


def write_oracle_artifacts(estimate: QuenchedEstimate, config: RunConfig, run_dir: Path) -> OracleSummary:
    """oracle.json и instances.csv."""
    run_dir = Path(run_dir)
    summary = OracleSummary(
        r0=estimate.value,
        r0_stderr=estimate.stderr,
        r0_bias_corrected=estimate.bias_corrected,
        N=config.oracle.N,
        mode=config.oracle.mode,
        refused=estimate.refused,
        instances=estimate.instances,
        model=config.model,
        oracle=config.oracle,
    )
    write_json(run_dir / "oracle.json", summary)
    fields = list(InstanceCost.model_fields)
    write_csv(
        run_dir / "instances.csv",
        fields,
        ([getattr(inst, f) for f in fields] for inst in estimate.instances),
    )
    logger.info(f"[CLI] Результаты оракула записаны в {run_dir}")
    return summary


def write_single_agent_artifacts(
    pipeline: SinglePipeline, config: RunConfig, run_dir: Path, debug: bool = False
) -> SingleAgentSummary:
    """cost.csv (срезы c(x, t)), single_agent.json; при debug ещё psi.csv и density.csv."""
    run_dir = Path(run_dir)
    dump_grid_function(pipeline.cost, run_dir / "cost.csv")
    if debug:
        dump_grid_function(pipeline.psi, run_dir / "psi.csv")
        dump_grid_function(pipeline.density, run_dir / "density.csv")
    psi_00 = pipeline.psi.at_origin()
    summary = SingleAgentSummary(
        cost=pipeline.cost.at_origin(),
        psi_00=psi_00,
        masked_nodes=pipeline.cost.masked_count,
        model=config.model,
        grid=config.grid.model_dump(),
    )
    write_json(run_dir / "single_agent.json", summary)
    return summary


def load_summary(path: Path) -> Union[RSSummary, OracleSummary]:
    """Читает summary.json или oracle.json.

    Raises:
        CompareInputError: Файл не найден или не является итогом RS/оракула
    """
    path = Path(path)
    if not path.is_file():
        raise CompareInputError(f"файл не найден: {path}")
    try:
        return _summary_adapter.validate_json(path.read_bytes())
    except ValidationError as exc:
        raise CompareInputError(f"{path}: не итог RS или оракула ({exc.error_count()} ошибок)") from exc


def compare_summaries(
    first: Union[RSSummary, OracleSummary], second: Union[RSSummary, OracleSummary]
) -> CompareReport:
    """Допуск = сумма стандартных ошибок + c/N для каждого итога оракула.

    Raises:
        CompareInputError: Итоги относятся к разным моделям
    """
    if first.model != second.model:
        raise CompareInputError("итоги относятся к разным моделям (J, ν, φ, t_f)")
    allowance = sum(
        s.oracle.finite_size_c / s.N for s in (first, second) if isinstance(s, OracleSummary)
    )
    difference = abs(first.r0 - second.r0)
    tolerance = first.r0_stderr + second.r0_stderr + allowance
    return CompareReport(
        r0_rs=first.r0,
        r0_oracle=second.r0,
        difference=difference,
        tolerance=tolerance,
        finite_size_allowance=allowance,
        passed=bool(difference <= tolerance),
    )

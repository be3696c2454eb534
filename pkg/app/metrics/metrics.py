from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

registry = CollectorRegistry()

backward_solves = Counter(
    "rscontrol_backward_solves_total", "Обратные решения уравнения для ψ", registry=registry
)
forward_solves = Counter(
    "rscontrol_forward_solves_total", "Прямые решения уравнения Фоккера–Планка", registry=registry
)
cache_hits = Counter(
    "rscontrol_solve_cache_hits_total", "Попадания в кэш одночастичных решений", registry=registry
)
particle_paths = Counter(
    "rscontrol_particle_paths_total", "Смоделированные траектории частиц", registry=registry
)
rs_iterations = Counter(
    "rscontrol_rs_iterations_total", "Итерации цикла самосогласования", registry=registry
)
oracle_instances = Counter(
    "rscontrol_oracle_instances_total", "Решённые реализации беспорядка", registry=registry
)
last_residual = Gauge(
    "rscontrol_last_residual", "Невязка ядер на последней итерации", registry=registry
)
last_ess_min = Gauge(
    "rscontrol_last_ess_min", "Минимальный ESS на последней итерации", registry=registry
)
last_clipped_mass = Gauge(
    "rscontrol_last_clipped_mass", "Доля отброшенных собственных значений", registry=registry
)


def export_metrics(path: Path) -> None:
    """Записывает метрики в текстовом формате Prometheus."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), registry)

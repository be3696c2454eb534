class SolverError(Exception):
    """Фатальная ошибка численного решателя."""

    error = "solver_error"


class GridMismatchError(SolverError):
    error = "grid_mismatch"


class NotSymmetricError(SolverError):
    error = "not_symmetric"


class PsiPositivityError(SolverError):
    """ψ стала неположительной внутри области (мало L или грубый шаг по времени)."""

    error = "psi_positivity"


class WeightCollapseError(SolverError):
    """Вес выборки ψ(0,0) не определён или все веса обнулились."""

    error = "weight_collapse"


class MassConservationError(SolverError):
    error = "mass_conservation"


class IndefiniteCouplingError(SolverError):
    """Матрица A = a·I + J не положительно определена: квадратичная модель не удерживает агентов."""

    error = "indefinite_coupling"


class RefusalRateError(SolverError):
    error = "refusal_rate"

from __future__ import annotations

from typing import Any


class KeeprateError(ValueError):
    """Base class for every validation error raised by the library."""


class ScheduleError(KeeprateError):
    def __init__(self, violations: list[str]) -> None:
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid schedule")


class DimensionMismatchError(KeeprateError):
    pass


class LayerRangeError(KeeprateError):
    pass


class RankingMismatchError(KeeprateError):
    pass


class BudgetRangeError(KeeprateError):
    def __init__(self, target: float, achievable_min: float, achievable_max: float) -> None:
        self.target = target
        self.achievable_min = achievable_min
        self.achievable_max = achievable_max
        super().__init__(
            f"target {target!r} outside achievable range [{achievable_min!r}, {achievable_max!r}]"
        )


class EnumerationBudgetError(KeeprateError):
    def __init__(self, count: int, limit: int) -> None:
        self.count = count
        self.limit = limit
        super().__init__(f"{count} schedules to enumerate exceeds the limit of {limit}")


class EvaluationError(KeeprateError):
    def __init__(self, message: str, *, point: Any = None, layer: int | None = None) -> None:
        self.message = message
        self.point = point
        self.layer = layer
        where = []
        if layer is not None:
            where.append(f"layer={layer}")
        if point is not None:
            where.append(f"point={point!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class InsufficientDataError(KeeprateError):
    pass


class OracleError(KeeprateError):
    pass

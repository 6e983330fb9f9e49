class MetrologyError(Exception):
    """Базовая ошибка вычислений"""


class DomainError(MetrologyError, ValueError):
    """Входные данные вне области определения задачи"""


class InputValidationError(MetrologyError, ValueError):
    """Некорректная структура входных данных"""


class ConvergenceError(MetrologyError, RuntimeError):
    """Численный метод не сошелся"""

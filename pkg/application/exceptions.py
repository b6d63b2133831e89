class DCNetError(Exception):
    """Базовое исключение приложения."""


class ShapeError(DCNetError, ValueError):
    """Несовпадение размерностей тензоров."""


class NumericalError(DCNetError, ArithmeticError):
    """Нечисловые значения или расходимость обучения."""


class TapeError(DCNetError, RuntimeError):
    """Некорректное использование ленты вычислений."""


class ConfigError(DCNetError, ValueError):
    """Некорректная конфигурация."""


class GenerationError(DCNetError, RuntimeError):
    """Генератор не смог построить задачу за отведённое число попыток."""


class AmbiguousPuzzleError(DCNetError):
    """
    Решатель нашёл ноль или несколько подходящих вариантов ответа.
    Attrs:
        satisfying (list[int]): Индексы вариантов, удовлетворяющих правилам.
    """

    def __init__(self, satisfying: list[int]):
        self.satisfying = satisfying
        super().__init__(
            f"Неоднозначная задача: подходящих вариантов {len(satisfying)} {satisfying}"
        )


class DatasetFormatError(DCNetError, ValueError):
    """Повреждённый или несовместимый файл набора данных/чекпоинта."""


class DataLeakError(DCNetError):
    """Задачи тестовой выборки попали в обучающую."""

from pydantic import BaseModel, Field


class AdamSettings(BaseModel):
    """Гиперпараметры Adam; скорость обучения фиксирована на всё обучение."""

    lr: float = Field(default=0.001, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)


class GradCheckReport(BaseModel):
    """
    Результат сравнения аналитического градиента с центральными разностями.
    Attrs:
        name (str): Что проверялось.
        max_relative_error (float): Максимум |a - n| / max(|a|, |n|, 1e-8).
        checked (int): Число проверенных координат.
        excluded (list[str]): Координаты в точках излома (не считаются ошибкой).
        tolerance (float): Порог прохождения.
    """

    name: str = ""
    max_relative_error: float = 0.0
    checked: int = 0
    excluded: list[str] = Field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

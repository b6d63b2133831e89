from pydantic import BaseModel, Field

from rpm_gen.models import CHOICE_PANELS, PanelConfig


class GenerationSummary(BaseModel):
    """
    Итог генерации или загрузки набора задач.
    Attrs:
        count (int): Число задач.
        config (PanelConfig): Конфигурация панелей.
        answer_histogram (list[int]): Число задач с ответом под каждым индексом.
        oracle_agreement (int): Сколько задач решатель решил с сохранённым ответом.
        oracle_checked (int): Сколько задач имели атрибуты для проверки.
    """

    count: int
    config: PanelConfig
    answer_histogram: list[int] = Field(default_factory=lambda: [0] * CHOICE_PANELS)
    oracle_agreement: int = 0
    oracle_checked: int = 0

    @property
    def oracle_passed(self) -> bool:
        return self.oracle_agreement == self.oracle_checked

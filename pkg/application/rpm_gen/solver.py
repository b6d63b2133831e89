from typing import Sequence

from exceptions import AmbiguousPuzzleError
from rpm_gen.models import (
    ALLOWED_KINDS,
    CONTEXT_PANELS,
    Attribute,
    AttributeVector,
    PanelConfig,
    Puzzle,
    RuleKind,
)
from rpm_gen.rules import Hypothesis, Row, row_hypotheses

# Каждая группа проверяется как одно поле; раскладка Grid2x2 удовлетворена,
# если подходит гипотеза либо о числе фигур, либо о маске положений.
SOLVER_FIELDS: dict[PanelConfig, tuple[tuple[Attribute, ...], ...]] = {
    PanelConfig.CENTER: ((Attribute.SHAPE,), (Attribute.SIZE,), (Attribute.FILL,)),
    PanelConfig.GRID2X2: (
        (Attribute.SHAPE,),
        (Attribute.SIZE,),
        (Attribute.FILL,),
        (Attribute.COUNT, Attribute.POSITION),
    ),
}


def _row(panels: Sequence[AttributeVector], attribute: Attribute) -> Row:
    a, b, c = (panel.value(attribute) for panel in panels)
    return a, b, c


class RuleInference:
    """
    Правила, восстановленные по первым двум строкам контекста.

    Для каждого поля хранятся все гипотезы, которые выполняются в обеих строках;
    вариант ответа принимается, если третья строка с ним удовлетворяет
    хотя бы одной гипотезе каждого поля.
    """

    def __init__(self, context: Sequence[AttributeVector], config: PanelConfig):
        """
        Args:
            context (Sequence[AttributeVector]): 8 панелей контекста построчно.
            config (PanelConfig): Конфигурация задачи.
        Raises:
            ValueError: Если панелей не 8 или конфигурация внешняя.
        """
        if len(context) != CONTEXT_PANELS:
            raise ValueError(f"Нужно 8 панелей контекста, получено {len(context)}")
        if config not in SOLVER_FIELDS:
            raise ValueError(f"Нет правил для конфигурации {config.value}")
        self.context = tuple(context)
        self.fields: list[list[Hypothesis]] = []
        for group in SOLVER_FIELDS[config]:
            hypotheses = []
            for attribute in group:
                hypotheses += self._infer(attribute)
            self.fields.append(hypotheses)

    def _infer(self, attribute: Attribute) -> list[Hypothesis]:
        first = _row(self.context[0:3], attribute)
        second = _row(self.context[3:6], attribute)
        found = [
            hypothesis
            for hypothesis in row_hypotheses(attribute)
            if hypothesis.holds(first) and hypothesis.holds(second)
        ]
        if (
            RuleKind.DISTRIBUTE_THREE in ALLOWED_KINDS[attribute]
            and len(set(first)) == 3
            and set(first) == set(second)
        ):
            found.append(
                Hypothesis(attribute, RuleKind.DISTRIBUTE_THREE, values=frozenset(first))
            )
        return found

    def accepts(self, candidate: AttributeVector) -> bool:
        third = (*self.context[6:8], candidate)
        for hypotheses in self.fields:
            if not any(h.holds(_row(third, h.attribute)) for h in hypotheses):
                return False
        return True


def satisfying_choices(puzzle: Puzzle) -> list[int]:
    provenance = puzzle.provenance
    if provenance is None:
        raise ValueError("Решатель работает только с задачами, у которых есть атрибуты")
    inference = RuleInference(provenance.context_attributes, puzzle.config)
    return [
        index
        for index, choice in enumerate(provenance.choice_attributes)
        if inference.accepts(choice)
    ]


def solve_by_rules(puzzle: Puzzle) -> int:
    """
    Решает задачу перебором правил по символьным атрибутам.
    Правила генератора и сохранённый ответ не используются.
    Args:
        puzzle (Puzzle): Задача с атрибутами.
    Returns:
        int: Индекс единственного подходящего варианта.
    Raises:
        AmbiguousPuzzleError: Если подходящих вариантов нет или их несколько.
        ValueError: Если у задачи нет атрибутов.
    """
    satisfying = satisfying_choices(puzzle)
    if len(satisfying) != 1:
        raise AmbiguousPuzzleError(satisfying)
    return satisfying[0]

from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Optional

from rpm_gen.models import (
    ALLOWED_KINDS,
    ARITHMETIC_OPS,
    PROGRESSION_STEPS,
    SET_OPS,
    VALUE_RANGES,
    Attribute,
    Operation,
    Rule,
    RuleKind,
)

Row = tuple[int, int, int]


def combine(operation: Operation, a: int, b: int) -> int:
    if operation is Operation.PLUS:
        return a + b
    if operation is Operation.MINUS:
        return a - b
    if operation is Operation.AND:
        return a & b
    if operation is Operation.OR:
        return a | b
    return a ^ b


@dataclass(frozen=True)
class Hypothesis:
    """
    Проверяемое утверждение о строке значений одного атрибута.
    Attrs:
        attribute (Attribute): Атрибут, к значениям которого применяется проверка.
        kind (RuleKind): Вид правила.
        step (Optional[int]): Шаг прогрессии.
        operation (Optional[Operation]): Бинарная операция Arithmetic/SetOp.
        values (frozenset[int]): Тройка значений DistributeThree.
    """

    attribute: Attribute
    kind: RuleKind
    step: Optional[int] = None
    operation: Optional[Operation] = None
    values: frozenset[int] = frozenset()

    def holds(self, row: Row) -> bool:
        a, b, c = row
        if self.kind is RuleKind.CONSTANT:
            return a == b == c
        if self.kind is RuleKind.PROGRESSION:
            return b - a == self.step and c - b == self.step
        if self.kind in (RuleKind.ARITHMETIC, RuleKind.SET_OP):
            return combine(self.operation, a, b) == c
        return len(set(row)) == 3 and set(row) == self.values

    @classmethod
    def from_rule(cls, rule: Rule) -> "Hypothesis":
        return cls(rule.attribute, rule.kind, rule.step, rule.operation)


def row_hypotheses(attribute: Attribute) -> list[Hypothesis]:
    """Все построчные гипотезы атрибута (без DistributeThree, у которой есть тройка)."""
    hypotheses = []
    for kind in ALLOWED_KINDS[attribute]:
        if kind is RuleKind.CONSTANT:
            hypotheses.append(Hypothesis(attribute, kind))
        elif kind is RuleKind.PROGRESSION:
            hypotheses += [
                Hypothesis(attribute, kind, step=step) for step in PROGRESSION_STEPS
            ]
        elif kind is RuleKind.ARITHMETIC:
            hypotheses += [
                Hypothesis(attribute, kind, operation=op) for op in ARITHMETIC_OPS
            ]
        elif kind is RuleKind.SET_OP:
            hypotheses += [
                Hypothesis(attribute, kind, operation=op) for op in SET_OPS
            ]
    return hypotheses


def in_range(attribute: Attribute, value: int) -> bool:
    low, high = VALUE_RANGES[attribute]
    return low <= value <= high


@lru_cache(maxsize=None)
def feasible_rows(
    attribute: Attribute,
    kind: RuleKind,
    step: Optional[int] = None,
    operation: Optional[Operation] = None,
) -> tuple[Row, ...]:
    """Все допустимые строки для построчного правила в диапазоне атрибута."""
    low, high = VALUE_RANGES[attribute]
    hypothesis = Hypothesis(attribute, kind, step, operation)
    values = range(low, high + 1)
    return tuple(row for row in product(values, repeat=3) if hypothesis.holds(row))


def is_feasible(rule: Rule) -> bool:
    if rule.kind in (RuleKind.CONSTANT, RuleKind.DISTRIBUTE_THREE):
        low, high = VALUE_RANGES[rule.attribute]
        return high - low + 1 >= (3 if rule.kind is RuleKind.DISTRIBUTE_THREE else 1)
    return bool(feasible_rows(rule.attribute, rule.kind, rule.step, rule.operation))

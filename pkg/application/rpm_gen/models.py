import hashlib
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

CONTEXT_PANELS = 8
CHOICE_PANELS = 8


class PanelConfig(str, Enum):
    """Конфигурация панели; EXTERNAL для импортированных задач без атрибутов."""

    CENTER = "center"
    GRID2X2 = "grid2x2"
    EXTERNAL = "external"


class ShapeType(str, Enum):
    TRIANGLE = "triangle"
    SQUARE = "square"
    PENTAGON = "pentagon"
    HEXAGON = "hexagon"
    CIRCLE = "circle"

    @property
    def index(self) -> int:
        return SHAPE_ORDER.index(self)


SHAPE_ORDER = list(ShapeType)


class Attribute(str, Enum):
    SHAPE = "shape_type"
    SIZE = "size_level"
    FILL = "fill_level"
    COUNT = "count"
    POSITION = "position_mask"


class RuleKind(str, Enum):
    CONSTANT = "constant"
    PROGRESSION = "progression"
    ARITHMETIC = "arithmetic"
    DISTRIBUTE_THREE = "distribute_three"
    SET_OP = "set_op"


class Operation(str, Enum):
    PLUS = "plus"
    MINUS = "minus"
    AND = "and"
    OR = "or"
    XOR = "xor"


ARITHMETIC_OPS = (Operation.PLUS, Operation.MINUS)
SET_OPS = (Operation.AND, Operation.OR, Operation.XOR)
PROGRESSION_STEPS = (-2, -1, 1, 2)

VALUE_RANGES: dict[Attribute, tuple[int, int]] = {
    Attribute.SHAPE: (0, len(SHAPE_ORDER) - 1),
    Attribute.SIZE: (1, 5),
    Attribute.FILL: (1, 5),
    Attribute.COUNT: (1, 4),
    Attribute.POSITION: (1, 15),
}

ALLOWED_KINDS: dict[Attribute, tuple[RuleKind, ...]] = {
    Attribute.SHAPE: (
        RuleKind.CONSTANT,
        RuleKind.PROGRESSION,
        RuleKind.DISTRIBUTE_THREE,
    ),
    Attribute.SIZE: (
        RuleKind.CONSTANT,
        RuleKind.PROGRESSION,
        RuleKind.ARITHMETIC,
        RuleKind.DISTRIBUTE_THREE,
    ),
    Attribute.FILL: (
        RuleKind.CONSTANT,
        RuleKind.PROGRESSION,
        RuleKind.ARITHMETIC,
        RuleKind.DISTRIBUTE_THREE,
    ),
    Attribute.COUNT: (
        RuleKind.CONSTANT,
        RuleKind.PROGRESSION,
        RuleKind.ARITHMETIC,
        RuleKind.DISTRIBUTE_THREE,
    ),
    Attribute.POSITION: (
        RuleKind.CONSTANT,
        RuleKind.DISTRIBUTE_THREE,
        RuleKind.SET_OP,
    ),
}

# Слоты 2x2 нумеруются построчно: бит 0 - левый верхний, бит 3 - правый нижний.
GRID_SLOTS = 4
CENTER_MASK = 1


def canonical_mask(count: int) -> int:
    """Маска из первых count слотов (используется, когда правило задаёт число)."""
    return (1 << count) - 1


class AttributeVector(BaseModel):
    """
    Символьное описание одной панели.
    Attrs:
        shape_type (ShapeType): Форма фигур.
        size_level (int): Размер 1..5.
        fill_level (int): Интенсивность заливки 1..5.
        count (int): Число фигур 1..4 (всегда popcount(position_mask)).
        position_mask (int): Занятые слоты сетки 2x2; для Center - единственный слот.
    """

    model_config = ConfigDict(frozen=True)

    shape_type: ShapeType
    size_level: int = Field(ge=1, le=5)
    fill_level: int = Field(ge=1, le=5)
    count: int = Field(default=1, ge=1, le=4)
    position_mask: int = Field(default=CENTER_MASK, ge=1, le=15)

    @model_validator(mode="after")
    def check_count(self) -> "AttributeVector":
        if self.count != bin(self.position_mask).count("1"):
            raise ValueError(
                f"count={self.count} не совпадает с маской {self.position_mask:04b}"
            )
        return self

    def value(self, attribute: Attribute) -> int:
        if attribute is Attribute.SHAPE:
            return self.shape_type.index
        return getattr(self, attribute.value)

    def with_value(self, attribute: Attribute, value: int) -> "AttributeVector":
        """Копия с изменённым атрибутом; count и маска меняются согласованно."""
        data = self.model_dump()
        if attribute is Attribute.SHAPE:
            data["shape_type"] = SHAPE_ORDER[value]
        elif attribute is Attribute.COUNT:
            data["count"] = value
            data["position_mask"] = canonical_mask(value)
        elif attribute is Attribute.POSITION:
            data["position_mask"] = value
            data["count"] = bin(value).count("1")
        else:
            data[attribute.value] = value
        return AttributeVector(**data)

    def fields(self) -> tuple[int, int, int, int]:
        """Поля для расстояния Хэмминга: форма, размер, заливка, раскладка."""
        return (
            self.shape_type.index,
            self.size_level,
            self.fill_level,
            self.position_mask,
        )

    def fits(self, config: PanelConfig) -> bool:
        if config is PanelConfig.CENTER:
            return self.count == 1 and self.position_mask == CENTER_MASK
        return True


class Rule(BaseModel):
    """
    Правило над одним атрибутом, применяемое к каждой строке.
    Attrs:
        attribute (Attribute): Управляемый атрибут.
        kind (RuleKind): Вид правила.
        step (Optional[int]): Шаг прогрессии из {-2, -1, 1, 2}.
        operation (Optional[Operation]): plus/minus для Arithmetic, and/or/xor для SetOp.
    """

    model_config = ConfigDict(frozen=True)

    attribute: Attribute
    kind: RuleKind
    step: Optional[int] = None
    operation: Optional[Operation] = None

    @model_validator(mode="after")
    def check_parameters(self) -> "Rule":
        if self.kind not in ALLOWED_KINDS[self.attribute]:
            raise ValueError(
                f"{self.kind.value} не применяется к {self.attribute.value}"
            )
        if (self.kind is RuleKind.PROGRESSION) != (self.step is not None):
            raise ValueError("Шаг задаётся только для прогрессии")
        if self.step is not None and self.step not in PROGRESSION_STEPS:
            raise ValueError(f"Недопустимый шаг прогрессии {self.step}")
        if self.kind is RuleKind.ARITHMETIC and self.operation not in ARITHMETIC_OPS:
            raise ValueError("Arithmetic требует операцию plus или minus")
        if self.kind is RuleKind.SET_OP and self.operation not in SET_OPS:
            raise ValueError("SetOp требует операцию and, or или xor")
        if self.kind not in (RuleKind.ARITHMETIC, RuleKind.SET_OP) and self.operation:
            raise ValueError(f"{self.kind.value} не принимает операцию")
        return self

    def describe(self) -> str:
        if self.step is not None:
            return f"{self.kind.value}({self.step:+d}):{self.attribute.value}"
        if self.operation is not None:
            return f"{self.kind.value}({self.operation.value}):{self.attribute.value}"
        return f"{self.kind.value}:{self.attribute.value}"


class RuleSet(BaseModel):
    """
    Набор правил задачи.
    Attrs:
        config (PanelConfig): Center или Grid2x2.
        rules (list[Rule]): От 1 до 4 правил, не более одного на атрибут.
    """

    model_config = ConfigDict(frozen=True)

    config: PanelConfig
    rules: tuple[Rule, ...] = Field(min_length=1, max_length=4)

    @model_validator(mode="after")
    def check_rules(self) -> "RuleSet":
        if self.config is PanelConfig.EXTERNAL:
            raise ValueError("Правила задаются только для Center и Grid2x2")
        attributes = [rule.attribute for rule in self.rules]
        if len(set(attributes)) != len(attributes):
            raise ValueError("Не более одного правила на атрибут")
        layout = {Attribute.COUNT, Attribute.POSITION}
        if len(layout.intersection(attributes)) > 1:
            raise ValueError("Число и положение фигур делят одно правило раскладки")
        if self.config is PanelConfig.CENTER and layout.intersection(attributes):
            raise ValueError("В конфигурации Center нет правил раскладки")
        return self

    def rule_for(self, attribute: Attribute) -> Optional[Rule]:
        for rule in self.rules:
            if rule.attribute is attribute:
                return rule
        return None


class Provenance(BaseModel):
    """
    Символьное происхождение синтетической задачи.
    Attrs:
        ruleset (RuleSet): Правила генератора.
        matrix (list[AttributeVector]): Все 9 панелей матрицы построчно.
        choice_attributes (list[AttributeVector]): Атрибуты 8 вариантов ответа.
        perturbations (list[Optional[Attribute]]): Изменённый атрибут каждого
            варианта (None у правильного ответа).
    """

    model_config = ConfigDict(frozen=True)

    ruleset: RuleSet
    matrix: tuple[AttributeVector, ...] = Field(min_length=9, max_length=9)
    choice_attributes: tuple[AttributeVector, ...] = Field(min_length=8, max_length=8)
    perturbations: tuple[Optional[Attribute], ...] = Field(min_length=8, max_length=8)

    @property
    def context_attributes(self) -> tuple[AttributeVector, ...]:
        return self.matrix[:CONTEXT_PANELS]


class Puzzle(BaseModel):
    """
    Задача RPM: 8 панелей контекста, 8 вариантов ответа и индекс ответа.
    Attrs:
        context (np.ndarray): [8, S, S] uint8, построчно без правой нижней панели.
        choices (np.ndarray): [8, S, S] uint8.
        answer (int): Индекс правильного варианта 0..7.
        config (PanelConfig): Конфигурация панелей.
        provenance (Optional[Provenance]): Атрибуты и правила синтетической задачи.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    context: np.ndarray
    choices: np.ndarray
    answer: int = Field(ge=0, le=7)
    config: PanelConfig
    provenance: Optional[Provenance] = None

    @field_validator("context", "choices")
    @classmethod
    def check_panels(cls, value: np.ndarray) -> np.ndarray:
        if value.dtype != np.uint8 or value.ndim != 3 or value.shape[0] != 8:
            raise ValueError(
                f"Ожидалось 8 панелей uint8, получено {value.dtype}{value.shape}"
            )
        if value.shape[1] != value.shape[2]:
            raise ValueError(f"Панели должны быть квадратными, форма {value.shape}")
        return value

    @model_validator(mode="after")
    def check_sizes(self) -> "Puzzle":
        if self.context.shape != self.choices.shape:
            raise ValueError("Размеры панелей контекста и вариантов различаются")
        return self

    @property
    def image_size(self) -> int:
        return int(self.context.shape[1])

    @property
    def panels(self) -> np.ndarray:
        """Все 16 изображений: контекст, затем варианты."""
        return np.concatenate([self.context, self.choices], axis=0)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha1(bytes([self.answer]))
        digest.update(self.context.tobytes())
        digest.update(self.choices.tobytes())
        return digest.hexdigest()

import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from exceptions import AmbiguousPuzzleError, GenerationError
from rpm_gen.models import (
    ALLOWED_KINDS,
    ARITHMETIC_OPS,
    CENTER_MASK,
    CHOICE_PANELS,
    CONTEXT_PANELS,
    PROGRESSION_STEPS,
    SET_OPS,
    SHAPE_ORDER,
    VALUE_RANGES,
    Attribute,
    AttributeVector,
    PanelConfig,
    Provenance,
    Puzzle,
    Rule,
    RuleKind,
    RuleSet,
    canonical_mask,
)
from rpm_gen.rasterizer import rasterize
from rpm_gen.rules import Row, feasible_rows, is_feasible
from rpm_gen.schemes import GenerationSummary
from rpm_gen.solver import RuleInference, solve_by_rules

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 1000
MAX_PUZZLE_ATTEMPTS = 200
DISTRACTORS = CHOICE_PANELS - 1

# COUNT обозначает слот раскладки: его правило управляет числом или положением.
RULE_SLOTS: dict[PanelConfig, tuple[Attribute, ...]] = {
    PanelConfig.CENTER: (Attribute.SHAPE, Attribute.SIZE, Attribute.FILL),
    PanelConfig.GRID2X2: (
        Attribute.SHAPE,
        Attribute.SIZE,
        Attribute.FILL,
        Attribute.COUNT,
    ),
}


class Distractor(NamedTuple):
    attributes: AttributeVector
    perturbed: Attribute


def _draw_rule(attribute: Attribute, rng: np.random.Generator) -> Rule:
    kinds = ALLOWED_KINDS[attribute]
    kind = kinds[int(rng.integers(len(kinds)))]
    step = operation = None
    if kind is RuleKind.PROGRESSION:
        step = PROGRESSION_STEPS[int(rng.integers(len(PROGRESSION_STEPS)))]
    elif kind is RuleKind.ARITHMETIC:
        operation = ARITHMETIC_OPS[int(rng.integers(len(ARITHMETIC_OPS)))]
    elif kind is RuleKind.SET_OP:
        operation = SET_OPS[int(rng.integers(len(SET_OPS)))]
    return Rule(attribute=attribute, kind=kind, step=step, operation=operation)


def sample_ruleset(config: PanelConfig, rng: np.random.Generator) -> RuleSet:
    """
    Случайный набор из 1..4 правил, допустимых для конфигурации.
    Неосуществимые наборы (например, прогрессия с шагом 2 по числу фигур
    или 4 правила для Center) отбрасываются и выбираются заново.
    Args:
        config (PanelConfig): Center или Grid2x2.
        rng (np.random.Generator): Источник случайности.
    Returns:
        RuleSet: Набор правил.
    Raises:
        GenerationError: После 1000 отклонений подряд.
        ValueError: Если конфигурация не поддерживает правила.
    """
    if config not in RULE_SLOTS:
        raise ValueError(f"Генерация для конфигурации {config.value} не поддерживается")
    slots = RULE_SLOTS[config]
    for _ in range(MAX_REJECTIONS):
        count = int(rng.integers(1, 5))
        if count > len(slots):
            logger.debug("Отклонено %d правил для %s", count, config.value)
            continue
        chosen = sorted(rng.choice(len(slots), size=count, replace=False))
        rules = []
        for index in chosen:
            attribute = slots[index]
            if attribute is Attribute.COUNT and rng.integers(2):
                attribute = Attribute.POSITION
            rules.append(_draw_rule(attribute, rng))
        if all(is_feasible(rule) for rule in rules):
            return RuleSet(config=config, rules=tuple(rules))
        logger.debug("Отклонён неосуществимый набор %s", [r.describe() for r in rules])
    raise GenerationError(
        f"Не удалось выбрать правила для {config.value} за {MAX_REJECTIONS} попыток"
    )


def _governed_rows(rule: Rule, rng: np.random.Generator) -> list[Row]:
    low, high = VALUE_RANGES[rule.attribute]
    if rule.kind is RuleKind.CONSTANT:
        value = int(rng.integers(low, high + 1))
        return [(value, value, value)] * 3
    if rule.kind is RuleKind.DISTRIBUTE_THREE:
        values = [int(v) for v in rng.choice(np.arange(low, high + 1), 3, replace=False)]
        return [tuple(values[shift:] + values[:shift]) for shift in range(3)]
    rows = feasible_rows(rule.attribute, rule.kind, rule.step, rule.operation)
    return [rows[int(rng.integers(len(rows)))] for _ in range(3)]


def _free_rows(attribute: Attribute, rng: np.random.Generator) -> list[Row]:
    low, high = VALUE_RANGES[attribute]
    return [(int(v),) * 3 for v in rng.integers(low, high + 1, size=3)]


def _rows_for(
    attribute: Attribute, rules: RuleSet, rng: np.random.Generator
) -> list[Row]:
    rule = rules.rule_for(attribute)
    return _governed_rows(rule, rng) if rule else _free_rows(attribute, rng)


def _instantiate_once(rules: RuleSet, rng: np.random.Generator) -> list[AttributeVector]:
    shapes = _rows_for(Attribute.SHAPE, rules, rng)
    sizes = _rows_for(Attribute.SIZE, rules, rng)
    fills = _rows_for(Attribute.FILL, rules, rng)
    if rules.config is PanelConfig.CENTER:
        masks = [(CENTER_MASK,) * 3] * 3
    elif rules.rule_for(Attribute.COUNT):
        counts = _governed_rows(rules.rule_for(Attribute.COUNT), rng)
        masks = [tuple(canonical_mask(c) for c in row) for row in counts]
    else:
        masks = _rows_for(Attribute.POSITION, rules, rng)
    return [
        AttributeVector(
            shape_type=SHAPE_ORDER[shapes[r][c]],
            size_level=sizes[r][c],
            fill_level=fills[r][c],
            count=bin(masks[r][c]).count("1"),
            position_mask=masks[r][c],
        )
        for r in range(3)
        for c in range(3)
    ]


def instantiate_matrix(
    rules: RuleSet, rng: np.random.Generator
) -> list[AttributeVector]:
    """
    Строит матрицу 3x3 атрибутов, где каждая строка выполняет все правила.
    Атрибуты без правила выбираются для каждой строки независимо
    и постоянны внутри строки.
    Args:
        rules (RuleSet): Набор правил.
        rng (np.random.Generator): Источник случайности.
    Returns:
        list[AttributeVector]: 9 панелей построчно.
    Raises:
        GenerationError: Если за 1000 попыток не получилось значений в диапазонах.
    """
    for _ in range(MAX_REJECTIONS):
        try:
            return _instantiate_once(rules, rng)
        except ValidationError as error:
            logger.debug("Матрица вне диапазонов: %s", error)
    raise GenerationError(f"Не удалось построить матрицу за {MAX_REJECTIONS} попыток")


def _distance(attribute: Attribute, a: int, b: int) -> int:
    if attribute is Attribute.POSITION:
        return bin(a ^ b).count("1")
    return abs(a - b)


def _nearest_values(
    attribute: Attribute, current: int, rng: np.random.Generator
) -> deque[int]:
    """Остальные значения от ближних к дальним; равноудалённые перемешаны."""
    low, high = VALUE_RANGES[attribute]
    others = [value for value in range(low, high + 1) if value != current]
    order = rng.permutation(len(others))
    ranked = sorted(
        range(len(others)),
        key=lambda i: (_distance(attribute, others[i], current), order[i]),
    )
    return deque(others[i] for i in ranked)


def _perturbable(rules: RuleSet) -> list[Attribute]:
    attributes = [Attribute.SHAPE, Attribute.SIZE, Attribute.FILL]
    if rules.config is PanelConfig.GRID2X2:
        governs_count = rules.rule_for(Attribute.COUNT) is not None
        attributes.append(Attribute.COUNT if governs_count else Attribute.POSITION)
    return attributes


def make_distractors(
    target: AttributeVector,
    rules: RuleSet,
    rng: np.random.Generator,
    context: Sequence[AttributeVector],
) -> list[Distractor]:
    """
    Неправильные варианты ответа: ответ с одним изменённым атрибутом.

    Атрибут выбирается равновероятно, значение берётся ближайшее ещё не
    использованное. Каждый кандидат проверяется решателем по контексту:
    принятые им кандидаты отбрасываются.
    Args:
        target (AttributeVector): Правильный ответ.
        rules (RuleSet): Правила задачи.
        rng (np.random.Generator): Источник случайности.
        context (Sequence[AttributeVector]): 8 панелей контекста.
    Returns:
        list[Distractor]: 7 попарно различных вариантов с изменённым атрибутом.
    Raises:
        GenerationError: Если 7 различных отвергаемых вариантов построить нельзя.
    """
    inference = RuleInference(context, rules.config)
    attributes = _perturbable(rules)
    queues = {
        attribute: _nearest_values(attribute, target.value(attribute), rng)
        for attribute in attributes
    }
    seen = {target}
    distractors: list[Distractor] = []
    while len(distractors) < DISTRACTORS:
        available = [attribute for attribute in attributes if queues[attribute]]
        if not available:
            raise GenerationError(
                f"Удалось построить только {len(distractors)} неправильных вариантов"
            )
        attribute = available[int(rng.integers(len(available)))]
        candidate = target.with_value(attribute, queues[attribute].popleft())
        if candidate in seen or inference.accepts(candidate):
            continue
        seen.add(candidate)
        distractors.append(Distractor(candidate, attribute))
    return distractors


def _render(
    panels: Sequence[AttributeVector],
    config: PanelConfig,
    image_size: int,
    rng: Optional[np.random.Generator],
) -> np.ndarray:
    return np.stack([rasterize(panel, image_size, rng, config) for panel in panels])


def generate_puzzle(
    config: PanelConfig,
    image_size: int,
    answer: int,
    rng: np.random.Generator,
    jitter: bool = True,
) -> tuple[Puzzle, int]:
    """
    Одна проверенная решателем задача с ответом под заданным индексом.
    Returns:
        tuple[Puzzle, int]: Задача и число отброшенных попыток.
    Raises:
        GenerationError: Если за отведённое число попыток задача не построена.
    """
    for attempt in range(MAX_PUZZLE_ATTEMPTS):
        rules = sample_ruleset(config, rng)
        matrix = instantiate_matrix(rules, rng)
        context, target = matrix[:CONTEXT_PANELS], matrix[CONTEXT_PANELS]
        try:
            distractors = make_distractors(target, rules, rng, context)
        except GenerationError as error:
            logger.debug("Задача отброшена: %s", error)
            continue
        order = rng.permutation(DISTRACTORS)
        choices = [distractors[i].attributes for i in order]
        perturbations: list[Optional[Attribute]] = [
            distractors[i].perturbed for i in order
        ]
        choices.insert(answer, target)
        perturbations.insert(answer, None)
        provenance = Provenance(
            ruleset=rules,
            matrix=tuple(matrix),
            choice_attributes=tuple(choices),
            perturbations=tuple(perturbations),
        )
        jitter_rng = rng if jitter else None
        puzzle = Puzzle(
            context=_render(context, config, image_size, jitter_rng),
            choices=_render(choices, config, image_size, jitter_rng),
            answer=answer,
            config=config,
            provenance=provenance,
        )
        try:
            solved = solve_by_rules(puzzle)
        except AmbiguousPuzzleError as error:
            logger.debug("Задача отброшена: %s", error)
            continue
        if solved == answer:
            return puzzle, attempt
        logger.debug("Задача отброшена: решатель выбрал %d вместо %d", solved, answer)
    raise GenerationError(
        f"Не удалось построить задачу {config.value} за {MAX_PUZZLE_ATTEMPTS} попыток"
    )


def balanced_answers(n: int, rng: np.random.Generator) -> np.ndarray:
    """Индексы 0..7 по кругу в случайном порядке; счётчики отличаются максимум на 1."""
    return rng.permutation(np.arange(n) % CHOICE_PANELS)


def _generate_one(
    config: PanelConfig,
    image_size: int,
    answer: int,
    seed: np.random.SeedSequence,
    jitter: bool,
) -> tuple[Puzzle, int]:
    rng = np.random.default_rng(seed)
    return generate_puzzle(config, image_size, answer, rng, jitter)


def generate_dataset(
    n: int,
    config: PanelConfig,
    image_size: int,
    seed: int,
    workers: int = 1,
    jitter: bool = True,
) -> list[Puzzle]:
    """
    Набор из n проверенных задач; результат зависит только от seed.
    Каждая задача строится из собственного зерна, порождённого от главного,
    поэтому число процессов не влияет на результат.
    Args:
        n (int): Число задач, не меньше 1.
        config (PanelConfig): Center или Grid2x2.
        image_size (int): Сторона панели в пикселях.
        seed (int): Главное зерно.
        workers (int): Число процессов генерации.
        jitter (bool): Сдвигать ли центры фигур на ±1 пиксель.
    Returns:
        list[Puzzle]: Задачи в порядке индексов.
    Raises:
        ValueError: Если n < 1.
        GenerationError: Если какую-то задачу построить не удалось.
    """
    if n < 1:
        raise ValueError(f"Число задач должно быть >= 1, получено {n}")
    root = np.random.SeedSequence(seed)
    children = root.spawn(n + 1)
    answers = balanced_answers(n, np.random.default_rng(children[0]))
    arguments = [
        (config, image_size, int(answer), child, jitter)
        for answer, child in zip(answers, children[1:])
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_generate_one, *zip(*arguments), chunksize=16))
    else:
        results = [_generate_one(*args) for args in arguments]
    rejected = sum(attempts for _, attempts in results)
    logger.info(
        "Сгенерировано задач: %d (%s, %dx%d), отброшено попыток: %d",
        n,
        config.value,
        image_size,
        image_size,
        rejected,
    )
    return [puzzle for puzzle, _ in results]


def summarize(puzzles: Sequence[Puzzle]) -> GenerationSummary:
    """Гистограмма ответов и сверка с решателем для задач с атрибутами."""
    if not puzzles:
        raise ValueError("Пустой набор задач")
    summary = GenerationSummary(count=len(puzzles), config=puzzles[0].config)
    for puzzle in puzzles:
        summary.answer_histogram[puzzle.answer] += 1
        if puzzle.provenance is None:
            continue
        summary.oracle_checked += 1
        try:
            if solve_by_rules(puzzle) == puzzle.answer:
                summary.oracle_agreement += 1
        except AmbiguousPuzzleError:
            logger.warning(
                "Решатель не нашёл единственного ответа: %s", puzzle.fingerprint
            )
    return summary

import logging
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from exceptions import DatasetFormatError
from tensor_engine import operations as ops
from tensor_engine.layers import Module
from tensor_engine.models import Mode, Parameter, RunningStats, Tape, Tensor
from tensor_engine.repositories import CheckpointAbstractRepository
from tensor_engine.schemes import AdamSettings, GradCheckReport

logger = logging.getLogger(__name__)


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    t: int,
) -> None:
    """
    Один шаг Adam с коррекцией смещения моментов; после шага градиенты обнуляются.
    Args:
        params (Iterable[Parameter]): Параметры с заполненными градиентами.
        lr (float): Скорость обучения.
        beta1 (float): Коэффициент первого момента.
        beta2 (float): Коэффициент второго момента.
        eps (float): Добавка к знаменателю.
        t (int): Номер шага, начиная с 1.
    Raises:
        ValueError: Если t < 1.
    """
    if t < 1:
        raise ValueError(f"Номер шага Adam должен быть >= 1, получено {t}")
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for param in params:
        param.step = t
        grad = param.grad
        if grad is None:
            continue
        param.adam_m *= beta1
        param.adam_m += (1.0 - beta1) * grad
        param.adam_v *= beta2
        param.adam_v += (1.0 - beta2) * grad * grad
        m_hat = param.adam_m / correction1
        v_hat = param.adam_v / correction2
        param.data[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        param.zero_grad()


class Adam:
    """
    Оптимизатор Adam поверх списка параметров.
    Хранит номер шага t; моменты лежат в самих параметрах.
    """

    def __init__(
        self, params: Sequence[Parameter], settings: Optional[AdamSettings] = None
    ):
        """
        Args:
            params (Sequence[Parameter]): Обучаемые параметры модели.
            settings (Optional[AdamSettings]): Гиперпараметры.
        """
        self.params = list(params)
        self.settings = settings or AdamSettings()
        self.t = max((param.step for param in self.params), default=0)

    def step(self) -> None:
        self.t += 1
        adam_step(
            self.params,
            self.settings.lr,
            self.settings.beta1,
            self.settings.beta2,
            self.settings.eps,
            self.t,
        )

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _sample_coordinates(
    analytic: np.ndarray, samples: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Выбирает координаты для проверки, предпочитая те, где градиент заметен:
    на почти нулевых производных относительная ошибка определяется шумом округления.
    """
    flat = np.abs(analytic.reshape(-1))
    count = min(samples, flat.size)
    peak = flat.max()
    significant = np.flatnonzero(flat >= 1e-3 * peak) if peak > 0 else np.arange(0)
    if significant.size >= count:
        return rng.choice(significant, size=count, replace=False)
    rest = np.setdiff1d(np.arange(flat.size), significant)
    extra = rng.choice(rest, size=count - significant.size, replace=False)
    return np.concatenate([significant, extra])


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    samples: int = 4,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
    name: str = "",
) -> GradCheckReport:
    """
    Сравнивает градиенты ленты с центральными разностями на выбранных координатах.

    Координата исключается как точка излома (а не считается ошибкой), если
    центральная разность расходится с аналитикой, а скачок между
    односторонними разностями не уменьшается при делении шага пополам.
    Args:
        f (Callable[[], Tensor]): Детерминированная скалярная функция входов.
        inputs (Sequence[Tensor]): Тензоры, по которым проверяются градиенты.
        samples (int): Сколько координат проверять в каждом входе.
        step (float): Шаг конечных разностей.
        tolerance (float): Порог относительной ошибки.
        seed (int): Зерно выбора координат.
        name (str): Имя проверки для отчёта.
    Returns:
        GradCheckReport: Максимальная относительная ошибка и исключённые координаты.
    """
    rng = np.random.default_rng(seed)
    for tensor in inputs:
        tensor.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    analytic = [
        tensor.grad.copy() if tensor.grad is not None else np.zeros_like(tensor.data)
        for tensor in inputs
    ]

    def evaluate() -> float:
        return f().item()

    report = GradCheckReport(name=name, tolerance=tolerance)
    for position, (tensor, grad) in enumerate(zip(inputs, analytic)):
        flat_data = tensor.data.reshape(-1)
        for index in _sample_coordinates(grad, samples, rng):
            original = flat_data[index]

            def shifted(delta: float) -> float:
                flat_data[index] = original + delta
                try:
                    return evaluate()
                finally:
                    flat_data[index] = original

            plus, minus = shifted(step), shifted(-step)
            numeric = (plus - minus) / (2.0 * step)
            expected = float(grad.reshape(-1)[index])
            error = _relative_error(expected, numeric)
            if error >= tolerance:
                center = evaluate()
                jump = abs((plus - center) - (center - minus)) / step
                half = step / 2.0
                jump_half = abs(
                    (shifted(half) - center) - (center - shifted(-half))
                ) / half
                scale = max(abs(plus - center), abs(center - minus)) / step
                if jump >= 0.1 * scale and jump_half > 0.75 * jump:
                    label = tensor.name or f"input{position}"
                    report.excluded.append(f"{label}[{int(index)}]")
                    continue
            report.checked += 1
            report.max_relative_error = max(report.max_relative_error, error)
    for tensor in inputs:
        tensor.zero_grad()
    return report


def gradcheck_suite(
    samples: int = 4, tolerance: float = 1e-4, seed: int = 0
) -> list[GradCheckReport]:
    """
    Проверка градиентов каждой операции движка на случайных входах.
    Args:
        samples (int): Координат на каждый вход.
        tolerance (float): Порог относительной ошибки.
        seed (int): Зерно входов и выбора координат.
    Returns:
        list[GradCheckReport]: Отчёт на каждую операцию.
    """
    rng = np.random.default_rng(seed)

    def leaf(*shape: int, name: str) -> Tensor:
        return Tensor(rng.normal(size=shape), requires_grad=True, name=name)

    x4 = leaf(2, 3, 6, 6, name="x")
    kernel = leaf(4, 3, 3, 3, name="weight")
    bias = leaf(4, name="bias")
    gamma, beta = leaf(3, name="gamma"), leaf(3, name="beta")
    x2, w2, b2 = leaf(4, 5, name="x"), leaf(5, 3, name="weight"), leaf(3, name="bias")
    a, b = leaf(3, 4, name="a"), leaf(3, 4, name="b")
    targets = np.eye(8)[[1, 6]]
    logits = leaf(2, 8, name="scores")
    stats = RunningStats.fresh(3)
    frozen = RunningStats(rng.normal(size=3), rng.uniform(0.5, 2.0, size=3), True)
    weights = np.random.default_rng(seed + 1)

    checks: list[tuple[str, Callable[[], Tensor], list[Tensor]]] = [
        (
            "conv2d",
            lambda: ops.conv2d(x4, kernel, bias, stride=2, padding=1),
            [x4, kernel, bias],
        ),
        (
            "batchnorm2d(train)",
            lambda: ops.batchnorm2d(x4, gamma, beta, stats, Mode.TRAIN),
            [x4, gamma, beta],
        ),
        (
            "batchnorm2d(eval)",
            lambda: ops.batchnorm2d(x4, gamma, beta, frozen, Mode.EVAL),
            [x4, gamma, beta],
        ),
        ("maxpool2d", lambda: ops.maxpool2d(x4, 3, 2, 1), [x4]),
        ("adaptive_avg_pool2d", lambda: ops.adaptive_avg_pool2d(x4, 4), [x4]),
        ("linear", lambda: ops.linear(x2, w2, b2), [x2, w2, b2]),
        ("relu", lambda: ops.relu(a), [a]),
        ("sigmoid", lambda: ops.sigmoid(a), [a]),
        ("add", lambda: ops.add(a, b), [a, b]),
        ("sub", lambda: ops.sub(a, b), [a, b]),
        ("mul", lambda: ops.mul(a, b), [a, b]),
        ("scale", lambda: ops.scale(a, -0.5), [a]),
        ("mean_over", lambda: ops.mean_over(x4, 1), [x4]),
        ("reshape", lambda: ops.reshape(a, (4, 3)), [a]),
        ("narrow", lambda: ops.narrow(x4, 2, 1, 3), [x4]),
        ("repeat_along", lambda: ops.repeat_along(a, 1, 3), [a]),
        (
            "dropout(train)",
            lambda: ops.dropout(a, 0.5, Mode.TRAIN, np.random.default_rng(seed)),
            [a],
        ),
        ("dropout(eval)", lambda: ops.dropout(a, 0.5, Mode.EVAL), [a]),
    ]
    reports = []
    for name, op, inputs in checks:
        projection = op().shape
        mix = Tensor(weights.normal(size=projection))

        def loss(op=op, mix=mix) -> Tensor:
            return ops.sum_all(ops.mul(op(), mix))

        reports.append(
            grad_check(loss, inputs, samples, tolerance=tolerance, seed=seed, name=name)
        )
    reports.append(
        grad_check(
            lambda: ops.bce_with_logits(logits, targets),
            [logits],
            samples,
            tolerance=tolerance,
            seed=seed,
            name="bce_with_logits",
        )
    )
    return reports


class CheckpointService:
    """
    Сервис сохранения и восстановления модели.
    Внешние зависимости: CheckpointAbstractRepository.
    """

    def __init__(self, repo: CheckpointAbstractRepository):
        """
        Args:
            repo (CheckpointAbstractRepository): Репозиторий чекпоинтов.
        """
        self.repo: CheckpointAbstractRepository = repo

    def save(self, model: Module, path: Path) -> None:
        self.repo.save(model.entries(), path)
        logger.info("Чекпоинт записан: %s", path)

    def restore(self, model: Module, path: Path) -> None:
        """
        Копирует значения и состояние Adam в существующие массивы модели,
        сохраняя связи массивов со скользящими статистиками.
        Raises:
            DatasetFormatError: Если имена или формы не совпадают с моделью.
        """
        loaded = {entry.name: entry for entry in self.repo.load(path)}
        entries = dict(model.named_entries())
        if set(loaded) != set(entries):
            missing = sorted(set(entries) - set(loaded))
            unknown = sorted(set(loaded) - set(entries))
            raise DatasetFormatError(
                f"{path}: чекпоинт не подходит к модели "
                f"(нет {missing[:3]}, лишние {unknown[:3]})"
            )
        for name, entry in entries.items():
            source = loaded[name]
            if source.shape != entry.shape:
                raise DatasetFormatError(
                    f"{path}: {name} имеет форму {source.shape}, ожидалась {entry.shape}"
                )
            entry.data[...] = source.data
            entry.adam_m[...] = source.adam_m
            entry.adam_v[...] = source.adam_v
            entry.step = source.step

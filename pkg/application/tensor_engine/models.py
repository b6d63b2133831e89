import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from exceptions import NumericalError, ShapeError, TapeError
from settings import settings

# TENSOR_DTYPE=float32 только для обучения: проверки градиентов и тесты идут в float64.
DTYPE = np.dtype(settings.TENSOR_DTYPE).type

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


class Mode(str, Enum):
    """Режим слоёв с разным поведением при обучении и выводе."""

    TRAIN = "train"
    EVAL = "eval"


class Tensor:
    """
    Плотный тензор (float64 по умолчанию), участвующий в обратном автодифференцировании.
    Attrs:
        data (np.ndarray): Значения в порядке row-major.
        requires_grad (bool): Нужно ли накапливать градиент.
        grad (Optional[np.ndarray]): Накопленный градиент той же формы.
        name (str): Имя для диагностики.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        array = np.array(data, dtype=DTYPE, copy=True)
        if array.ndim == 0:
            array = array.reshape(1)
        if 0 in array.shape:
            raise ShapeError(f"Пустая размерность в форме {array.shape}")
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional["TapeNode"] = None

    @classmethod
    def wrap(cls, data: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Оборачивает готовый массив без копирования."""
        tensor = cls.__new__(cls)
        tensor.data = np.ascontiguousarray(data, dtype=DTYPE)
        tensor.requires_grad = requires_grad
        tensor.grad = None
        tensor.name = ""
        tensor._node = None
        return tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() требует скаляр, получена форма {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class TapeNode:
    """Запись одной операции на ленте."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule
    tape: Optional["Tape"] = None


@dataclass(eq=False)
class Tape:
    """
    Упорядоченный журнал операций прямого прохода.
    Операции записываются только пока лента активна (контекстный менеджер)
    и только если у выхода requires_grad. Лента привязана к потоку.
    """

    nodes: list[TapeNode] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def record(self, node: TapeNode) -> None:
        node.tape = self
        node.output._node = node
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """
        Обратный проход: обходит записанные операции в обратном порядке,
        суммирует градиенты от всех потребителей и добавляет результат
        в grad листовых тензоров.
        Args:
            loss (Tensor): Скалярная функция потерь, полученная на этой ленте.
        Raises:
            TapeError: Если loss не скаляр или не записан на ленте.
        """
        if loss.data.size != 1:
            raise TapeError(f"backward требует скалярную потерю, форма {loss.shape}")
        if loss._node is None or loss._node.tape is not self:
            raise TapeError("Потеря не получена на этой ленте")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                if tensor.is_leaf:
                    leaves[key] = tensor

        for key, tensor in leaves.items():
            grad = grads[key]
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def _tape_stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor) -> None:
    """
    Запускает обратный проход по ленте, на которой была получена потеря.
    Args:
        loss (Tensor): Скалярная потеря.
    Raises:
        TapeError: Если потеря не скаляр или не записана на ленте.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward требует скалярную потерю, форма {loss.shape}")
    node = loss._node
    if node is None or node.tape is None:
        raise TapeError("Потеря не получена на активной ленте")
    node.tape.backward(loss)


def make_result(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    rule: BackwardRule,
) -> Tensor:
    """
    Создаёт выход операции, проверяет конечность значений и записывает
    операцию на активную ленту.
    Raises:
        NumericalError: Если результат содержит NaN или бесконечность.
    """
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"Операция {op} дала нечисловые значения")
    requires_grad = any(tensor.requires_grad for tensor in inputs)
    out = Tensor.wrap(data, requires_grad=requires_grad)
    tape = active_tape()
    if tape is not None and requires_grad:
        tape.record(TapeNode(op=op, inputs=tuple(inputs), output=out, backward=rule))
    return out


class Parameter:
    """
    Именованный обучаемый параметр с состоянием оптимизатора Adam.
    Attrs:
        name (str): Путь в модели, например encoder.conv1.weight.
        tensor (Tensor): Значения (requires_grad=True у обучаемых).
        adam_m (np.ndarray): Первый момент Adam.
        adam_v (np.ndarray): Второй момент Adam.
        step (int): Номер последнего шага оптимизатора.
    """

    def __init__(self, data: np.ndarray, trainable: bool = True, name: str = ""):
        self.name = name
        self.tensor = Tensor(data, requires_grad=trainable, name=name)
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass(eq=False)
class RunningStats:
    """
    Скользящие статистики пакетной нормализации.
    Массивы обновляются на месте, поэтому могут принадлежать параметрам модели.
    Attrs:
        mean (np.ndarray): Скользящее среднее по каналам.
        var (np.ndarray): Скользящая смещённая дисперсия по каналам.
        initialized (bool): Были ли статистики обновлены или заданы явно.
    """

    mean: np.ndarray
    var: np.ndarray
    initialized: bool = False

    @classmethod
    def fresh(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE))

    @classmethod
    def explicit(cls, channels: int) -> "RunningStats":
        """Статистики, явно заданные как среднее 0 и дисперсия 1."""
        return cls(
            np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE), True
        )

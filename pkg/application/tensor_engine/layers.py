from typing import Iterator, Optional

import numpy as np

from tensor_engine import operations as ops
from tensor_engine.models import DTYPE, Mode, Parameter, RunningStats, Tensor


class Module:
    """
    Базовый узел модели: дерево именованных параметров и подмодулей.

    Имена параметров складываются из имён атрибутов
    (например, encoder.stem.weight) в порядке их объявления.
    """

    def __init__(self):
        self.mode = Mode.TRAIN

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value

    def named_entries(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        """Все именованные записи, включая необучаемые (скользящие статистики)."""
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                value.name = path
                value.tensor.name = path
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_entries(f"{path}.")

    def named_parameters(self) -> Iterator[tuple[str, Parameter]]:
        for name, param in self.named_entries():
            if param.trainable:
                yield name, param

    def parameters(self) -> list[Parameter]:
        return [param for _, param in self.named_parameters()]

    def entries(self) -> list[Parameter]:
        return [param for _, param in self.named_entries()]

    def set_mode(self, mode: Mode) -> "Module":
        self.mode = mode
        for _, child in self.children():
            child.set_mode(mode)
        return self

    def train(self) -> "Module":
        return self.set_mode(Mode.TRAIN)

    def eval(self) -> "Module":
        return self.set_mode(Mode.EVAL)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()


def fan_in_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator):
    """Гауссова инициализация с дисперсией 2 / fan_in."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(DTYPE)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        bias: bool = False,
    ):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(
            fan_in_normal((out_channels, in_channels, kernel, kernel), fan_in, rng)
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=DTYPE)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        bias = self.bias.tensor if self.bias is not None else None
        return ops.conv2d(x, self.weight.tensor, bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """
    Пакетная нормализация с обучаемыми gamma/beta.
    Скользящие статистики заданы явно (0 и 1), поэтому режим eval доступен сразу.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=DTYPE))
        self.beta = Parameter(np.zeros(channels, dtype=DTYPE))
        self.running_mean = Parameter(np.zeros(channels, dtype=DTYPE), trainable=False)
        self.running_var = Parameter(np.ones(channels, dtype=DTYPE), trainable=False)
        self.stats = RunningStats(
            self.running_mean.data, self.running_var.data, initialized=True
        )

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(
            x,
            self.gamma.tensor,
            self.beta.tensor,
            self.stats,
            self.mode,
            self.momentum,
            self.eps,
        )


class Linear(Module):
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        zero_init: bool = False,
    ):
        super().__init__()
        if zero_init:
            weight = np.zeros((in_features, out_features), dtype=DTYPE)
        else:
            weight = fan_in_normal((in_features, out_features), in_features, rng)
        self.weight = Parameter(weight)
        self.bias = Parameter(np.zeros(out_features, dtype=DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight.tensor, self.bias.tensor)


class Dropout(Module):
    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"Вероятность dropout должна быть в [0, 1), получено {p}")
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.mode, self.rng)

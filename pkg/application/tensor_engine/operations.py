"""
Дифференцируемые операции над Tensor.

Каждая операция считает результат в numpy, а правило обратного прохода
замыкает нужные промежуточные массивы. Трансляция (broadcasting) не
поддерживается: формы операндов должны совпадать, кроме умножения на скаляр.
"""
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from exceptions import ShapeError
from tensor_engine.models import DTYPE, Mode, RunningStats, Tensor, make_result

ArrayLike = Union[Tensor, np.ndarray, Sequence[float]]


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: формы {a.shape} и {b.shape} не совпадают")


def _require_rank(op: str, tensor: Tensor, rank: int, label: str) -> None:
    if tensor.data.ndim != rank:
        raise ShapeError(f"{op}: {label} должен иметь ранг {rank}, форма {tensor.shape}")


def _out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    width = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    return np.pad(x, width, mode="constant", constant_values=value)


def _windows(x_pad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Окна свёртки [N, C, H', W', kh, kw] как view без копирования."""
    view = sliding_window_view(x_pad, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    Двумерная свёртка через развёртку окон (im2col) и одно матричное умножение.
    Args:
        x (Tensor): Вход [N, C, H, W].
        weight (Tensor): Ядра [O, C, kh, kw].
        bias (Optional[Tensor]): Смещения [O] или None.
        stride (int): Шаг, не меньше 1.
        padding (int): Нулевое дополнение по краям.
    Returns:
        Tensor: Выход [N, O, H', W'], H' = floor((H + 2p - kh) / stride) + 1.
    Raises:
        ShapeError: При несовпадении размерностей.
    """
    _require_rank("conv2d", x, 4, "вход")
    _require_rank("conv2d", weight, 4, "вес")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: каналов во входе {c}, в ядре {wc}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride={stride}, padding={padding}")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(
            f"conv2d: ядро {kh}x{kw} больше дополненного входа "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(
            f"conv2d: смещение должно иметь форму ({o},), а не {bias.shape}"
        )

    ho = _out_size(h, kh, stride, padding)
    wo = _out_size(w, kw, stride, padding)
    x_pad = _pad(x.data, padding)
    # Развёртка копируется один раз и переиспользуется в правиле для d_weight.
    cols = _windows(x_pad, kh, kw, stride).transpose(0, 2, 3, 1, 4, 5)
    cols = cols.reshape(n * ho * wo, c * kh * kw)
    w_mat = weight.data.reshape(o, c * kh * kw)
    out = cols @ w_mat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def rule(grad: np.ndarray):
        g_mat = grad.transpose(0, 2, 3, 1).reshape(-1, o)
        d_weight = None
        if weight.requires_grad:
            d_weight = (g_mat.T @ cols).reshape(weight.shape)
        d_bias = g_mat.sum(axis=0) if bias is not None and bias.requires_grad else None
        d_x = None
        if x.requires_grad:
            # [N, C, kh, kw, H', W']: один транспонированный массив на все сдвиги ядра
            d_cols = (g_mat @ w_mat).reshape(n, ho, wo, c, kh, kw)
            d_cols = np.ascontiguousarray(d_cols.transpose(0, 3, 4, 5, 1, 2))
            d_pad = np.zeros_like(x_pad)
            h_stop = stride * (ho - 1) + 1
            w_stop = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    window = (slice(i, i + h_stop, stride), slice(j, j + w_stop, stride))
                    d_pad[(slice(None), slice(None)) + window] += d_cols[:, :, i, j]
            d_x = d_pad[:, :, padding : padding + h, padding : padding + w]
        return d_x, d_weight, d_bias

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("conv2d", out, inputs, rule)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: RunningStats,
    mode: Mode,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Пакетная нормализация по осям (N, H, W) для каждого канала.

    В режиме train используется смещённая дисперсия пакета (деление на N*H*W),
    скользящие статистики обновляются той же оценкой. В режиме eval
    применяется поэлементное аффинное преобразование по скользящим статистикам.
    Raises:
        ShapeError: При несовпадении размерностей или N*H*W < 2 в режиме train.
        ValueError: Если в режиме eval статистики ещё не инициализированы.
    """
    _require_rank("batchnorm2d", x, 4, "вход")
    n, c, h, w = x.shape
    for label, tensor in (("gamma", gamma), ("beta", beta)):
        if tensor.shape != (c,):
            raise ShapeError(
                f"batchnorm2d: {label} формы {tensor.shape}, ожидалось ({c},)"
            )
    if stats.mean.shape != (c,) or stats.var.shape != (c,):
        raise ShapeError(f"batchnorm2d: скользящие статистики не для {c} каналов")
    axes = (0, 2, 3)
    g_b = gamma.data.reshape(1, c, 1, 1)
    b_b = beta.data.reshape(1, c, 1, 1)

    if mode is Mode.TRAIN:
        count = n * h * w
        if count < 2:
            raise ShapeError(
                f"batchnorm2d: в режиме train нужно N*H*W >= 2, есть {count}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.data - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
        stats.mean[...] = (1.0 - momentum) * stats.mean + momentum * mean
        stats.var[...] = (1.0 - momentum) * stats.var + momentum * var
        stats.initialized = True

        def rule(grad: np.ndarray):
            d_gamma = (grad * x_hat).sum(axis=axes)
            d_beta = grad.sum(axis=axes)
            d_xhat = grad * g_b
            d_x = (inv_std.reshape(1, c, 1, 1) / count) * (
                count * d_xhat
                - d_xhat.sum(axis=axes, keepdims=True)
                - x_hat * (d_xhat * x_hat).sum(axis=axes, keepdims=True)
            )
            return d_x, d_gamma, d_beta

    else:
        if not stats.initialized:
            raise ValueError(
                "batchnorm2d: режим eval до обновления скользящих статистик"
            )
        inv_std = 1.0 / np.sqrt(stats.var + eps)
        x_hat = (x.data - stats.mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)

        def rule(grad: np.ndarray):
            d_x = grad * g_b * inv_std.reshape(1, c, 1, 1)
            return d_x, (grad * x_hat).sum(axis=axes), grad.sum(axis=axes)

    out = x_hat * g_b + b_b
    return make_result("batchnorm2d", out, (x, gamma, beta), rule)


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """
    Оконный максимум. Градиент идёт в первый (row-major) максимальный элемент окна.
    Raises:
        ShapeError: Если окно больше дополненного входа.
    """
    _require_rank("maxpool2d", x, 4, "вход")
    n, c, h, w = x.shape
    if kernel > h + 2 * padding or kernel > w + 2 * padding:
        raise ShapeError(
            f"maxpool2d: окно {kernel} больше дополненного входа "
            f"{h + 2 * padding}x{w + 2 * padding}"
        )
    if stride < 1 or padding < 0 or padding > kernel // 2:
        raise ShapeError(
            f"maxpool2d: stride={stride}, padding={padding}, kernel={kernel}"
        )

    ho = _out_size(h, kernel, stride, padding)
    wo = _out_size(w, kernel, stride, padding)
    x_pad = _pad(x.data, padding, value=-np.inf)
    flat = _windows(x_pad, kernel, kernel, stride).reshape(n, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def rule(grad: np.ndarray):
        rows = np.arange(ho).reshape(1, 1, ho, 1) * stride + arg // kernel
        cols = np.arange(wo).reshape(1, 1, 1, wo) * stride + arg % kernel
        n_idx = np.arange(n).reshape(n, 1, 1, 1)
        c_idx = np.arange(c).reshape(1, c, 1, 1)
        d_pad = np.zeros(x_pad.shape, dtype=DTYPE)
        np.add.at(d_pad, (n_idx, c_idx, rows, cols), grad)
        return (d_pad[:, :, padding : padding + h, padding : padding + w],)

    return make_result("maxpool2d", out, (x,), rule)


def adaptive_avg_pool2d(x: Tensor, out_size: int) -> Tensor:
    """
    Среднее по out_size x out_size ячейкам; границы ячеек
    floor(i*H/out) .. ceil((i+1)*H/out), как у адаптивного пулинга.
    """
    _require_rank("adaptive_avg_pool2d", x, 4, "вход")
    n, c, h, w = x.shape
    if out_size < 1 or out_size > h or out_size > w:
        raise ShapeError(f"adaptive_avg_pool2d: {out_size} не помещается в {h}x{w}")
    h_bins = [(i * h // out_size, -(-(i + 1) * h // out_size)) for i in range(out_size)]
    w_bins = [(j * w // out_size, -(-(j + 1) * w // out_size)) for j in range(out_size)]
    out = np.empty((n, c, out_size, out_size), dtype=DTYPE)
    for i, (h0, h1) in enumerate(h_bins):
        for j, (w0, w1) in enumerate(w_bins):
            out[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))

    def rule(grad: np.ndarray):
        d_x = np.zeros_like(x.data)
        for i, (h0, h1) in enumerate(h_bins):
            for j, (w0, w1) in enumerate(w_bins):
                area = (h1 - h0) * (w1 - w0)
                d_x[:, :, h0:h1, w0:w1] += grad[:, :, i, j][:, :, None, None] / area
        return (d_x,)

    return make_result("adaptive_avg_pool2d", out, (x,), rule)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Аффинное отображение x @ W + b.
    Args:
        x (Tensor): Вход [N, D].
        weight (Tensor): Вес [D, K].
        bias (Optional[Tensor]): Смещение [K].
    Returns:
        Tensor: Выход [N, K].
    """
    _require_rank("linear", x, 2, "вход")
    _require_rank("linear", weight, 2, "вес")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear: внутренние размерности {x.shape} и {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: смещение формы {bias.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def rule(grad: np.ndarray):
        d_x = grad @ weight.data.T if x.requires_grad else None
        d_w = x.data.T @ grad if weight.requires_grad else None
        d_b = grad.sum(axis=0) if bias is not None else None
        return d_x, d_w, d_b

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result("linear", out, inputs, rule)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda grad: (grad * mask,))


def _stable_sigmoid(values: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Tensor) -> Tensor:
    """Сигмоида в устойчивой форме с ветвлением по знаку."""
    out = _stable_sigmoid(x.data)
    return make_result("sigmoid", out, (x,), lambda grad: (grad * out * (1.0 - out),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return make_result("add", a.data + b.data, (a, b), lambda grad: (grad, grad))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return make_result("sub", a.data - b.data, (a, b), lambda grad: (grad, -grad))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    return make_result(
        "mul", a.data * b.data, (a, b), lambda grad: (grad * b.data, grad * a.data)
    )


def scale(a: Tensor, s: float) -> Tensor:
    factor = float(s)
    return make_result("scale", a.data * factor, (a,), lambda grad: (grad * factor,))


def mean_over(a: Tensor, axis: int) -> Tensor:
    """Среднее по одной оси; ось удаляется из формы."""
    if a.data.ndim < 2:
        raise ShapeError(f"mean_over: нужен ранг >= 2, форма {a.shape}")
    axis = axis % a.data.ndim
    size = a.shape[axis]

    def rule(grad: np.ndarray):
        return (np.repeat(np.expand_dims(grad, axis), size, axis=axis) / size,)

    return make_result("mean_over", a.data.mean(axis=axis), (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    total = np.array([a.data.sum()])
    return make_result(
        "sum_all", total, (a,), lambda grad: (np.full_like(a.data, grad.reshape(-1)[0]),)
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as error:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from error
    return make_result("reshape", out, (a,), lambda grad: (grad.reshape(a.shape),))


def flatten(a: Tensor, from_axis: int = 1) -> Tensor:
    if not 0 <= from_axis < a.data.ndim:
        raise ShapeError(f"flatten: ось {from_axis} для формы {a.shape}")
    return reshape(a, a.shape[:from_axis] + (-1,))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Срез [start, start+length) по оси axis."""
    axis = axis % a.data.ndim
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}, {start + length}) вне оси размера {a.shape[axis]}"
        )
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def rule(grad: np.ndarray):
        d_a = np.zeros_like(a.data)
        d_a[index] = grad
        return (d_a,)

    return make_result("narrow", a.data[index], (a,), rule)


def repeat_along(a: Tensor, axis: int, n: int) -> Tensor:
    """Вставляет новую ось axis и повторяет тензор n раз вдоль неё."""
    if n < 1:
        raise ShapeError(f"repeat_along: n={n}")
    out = np.repeat(np.expand_dims(a.data, axis), n, axis=axis)
    return make_result("repeat_along", out, (a,), lambda grad: (grad.sum(axis=axis),))


def dropout(
    x: Tensor, p: float, mode: Mode, rng: Optional[np.random.Generator] = None
) -> Tensor:
    """
    Инвертированный dropout: в режиме train зануляет элементы с вероятностью p
    и масштабирует оставшиеся на 1/(1-p); в режиме eval возвращает вход.
    Raises:
        ValueError: Если p вне [0, 1).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: вероятность должна быть в [0, 1), получено {p}")
    if mode is Mode.EVAL or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: в режиме train нужен генератор случайных чисел")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result("dropout", x.data * mask, (x,), lambda grad: (grad * mask,))


def bce_with_logits(scores: Tensor, targets: ArrayLike) -> Tensor:
    """
    Бинарная кросс-энтропия по сигмоиде оценок, суммированная по задачам
    и вариантам: max(s, 0) - s*y + log(1 + exp(-|s|)).
    Args:
        scores (Tensor): Оценки [N, 8].
        targets: One-hot метки [N, 8].
    Returns:
        Tensor: Скалярная сумма потерь.
    Raises:
        ValueError: Если строка меток не one-hot.
    """
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=DTYPE)
    if y.shape != scores.shape or scores.data.ndim != 2:
        raise ShapeError(f"bce_with_logits: оценки {scores.shape}, метки {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)) or not np.all(y.sum(axis=1) == 1.0):
        raise ValueError("bce_with_logits: каждая строка меток должна быть one-hot")
    s = scores.data
    loss = np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))
    total = np.array([loss.sum()])

    def rule(grad: np.ndarray):
        return (grad.reshape(-1)[0] * (_stable_sigmoid(s) - y),)

    return make_result("bce_with_logits", total, (scores,), rule)

from typing import Optional, Union

import numpy as np

from dcnet_model.schemes import ENCODER_DOWNSAMPLE, Ablation, DCNetConfig
from exceptions import ConfigError, ShapeError
from tensor_engine import operations as ops
from tensor_engine.layers import BatchNorm2d, Conv2d, Dropout, Linear, Module
from tensor_engine.models import DTYPE, Tensor

STREAMS = 2
TRIPLES_PER_STREAM = 10
CANDIDATES = 8

# Тройки панелей (0-based): строки r1..r10, затем столбцы c1..c10.
# Панели 0..7 - контекст построчно, 8..15 - варианты ответа.
TRIPLE_INDEX = np.array(
    [(0, 1, 2), (3, 4, 5)]
    + [(6, 7, 8 + j) for j in range(CANDIDATES)]
    + [(0, 3, 6), (1, 4, 7)]
    + [(2, 5, 8 + j) for j in range(CANDIDATES)]
)


def form_triples(panels: np.ndarray) -> np.ndarray:
    """
    Подставляет каждый вариант в пропуск и собирает 10 строк и 10 столбцов.
    Args:
        panels (np.ndarray): [B, 16, S, S] uint8 или [16, S, S].
    Returns:
        np.ndarray: [B, 20, 3, S, S] типа DTYPE в [0, 1];
            тройка хранится как 3 канала.
    """
    if panels.ndim == 3:
        panels = panels[None]
    if panels.ndim != 4 or panels.shape[1] != 16:
        raise ShapeError(
            f"form_triples: ожидалось [B, 16, S, S], получено {panels.shape}"
        )
    return panels[:, TRIPLE_INDEX].astype(DTYPE) / DTYPE(255.0)


class ResidualBlock(Module):
    """Две свёртки 3x3 с BN/ReLU и проекция 1x1 с BN в обходной ветви."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, padding=1)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(out_channels)
        self.projection = Conv2d(in_channels, out_channels, 1, rng)
        self.projection_bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        shortcut = self.projection_bn(self.projection(x))
        return ops.relu(ops.add(h, shortcut))


class Encoder(Module):
    """
    Общий для строк и столбцов энкодер тройки:
    conv 7x7/2 -> BN -> ReLU -> maxpool 3x3/2 -> остаточный блок.
    Пространственный размер уменьшается в 4 раза.
    """

    def __init__(self, channels: tuple[int, int], rng: np.random.Generator):
        super().__init__()
        stem, out = channels
        self.stem = Conv2d(3, stem, 7, rng, stride=2, padding=3)
        self.stem_bn = BatchNorm2d(stem)
        self.block = ResidualBlock(stem, out, rng)

    def forward(self, x: Tensor) -> Tensor:
        size = x.shape[-1]
        if size % ENCODER_DOWNSAMPLE:
            raise ConfigError(f"Сторона входа {size} не делится на 4")
        h = ops.relu(self.stem_bn(self.stem(x)))
        h = ops.maxpool2d(h, kernel=3, stride=2, padding=1)
        return self.block(h)


def rule_contrast(features: Tensor, ablation: Ablation = Ablation.FULL) -> Tensor:
    """
    Вычитает центр двух контекстных строк из признаков 8 строк-кандидатов.
    Args:
        features (Tensor): [M, 10, C, h, w], признаки f_1..f_10 одного потока.
        ablation (Ablation): При NO_RULE_CONTRAST кандидаты возвращаются как есть.
    Returns:
        Tensor: [M, 8, C, h, w].
    """
    candidates = ops.narrow(features, 1, 2, CANDIDATES)
    if ablation is Ablation.NO_RULE_CONTRAST:
        return candidates
    m, _, c, h, w = features.shape
    first = ops.reshape(ops.narrow(features, 1, 0, 1), (m, c, h, w))
    second = ops.reshape(ops.narrow(features, 1, 1, 1), (m, c, h, w))
    centroid = ops.scale(ops.add(first, second), 0.5)
    return ops.sub(candidates, ops.repeat_along(centroid, 1, CANDIDATES))


class ChoiceContrast(Module):
    """
    Вычитает из признака каждого кандидата адаптированное среднее по кандидатам.
    Адаптивный блок - свёртка 3x3 и BN; при identity=True он тождественный.
    """

    def __init__(self, channels: int, rng: np.random.Generator, identity: bool = False):
        super().__init__()
        self.identity = identity
        self.conv = Conv2d(channels, channels, 3, rng, padding=1)
        self.bn = BatchNorm2d(channels)

    def adapt(self, centroid: Tensor) -> Tensor:
        if self.identity:
            return centroid
        return self.bn(self.conv(centroid))

    def forward(self, g: Tensor) -> Tensor:
        centroid = ops.mean_over(g, 1)
        adapted = self.adapt(centroid)
        return ops.sub(g, ops.repeat_along(adapted, 1, g.shape[1]))


class ScoreHead(Module):
    """Пулинг до pooled_size x pooled_size, затем linear -> ReLU -> dropout -> linear."""

    def __init__(
        self,
        config: DCNetConfig,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
    ):
        super().__init__()
        self.pooled_size = config.pooled_size
        self.input_dim = config.mlp_input_dim
        self.hidden = Linear(config.mlp_input_dim, config.hidden_dim, rng)
        self.dropout = Dropout(config.dropout_p, dropout_rng)
        self.output = Linear(config.hidden_dim, 1, rng, zero_init=config.zero_head)

    def forward(self, s: Tensor) -> Tensor:
        pooled = ops.flatten(ops.adaptive_avg_pool2d(s, self.pooled_size))
        if pooled.shape[1] != self.input_dim:
            raise ConfigError(
                f"Вход MLP имеет размер {pooled.shape[1]}, ожидалось {self.input_dim}"
            )
        h = self.dropout(ops.relu(self.hidden(pooled)))
        return self.output(h)


class DCNet(Module):
    """
    Сеть двойного контраста: общий энкодер строк и столбцов, контраст правил,
    контраст вариантов и MLP, оценивающий каждый из 8 вариантов.
    """

    def __init__(self, config: Optional[DCNetConfig] = None):
        """
        Args:
            config (Optional[DCNetConfig]): Конфигурация; по умолчанию DCNetConfig().
        """
        super().__init__()
        self.config = config or DCNetConfig()
        init_seed, dropout_seed = np.random.SeedSequence(self.config.seed).spawn(2)
        rng = np.random.default_rng(init_seed)
        self.encoder = Encoder(self.config.channels, rng)
        self.choice_contrast: Optional[ChoiceContrast] = None
        if self.config.ablation is not Ablation.NO_CHOICE_CONTRAST:
            self.choice_contrast = ChoiceContrast(
                self.config.channels[-1], rng, identity=self.config.identity_phi
            )
        self.head = ScoreHead(self.config, rng, np.random.default_rng(dropout_seed))

    def encode(self, triples: Tensor) -> Tensor:
        return self.encoder(triples)

    def contrast(self, features: Tensor) -> Tensor:
        """[2B, 10, C, h, w] -> [2B, 8, C, h, w]: контраст правил, затем вариантов."""
        g = rule_contrast(features, self.config.ablation)
        if self.choice_contrast is None:
            return g
        return self.choice_contrast(g)

    def score(self, h: Tensor) -> Tensor:
        """[B, 2, 8, C, h, w] -> [B, 8]: сумма потоков строк и столбцов и MLP."""
        b, _, k, c, fh, fw = h.shape
        rows = ops.reshape(ops.narrow(h, 1, 0, 1), (b * k, c, fh, fw))
        cols = ops.reshape(ops.narrow(h, 1, 1, 1), (b * k, c, fh, fw))
        return ops.reshape(self.head(ops.add(rows, cols)), (b, k))

    def forward(self, panels: np.ndarray) -> Tensor:
        """
        Оценки вариантов для пакета задач.
        Args:
            panels (np.ndarray): [B, 16, S, S] uint8.
        Returns:
            Tensor: [B, 8].
        """
        triples = form_triples(panels)
        b, _, _, size, _ = triples.shape
        if size != self.config.image_size:
            raise ConfigError(
                f"Панели {size}x{size}, модель настроена на {self.config.image_size}"
            )
        stacked = triples.reshape(b * STREAMS * TRIPLES_PER_STREAM, 3, size, size)
        x = Tensor.wrap(stacked)
        f = self.encode(x)
        _, c, fh, fw = f.shape
        f = ops.reshape(f, (b * STREAMS, TRIPLES_PER_STREAM, c, fh, fw))
        h = self.contrast(f)
        h = ops.reshape(h, (b, STREAMS, CANDIDATES, c, fh, fw))
        return self.score(h)


def predict(scores: Union[np.ndarray, Tensor]) -> np.ndarray:
    """Индекс максимальной оценки; при равенстве выбирается меньший индекс."""
    if isinstance(scores, Tensor):
        scores = scores.data
    return np.argmax(scores, axis=1)

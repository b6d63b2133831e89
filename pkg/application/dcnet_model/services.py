import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dcnet_model.models import CANDIDATES, DCNet, predict
from dcnet_model.repositories import ModelConfigAbstractRepository
from dcnet_model.schemes import DCNetConfig
from rpm_gen.models import Puzzle
from tensor_engine import operations as ops
from tensor_engine.schemes import GradCheckReport
from tensor_engine.services import CheckpointService, grad_check, gradcheck_suite

COMPOSED_CHECK_PUZZLES = 2
COMPOSED_CHECK_SIZE = 32

logger = logging.getLogger(__name__)


def stack_panels(puzzles: Sequence[Puzzle]) -> np.ndarray:
    """[B, 16, S, S] uint8: контекст и варианты каждой задачи."""
    return np.stack([puzzle.panels for puzzle in puzzles])


def score_puzzles(
    model: DCNet, puzzles: Sequence[Puzzle], batch_size: int = 32
) -> np.ndarray:
    """
    Оценки вариантов в режиме eval без записи на ленту.
    Returns:
        np.ndarray: [N, 8].
    """
    model.eval()
    chunks = [
        model(stack_panels(puzzles[start : start + batch_size])).numpy()
        for start in range(0, len(puzzles), batch_size)
    ]
    return np.concatenate(chunks, axis=0)


def predict_puzzles(
    model: DCNet, puzzles: Sequence[Puzzle], batch_size: int = 32
) -> np.ndarray:
    return predict(score_puzzles(model, puzzles, batch_size))


def composed_loss_check(
    samples: int = 4,
    tolerance: float = 1e-4,
    seed: int = 0,
    config: Optional[DCNetConfig] = None,
) -> GradCheckReport:
    """
    Проверка градиентов полной функции потерь DCNet по всем обучаемым параметрам
    (энкодер, блок выбора, MLP) на пакете из двух случайных задач.
    Модель в режиме eval: dropout выключен, нормализация по скользящим статистикам.
    Args:
        samples (int): Координат на каждый параметр.
        tolerance (float): Порог относительной ошибки.
        seed (int): Зерно весов, панелей и выбора координат.
        config (Optional[DCNetConfig]): Конфигурация; по умолчанию полная сеть 32x32.
    Returns:
        GradCheckReport: Отчёт с именем dcnet_loss.
    """
    config = config or DCNetConfig(image_size=COMPOSED_CHECK_SIZE, seed=seed)
    # нулевой последний слой обнуляет градиенты всех слоёв до него
    model = DCNet(config.model_copy(update={"zero_head": False}))
    model.eval()
    rng = np.random.default_rng(seed)
    size = config.image_size
    panels = rng.integers(
        0, 256, size=(COMPOSED_CHECK_PUZZLES, 16, size, size), dtype=np.uint8
    )
    answers = rng.integers(0, CANDIDATES, size=COMPOSED_CHECK_PUZZLES)
    targets = np.eye(CANDIDATES)[answers]
    return grad_check(
        lambda: ops.bce_with_logits(model(panels), targets),
        [param.tensor for param in model.parameters()],
        samples,
        tolerance=tolerance,
        seed=seed,
        name="dcnet_loss",
    )


def full_gradcheck_suite(
    samples: int = 4, tolerance: float = 1e-4, seed: int = 0
) -> list[GradCheckReport]:
    """Проверки каждой операции движка и составной функции потерь DCNet."""
    reports = gradcheck_suite(samples, tolerance, seed)
    reports.append(composed_loss_check(samples, tolerance, seed))
    return reports


class ModelService:
    """
    Сервис сохранения и загрузки DCNet: веса в бинарном чекпоинте,
    конфигурация в JSON рядом с ним.
    Внешние зависимости: CheckpointService, ModelConfigAbstractRepository.
    """

    def __init__(
        self, checkpoints: CheckpointService, config_repo: ModelConfigAbstractRepository
    ):
        self.checkpoints = checkpoints
        self.config_repo: ModelConfigAbstractRepository = config_repo

    def save(self, model: DCNet, path: Path) -> None:
        self.checkpoints.save(model, path)
        self.config_repo.save(model.config, path)

    def load(self, path: Path) -> DCNet:
        """
        Строит модель по сохранённой конфигурации и восстанавливает веса.
        Raises:
            FileNotFoundError: Если нет чекпоинта или его конфигурации.
            DatasetFormatError: Если чекпоинт повреждён или не подходит к модели.
        """
        if not path.is_file():
            raise FileNotFoundError(f"Чекпоинт не найден: {path}")
        model = DCNet(self.config_repo.load(path))
        self.checkpoints.restore(model, path)
        logger.info("Модель загружена из %s (%s)", path, model.config.ablation.value)
        return model

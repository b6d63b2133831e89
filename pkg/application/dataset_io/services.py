import logging
import math
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from dataset_io.repositories import DatasetAbstractRepository, ExternalAbstractRepository
from dataset_io.schemes import ImportRejection, ImportReport
from exceptions import DatasetFormatError
from rpm_gen.models import CONTEXT_PANELS, PanelConfig, Puzzle

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = (6, 2, 2)


def area_weights(source: int, target: int) -> np.ndarray:
    """
    Матрица [target, source] усреднения по площади: строка i - доли пикселей
    источника, покрываемых i-м пикселем результата. Сумма каждой строки равна 1.
    """
    edges = np.arange(target + 1, dtype=np.float64) * source / target
    low, high = edges[:-1, None], edges[1:, None]
    pixels = np.arange(source, dtype=np.float64)[None, :]
    overlap = np.clip(np.minimum(high, pixels + 1) - np.maximum(low, pixels), 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def area_resize(images: np.ndarray, size: int) -> np.ndarray:
    """
    Приводит стопку квадратных изображений [N, H, H] к [N, size, size].
    Args:
        images (np.ndarray): Изображения со значениями 0..255.
        size (int): Новая сторона.
    Returns:
        np.ndarray: uint8, значения округлены до ближайшего целого.
    """
    weights = area_weights(images.shape[-1], size)
    resized = weights @ images.astype(np.float64) @ weights.T
    return np.clip(np.rint(resized), 0, 255).astype(np.uint8)


class FoldSplit(NamedTuple):
    train: list[Puzzle]
    validation: list[Puzzle]
    test: list[Puzzle]


def subsample(puzzles: Sequence[Puzzle], fraction: float, seed: int) -> list[Puzzle]:
    """
    Случайное подмножество из floor(n * fraction) задач без повторов.
    Порядок исходного набора сохраняется, поэтому fraction=1.0 ничего не меняет.
    Args:
        puzzles (Sequence[Puzzle]): Исходный набор.
        fraction (float): Доля в (0, 1].
        seed (int): Зерно выбора.
    Returns:
        list[Puzzle]: Подмножество.
    Raises:
        ValueError: Если доля вне (0, 1] или подмножество пусто.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"Доля должна быть в (0, 1], получено {fraction}")
    # floor по десятичной записи доли: 100 * 0.29 -> 29
    size = math.floor(len(puzzles) * Fraction(str(fraction)))
    if size == 0:
        raise ValueError(f"Доля {fraction} от {len(puzzles)} задач даёт пустой набор")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(puzzles), size=size, replace=False))
    return [puzzles[int(index)] for index in chosen]


def split_folds(
    puzzles: Sequence[Puzzle],
    seed: int,
    folds: tuple[int, int, int] = DEFAULT_FOLDS,
) -> FoldSplit:
    """
    Делит набор на обучающую, валидационную и тестовую части по фолдам.
    Задачи перемешиваются по seed и режутся на sum(folds) почти равных фолдов;
    внутри каждой части исходный порядок сохраняется.
    Args:
        puzzles (Sequence[Puzzle]): Исходный набор.
        seed (int): Зерно перемешивания.
        folds (tuple[int, int, int]): Число фолдов в каждой части.
    Returns:
        FoldSplit: Три непересекающиеся части, вместе покрывающие набор.
    """
    if len(folds) != 3 or min(folds) < 1:
        raise ValueError(f"Нужны три положительных числа фолдов, получено {folds}")
    total = sum(folds)
    if len(puzzles) < total:
        raise ValueError(f"Для {total} фолдов нужно хотя бы {total} задач")
    order = np.random.default_rng(seed).permutation(len(puzzles))
    parts = np.array_split(order, total)
    bounds = np.cumsum((0, *folds))
    split = [
        np.sort(np.concatenate(parts[bounds[i] : bounds[i + 1]])) for i in range(3)
    ]
    return FoldSplit(*([puzzles[int(j)] for j in indices] for indices in split))


class DatasetService:
    """
    Сервис наборов задач: сохранение, загрузка и импорт внешних данных.
    Внешние зависимости: DatasetAbstractRepository, ExternalAbstractRepository.
    """

    def __init__(
        self, repo: DatasetAbstractRepository, external_repo: ExternalAbstractRepository
    ):
        """
        Args:
            repo (DatasetAbstractRepository): Репозиторий файлов RPMD.
            external_repo (ExternalAbstractRepository): Источник внешних задач.
        """
        self.repo: DatasetAbstractRepository = repo
        self.external_repo: ExternalAbstractRepository = external_repo

    def save(self, puzzles: Sequence[Puzzle], path: Path) -> None:
        self.repo.save(puzzles, path)
        logger.info("Записано задач: %d в %s", len(puzzles), path)

    def load(self, path: Path) -> list[Puzzle]:
        return self.repo.load(path)

    def read_one(self, path: Path, index: int) -> Puzzle:
        return self.repo.read_one(path, index)

    def import_external(
        self, directory: Path, image_size: int
    ) -> tuple[list[Puzzle], ImportReport]:
        """
        Импортирует задачи из каталога, по одному файлу на задачу, в порядке имён.
        Неподходящие файлы попадают в отчёт с причиной, импорт продолжается.
        Args:
            directory (Path): Каталог с файлами задач.
            image_size (int): Сторона панели после масштабирования.
        Returns:
            tuple[list[Puzzle], ImportReport]: Задачи без атрибутов и отчёт.
        """
        puzzles: list[Puzzle] = []
        report = ImportReport()
        for path in self.external_repo.list_files(directory):
            try:
                stack, answer = self.external_repo.read(path)
            except DatasetFormatError as error:
                logger.warning("Файл %s отклонён: %s", path.name, error)
                rejection = ImportRejection(file=path.name, reason=str(error))
                report.rejected.append(rejection)
                continue
            panels = area_resize(stack, image_size)
            puzzles.append(
                Puzzle(
                    context=panels[:CONTEXT_PANELS],
                    choices=panels[CONTEXT_PANELS:],
                    answer=answer,
                    config=PanelConfig.EXTERNAL,
                )
            )
            report.imported.append(path.name)
        logger.info(
            "Импорт из %s: принято %d, отклонено %d",
            directory,
            len(report.imported),
            len(report.rejected),
        )
        return puzzles, report

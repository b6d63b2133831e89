from pathlib import Path
from typing import Optional

from pydantic import BaseModel, Field

from dcnet_model.schemes import Ablation
from rpm_gen.models import PanelConfig


class TrainConfig(BaseModel):
    """
    Параметры обучения.
    Attrs:
        batch_size (int): Размер пакета; не меньше 2 для статистик BN.
        lr (float): Постоянная скорость обучения Adam.
        epochs (int): Число эпох.
        seed (int): Зерно перемешивания и инициализации модели.
        ablation (Ablation): Вариант модели.
        eval_every (int): Как часто (в эпохах) считать точность на тесте.
        divergence_threshold (float): Предел модуля оценок, после которого
            обучение прерывается.
        train_path (Optional[Path]): Файл обучающего набора.
        test_path (Optional[Path]): Файл тестового набора.
    """

    batch_size: int = Field(default=32, ge=2)
    lr: float = Field(default=0.001, gt=0)
    epochs: int = Field(default=20, ge=1)
    seed: int = Field(default=0, ge=0)
    ablation: Ablation = Ablation.FULL
    eval_every: int = Field(default=1, ge=1)
    divergence_threshold: float = Field(default=1e4, gt=0)
    train_path: Optional[Path] = None
    test_path: Optional[Path] = None


class EpochResult(BaseModel):
    """
    Итог одной эпохи обучения.
    Attrs:
        mean_loss (float): Средняя по задачам потеря (сумма по 8 вариантам).
        train_accuracy (float): Доля верных ответов на пакетах эпохи.
        batch_losses (list[float]): Средняя потеря каждого пакета по порядку.
    """

    mean_loss: float
    train_accuracy: float = Field(ge=0.0, le=1.0)
    batch_losses: list[float] = Field(default_factory=list)


class EpochMetrics(BaseModel):
    """Строка CSV с метриками эпохи."""

    epoch: int
    train_loss: float
    train_acc: float = Field(ge=0.0, le=1.0)
    test_acc: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    seconds: float


class AblationRow(BaseModel):
    """Строка сравнения вариантов; seed=None - среднее по зёрнам."""

    variant: Ablation
    seed: Optional[int] = None
    test_acc: float
    final_train_loss: float


class FewShotRow(BaseModel):
    fraction: float
    train_size: int
    test_acc_mean: float
    test_acc_std: float
    seeds: int


class GeneralizationRow(BaseModel):
    """
    Строка переноса: модель обучена на одной конфигурации, проверена на другой.
    Attrs:
        train_config (PanelConfig): Конфигурация обучающего набора.
        test_config (PanelConfig): Конфигурация тестового набора.
        test_set (str): Имя файла тестового набора.
        seed (Optional[int]): Зерно прогона; None - среднее по зёрнам.
        test_acc (float): Точность на тестовом наборе.
    """

    train_config: PanelConfig
    test_config: PanelConfig
    test_set: str
    seed: Optional[int] = None
    test_acc: float = Field(ge=0.0, le=1.0)

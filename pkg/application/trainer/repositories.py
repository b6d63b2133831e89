import csv
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence

from pydantic import BaseModel

from trainer.schemes import AblationRow, GeneralizationRow

EPOCH_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "seconds")
ABLATION_COLUMNS = ("variant", "seed", "test_acc", "final_train_loss")
FEW_SHOT_COLUMNS = ("fraction", "train_size", "test_acc_mean", "test_acc_std", "seeds")
GENERALIZATION_COLUMNS = ("train_config", "test_config", "test_set", "seed", "test_acc")
MEAN_LABEL = "mean"
SEEDED_ROWS = (AblationRow, GeneralizationRow)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(getattr(value, "value", value))


class MetricsAbstractRepository(ABC):
    """
    Абстрактный репозиторий табличных результатов.

    Определяет интерфейс:
    - запись строк с заданными колонками.
    """

    @abstractmethod
    def write(
        self, path: Path, columns: Sequence[str], rows: Sequence[BaseModel]
    ) -> None:
        raise NotImplementedError


class MetricsCsvRepository(MetricsAbstractRepository):
    """
    CSV с заголовком; пустое значение означает отсутствие метрики,
    у строк средних вместо seed записывается mean.
    """

    @staticmethod
    def write(path: Path, columns: Sequence[str], rows: Sequence[BaseModel]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as file:
            writer = csv.DictWriter(
                file, fieldnames=list(columns), extrasaction="ignore"
            )
            writer.writeheader()
            for row in rows:
                record = {name: _cell(value) for name, value in row}
                if isinstance(row, SEEDED_ROWS) and row.seed is None:
                    record["seed"] = MEAN_LABEL
                writer.writerow(record)

from abc import ABC, abstractmethod
from pathlib import Path

from pydantic import ValidationError

from dcnet_model.schemes import DCNetConfig
from exceptions import DatasetFormatError


def sidecar_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".json")


class ModelConfigAbstractRepository(ABC):
    """Хранилище конфигурации, с которой построена модель чекпоинта."""

    @abstractmethod
    def save(self, config: DCNetConfig, checkpoint: Path) -> None:
        raise NotImplementedError

    @abstractmethod
    def load(self, checkpoint: Path) -> DCNetConfig:
        raise NotImplementedError


class ModelConfigJsonRepository(ModelConfigAbstractRepository):
    """JSON-файл <чекпоинт>.json рядом с чекпоинтом."""

    @staticmethod
    def save(config: DCNetConfig, checkpoint: Path) -> None:
        sidecar_path(checkpoint).write_text(config.model_dump_json(indent=2), "utf-8")

    @staticmethod
    def load(checkpoint: Path) -> DCNetConfig:
        path = sidecar_path(checkpoint)
        if not path.is_file():
            raise FileNotFoundError(f"Нет конфигурации модели: {path}")
        try:
            return DCNetConfig.model_validate_json(path.read_text("utf-8"))
        except ValidationError as error:
            message = f"{path}: некорректная конфигурация: {error}"
            raise DatasetFormatError(message) from error

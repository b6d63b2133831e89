import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Sequence

import numpy as np

from exceptions import DatasetFormatError
from tensor_engine.models import Parameter
from utils.binary import BinaryReader

CHECKPOINT_MAGIC = b"DCN1"


class CheckpointAbstractRepository(ABC):
    """
    Абстрактный репозиторий для хранения параметров модели.

    Определяет интерфейс:
    - сохранение списка параметров;
    - загрузка списка параметров.
    """

    @abstractmethod
    def save(self, entries: Sequence[Parameter], path: Path) -> None:
        """
        Сохраняет параметры вместе с состоянием Adam.
        Args:
            entries (Sequence[Parameter]): Параметры и скользящие статистики.
            path (Path): Путь к файлу.
        """
        raise NotImplementedError

    @abstractmethod
    def load(self, path: Path) -> list[Parameter]:
        """
        Загружает параметры.
        Args:
            path (Path): Путь к файлу.
        Returns:
            list[Parameter]: Параметры в порядке записи.
        Raises:
            DatasetFormatError: Неверная сигнатура или обрезанный файл.
        """
        raise NotImplementedError


class CheckpointBinaryRepository(CheckpointAbstractRepository):
    """
    Бинарный чекпоинт: "DCN1", число записей (u64), затем для каждой записи
    длина имени (u32), имя в UTF-8, ранг (u32), размерности (u64),
    данные, adam_m, adam_v (float64) и номер шага (u64). Всё little-endian.
    """

    @staticmethod
    def save(entries: Sequence[Parameter], path: Path) -> None:
        names = [entry.name for entry in entries]
        if len(set(names)) != len(names):
            raise ValueError("Имена параметров в чекпоинте должны быть уникальны")
        with open(path, "wb") as file:
            file.write(CHECKPOINT_MAGIC)
            file.write(struct.pack("<Q", len(entries)))
            for entry in entries:
                name = entry.name.encode("utf-8")
                file.write(struct.pack("<I", len(name)))
                file.write(name)
                file.write(struct.pack("<I", entry.data.ndim))
                file.write(struct.pack(f"<{entry.data.ndim}Q", *entry.shape))
                for array in (entry.data, entry.adam_m, entry.adam_v):
                    file.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
                file.write(struct.pack("<Q", entry.step))

    @staticmethod
    def load(path: Path) -> list[Parameter]:
        with open(path, "rb") as file:
            reader = BinaryReader(file, str(path))
            magic = reader.take(4, "сигнатуры")
            if magic != CHECKPOINT_MAGIC:
                raise DatasetFormatError(
                    f"{path}: неверная сигнатура чекпоинта {magic!r}"
                )
            (count,) = reader.unpack("<Q", "числа записей")
            entries = []
            for _ in range(count):
                (name_length,) = reader.unpack("<I", "длины имени")
                name = reader.take(name_length, "имени").decode("utf-8")
                (rank,) = reader.unpack("<I", f"ранга {name}")
                shape = reader.unpack(f"<{rank}Q", f"размерностей {name}")
                data = reader.array("<f8", shape, f"данных {name}")
                entry = Parameter(data, name=name)
                entry.adam_m = reader.array("<f8", shape, f"adam_m {name}")
                entry.adam_v = reader.array("<f8", shape, f"adam_v {name}")
                (entry.step,) = reader.unpack("<Q", f"шага {name}")
                entries.append(entry)
            reader.expect_end()
        return entries

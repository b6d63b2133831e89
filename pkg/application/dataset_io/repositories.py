import struct
from abc import ABC, abstractmethod
from pathlib import Path
from typing import BinaryIO, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from dataset_io.schemes import (
    CONFIG_TAGS,
    DATASET_MAGIC,
    DATASET_VERSION,
    FLAG_PROVENANCE,
    HEADER_FORMAT,
    PANELS_PER_RECORD,
    PROVENANCE_SIZE,
    DatasetHeader,
)
from exceptions import DatasetFormatError
from rpm_gen.models import (
    SHAPE_ORDER,
    Attribute,
    AttributeVector,
    Operation,
    Provenance,
    Puzzle,
    Rule,
    RuleKind,
    RuleSet,
)
from utils.binary import BinaryReader

ATTRIBUTE_CODES = list(Attribute)
KIND_CODES = list(RuleKind)
OPERATION_CODES = list(Operation)
CONFIG_BY_TAG = {tag: config for config, tag in CONFIG_TAGS.items()}
NO_PERTURBATION = 255
MAX_RULES = 4


def _encode_vector(vector: AttributeVector) -> bytes:
    return bytes(
        (
            vector.shape_type.index,
            vector.size_level,
            vector.fill_level,
            vector.count,
            vector.position_mask,
        )
    )


def _decode_vector(raw: bytes) -> AttributeVector:
    shape, size, fill, count, mask = raw
    return AttributeVector(
        shape_type=SHAPE_ORDER[shape],
        size_level=size,
        fill_level=fill,
        count=count,
        position_mask=mask,
    )


def _encode_rule(rule: Rule) -> bytes:
    if rule.step is not None:
        parameter = rule.step
    elif rule.operation is not None:
        parameter = OPERATION_CODES.index(rule.operation) + 1
    else:
        parameter = 0
    return struct.pack(
        "<BBb",
        ATTRIBUTE_CODES.index(rule.attribute),
        KIND_CODES.index(rule.kind),
        parameter,
    )


def _decode_rule(raw: bytes) -> Rule:
    attribute, kind, parameter = struct.unpack("<BBb", raw)
    kind = KIND_CODES[kind]
    step = parameter if kind is RuleKind.PROGRESSION else None
    operation = None
    if kind in (RuleKind.ARITHMETIC, RuleKind.SET_OP):
        operation = OPERATION_CODES[parameter - 1]
    return Rule(
        attribute=ATTRIBUTE_CODES[attribute], kind=kind, step=step, operation=operation
    )


def encode_provenance(provenance: Provenance) -> bytes:
    rules = provenance.ruleset.rules
    chunks = [
        bytes((CONFIG_TAGS[provenance.ruleset.config], len(rules))),
        *(_encode_rule(rule) for rule in rules),
        bytes(3 * (MAX_RULES - len(rules))),
        *(_encode_vector(vector) for vector in provenance.matrix),
        *(_encode_vector(vector) for vector in provenance.choice_attributes),
        bytes(
            NO_PERTURBATION if item is None else ATTRIBUTE_CODES.index(item)
            for item in provenance.perturbations
        ),
    ]
    return b"".join(chunks)


def decode_provenance(block: bytes) -> Provenance:
    config, count = CONFIG_BY_TAG[block[0]], block[1]
    rules = tuple(_decode_rule(block[2 + 3 * i : 5 + 3 * i]) for i in range(count))
    offset = 2 + 3 * MAX_RULES
    vectors = [
        _decode_vector(block[offset + 5 * i : offset + 5 * (i + 1)]) for i in range(17)
    ]
    offset += 5 * 17
    return Provenance(
        ruleset=RuleSet(config=config, rules=rules),
        matrix=tuple(vectors[:9]),
        choice_attributes=tuple(vectors[9:]),
        perturbations=tuple(
            None if code == NO_PERTURBATION else ATTRIBUTE_CODES[code]
            for code in block[offset : offset + 8]
        ),
    )


class DatasetAbstractRepository(ABC):
    """
    Абстрактный репозиторий наборов задач.

    Определяет интерфейс:
    - сохранение набора;
    - загрузка набора целиком;
    - чтение одной записи по индексу.
    """

    @abstractmethod
    def save(self, puzzles: Sequence[Puzzle], path: Path) -> None:
        raise NotImplementedError

    @abstractmethod
    def load(self, path: Path) -> list[Puzzle]:
        raise NotImplementedError

    @abstractmethod
    def read_one(self, path: Path, index: int) -> Puzzle:
        raise NotImplementedError


class DatasetBinaryRepository(DatasetAbstractRepository):
    """
    Файл RPMD: заголовок "<4sHIHBB" (сигнатура, версия, число задач, размер
    панели, конфигурация, флаги), затем записи одинаковой длины: байт ответа,
    16 панелей uint8 построчно и, при флаге 0x01, блок атрибутов.
    """

    @staticmethod
    def header_for(puzzles: Sequence[Puzzle]) -> DatasetHeader:
        if not puzzles:
            raise ValueError("Нельзя сохранить пустой набор задач")
        first = puzzles[0]
        has_provenance = first.provenance is not None
        for index, puzzle in enumerate(puzzles):
            if puzzle.image_size != first.image_size or puzzle.config != first.config:
                raise ValueError(
                    f"Задача {index}: {puzzle.config.value} {puzzle.image_size}px "
                    f"не совпадает с {first.config.value} {first.image_size}px"
                )
            if (puzzle.provenance is not None) != has_provenance:
                raise ValueError(f"Задача {index}: атрибуты есть не у всех задач")
        return DatasetHeader(
            count=len(puzzles),
            image_size=first.image_size,
            config=first.config,
            has_provenance=has_provenance,
        )

    @staticmethod
    def save(puzzles: Sequence[Puzzle], path: Path) -> None:
        header = DatasetBinaryRepository.header_for(puzzles)
        flags = FLAG_PROVENANCE if header.has_provenance else 0
        with open(path, "wb") as file:
            file.write(
                struct.pack(
                    HEADER_FORMAT,
                    DATASET_MAGIC,
                    DATASET_VERSION,
                    header.count,
                    header.image_size,
                    CONFIG_TAGS[header.config],
                    flags,
                )
            )
            for puzzle in puzzles:
                file.write(bytes((puzzle.answer,)))
                file.write(np.ascontiguousarray(puzzle.panels, dtype=np.uint8).tobytes())
                if header.has_provenance:
                    file.write(encode_provenance(puzzle.provenance))

    @staticmethod
    def read_header(reader: BinaryReader) -> DatasetHeader:
        magic, version, count, image_size, tag, flags = reader.unpack(
            HEADER_FORMAT, "заголовка"
        )
        if magic != DATASET_MAGIC:
            raise DatasetFormatError(f"{reader.source}: неверная сигнатура {magic!r}")
        if version != DATASET_VERSION:
            raise DatasetFormatError(
                f"{reader.source}: версия {version} не поддерживается "
                f"(ожидалась {DATASET_VERSION})"
            )
        if tag not in CONFIG_BY_TAG:
            raise DatasetFormatError(f"{reader.source}: неизвестная конфигурация {tag}")
        return DatasetHeader(
            count=count,
            image_size=image_size,
            config=CONFIG_BY_TAG[tag],
            has_provenance=bool(flags & FLAG_PROVENANCE),
        )

    @staticmethod
    def read_record(
        reader: BinaryReader, header: DatasetHeader, index: int
    ) -> Puzzle:
        (answer,) = reader.unpack("<B", f"ответа задачи {index}")
        size = header.image_size
        panels = reader.array(
            "u1", (PANELS_PER_RECORD, size, size), f"изображений задачи {index}"
        )
        provenance: Optional[Provenance] = None
        try:
            if header.has_provenance:
                block = reader.take(PROVENANCE_SIZE, f"атрибутов задачи {index}")
                provenance = decode_provenance(block)
            return Puzzle(
                context=panels[:8],
                choices=panels[8:],
                answer=answer,
                config=header.config,
                provenance=provenance,
            )
        except (ValidationError, IndexError, KeyError) as error:
            raise DatasetFormatError(
                f"{reader.source}: повреждена задача {index}: {error}"
            ) from error

    @staticmethod
    def _open(file: BinaryIO, path: Path) -> tuple[BinaryReader, DatasetHeader]:
        reader = BinaryReader(file, str(path))
        return reader, DatasetBinaryRepository.read_header(reader)

    @staticmethod
    def load(path: Path) -> list[Puzzle]:
        with open(path, "rb") as file:
            reader, header = DatasetBinaryRepository._open(file, path)
            puzzles = [
                DatasetBinaryRepository.read_record(reader, header, index)
                for index in range(header.count)
            ]
            reader.expect_end()
        return puzzles

    @staticmethod
    def read_one(path: Path, index: int) -> Puzzle:
        with open(path, "rb") as file:
            reader, header = DatasetBinaryRepository._open(file, path)
            if not 0 <= index < header.count:
                raise IndexError(f"{path}: нет задачи {index} (всего {header.count})")
            file.seek(header.offset(index))
            return DatasetBinaryRepository.read_record(reader, header, index)


class ExternalAbstractRepository(ABC):
    """Источник задач во внешнем формате."""

    @abstractmethod
    def list_files(self, directory: Path) -> list[Path]:
        raise NotImplementedError

    @abstractmethod
    def read(self, path: Path) -> tuple[np.ndarray, int]:
        """
        Returns:
            tuple[np.ndarray, int]: Стопка 16 изображений и индекс ответа.
        Raises:
            DatasetFormatError: Если файл не подходит; сообщение - причина отказа.
        """
        raise NotImplementedError


class ExternalNpzRepository(ExternalAbstractRepository):
    """
    Одна задача на файл .npz: ключ image (16 x H x W, сначала 8 панелей
    контекста, затем 8 вариантов) и ключ target с индексом ответа 0..7.
    """

    @staticmethod
    def list_files(directory: Path) -> list[Path]:
        if not directory.is_dir():
            raise FileNotFoundError(f"Каталог не найден: {directory}")
        return sorted(path for path in directory.iterdir() if path.is_file())

    @staticmethod
    def read(path: Path) -> tuple[np.ndarray, int]:
        if path.suffix != ".npz":
            raise DatasetFormatError("ожидался файл .npz")
        try:
            archive = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as error:
            raise DatasetFormatError(f"не читается как .npz: {error}") from error
        with archive:
            if "image" not in archive.files:
                raise DatasetFormatError("нет массива image")
            if "target" not in archive.files:
                raise DatasetFormatError("нет индекса ответа target")
            stack = np.asarray(archive["image"])
            target = np.asarray(archive["target"])
        if stack.ndim != 3 or stack.shape[0] != PANELS_PER_RECORD:
            raise DatasetFormatError(
                f"ожидалась стопка из 16 изображений, получена форма {stack.shape}"
            )
        if stack.shape[1] != stack.shape[2]:
            raise DatasetFormatError(f"панели не квадратные: {stack.shape[1:]}")
        if target.size != 1 or not np.issubdtype(target.dtype, np.integer):
            raise DatasetFormatError(f"target должен быть целым числом, а не {target}")
        answer = int(target.reshape(-1)[0])
        if not 0 <= answer <= 7:
            raise DatasetFormatError(f"target {answer} вне диапазона 0..7")
        return stack, answer

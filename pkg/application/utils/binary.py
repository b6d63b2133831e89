import struct
from typing import BinaryIO

import numpy as np

from exceptions import DatasetFormatError


class BinaryReader:
    """
    Последовательное чтение little-endian записей из файла.
    Любая нехватка байт превращается в DatasetFormatError с указанием места.
    """

    def __init__(self, stream: BinaryIO, source: str):
        """
        Args:
            stream (BinaryIO): Открытый на чтение поток.
            source (str): Имя файла для сообщений об ошибках.
        """
        self.stream = stream
        self.source = source

    def take(self, size: int, what: str) -> bytes:
        chunk = self.stream.read(size)
        if len(chunk) != size:
            raise DatasetFormatError(
                f"{self.source}: файл обрезан при чтении {what} "
                f"(нужно {size} байт, прочитано {len(chunk)})"
            )
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype: str, shape: tuple[int, ...], what: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * itemsize, what)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def expect_end(self) -> None:
        if self.stream.read(1):
            raise DatasetFormatError(f"{self.source}: лишние байты в конце файла")

import struct

from pydantic import BaseModel, Field

from rpm_gen.models import PanelConfig

DATASET_MAGIC = b"RPMD"
DATASET_VERSION = 1
HEADER_FORMAT = "<4sHIHBB"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
PANELS_PER_RECORD = 16
# Провенанс: конфигурация, число правил, 4 правила по 3 байта,
# 9 панелей матрицы и 8 вариантов по 5 байт, 8 кодов изменённых атрибутов.
PROVENANCE_SIZE = 1 + 1 + 4 * 3 + 9 * 5 + 8 * 5 + 8
FLAG_PROVENANCE = 0x01

CONFIG_TAGS: dict[PanelConfig, int] = {
    PanelConfig.CENTER: 0,
    PanelConfig.GRID2X2: 1,
    PanelConfig.EXTERNAL: 2,
}


class DatasetHeader(BaseModel):
    """
    Заголовок файла набора задач.
    Attrs:
        count (int): Число записей.
        image_size (int): Сторона панели в пикселях.
        config (PanelConfig): Конфигурация всех задач файла.
        has_provenance (bool): Есть ли у записей блок атрибутов.
    """

    count: int = Field(ge=0)
    image_size: int = Field(ge=1)
    config: PanelConfig
    has_provenance: bool = False

    @property
    def record_size(self) -> int:
        size = 1 + PANELS_PER_RECORD * self.image_size * self.image_size
        return size + (PROVENANCE_SIZE if self.has_provenance else 0)

    def offset(self, index: int) -> int:
        return HEADER_SIZE + index * self.record_size


class ImportRejection(BaseModel):
    file: str
    reason: str


class ImportReport(BaseModel):
    """
    Итог импорта внешнего набора: каждый входной файл либо импортирован,
    либо отклонён с причиной.
    """

    imported: list[str] = Field(default_factory=list)
    rejected: list[ImportRejection] = Field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.imported) + len(self.rejected)

from pathlib import Path
from typing import Optional

import click

from dataset_io.dependiences import dataset_service
from dataset_io.services import split_folds
from exceptions import DatasetFormatError
from rpm_gen.rasterizer import MIN_IMAGE_SIZE
from settings import settings
from utils.cli import resolve_seed

SPLIT_FILES = ("train.rpmd", "val.rpmd", "test.rpmd")


@click.command("import")
@click.option(
    "--dir",
    "directory",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option(
    "--size",
    type=click.IntRange(min=MIN_IMAGE_SIZE),
    default=settings.DEFAULT_IMAGE_SIZE,
    show_default=True,
)
def import_external(directory: Path, out: Path, size: int):
    """
    Импортировать задачи внешнего набора (по одному .npz на задачу).
    Args:
        directory (Path): Каталог с файлами задач.
        out (Path): Файл набора задач.
        size (int): Сторона панели после масштабирования.
    Raises:
        DatasetFormatError: Если не подошёл ни один файл.
    """
    service = dataset_service()
    puzzles, report = service.import_external(directory, size)
    imported, rejected = len(report.imported), len(report.rejected)
    click.echo(f"импортировано: {imported}, отклонено: {rejected}")
    for rejection in report.rejected:
        click.echo(f"  {rejection.file}: {rejection.reason}")
    if not puzzles:
        raise DatasetFormatError(f"В {directory} нет ни одной подходящей задачи")
    service.save(puzzles, out)


@click.command("split")
@click.option(
    "--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True
)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option(
    "--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True
)
def split(data: Path, seed: Optional[int], out_dir: Path):
    """Разделить набор на обучающую, валидационную и тестовую части (6/2/2 фолда)."""
    seed = resolve_seed(seed)
    service = dataset_service()
    parts = split_folds(service.load(data), seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(SPLIT_FILES, parts):
        service.save(part, out_dir / name)
        click.echo(f"{name}: {len(part)}")

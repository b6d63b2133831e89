from pathlib import Path
from typing import Optional

import click

from dataset_io.dependiences import dataset_service
from exceptions import GenerationError
from rpm_gen.models import PanelConfig
from rpm_gen.rasterizer import MIN_IMAGE_SIZE
from rpm_gen.services import generate_dataset, summarize
from settings import settings
from utils.cli import resolve_seed

GENERATED_CONFIGS = [PanelConfig.CENTER.value, PanelConfig.GRID2X2.value]


@click.command("gen")
@click.option("--n", "n", type=click.IntRange(min=1), required=True)
@click.option("--config", type=click.Choice(GENERATED_CONFIGS), default="center")
@click.option(
    "--size",
    type=click.IntRange(min=MIN_IMAGE_SIZE),
    default=settings.DEFAULT_IMAGE_SIZE,
    show_default=True,
)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--workers", type=click.IntRange(min=1), default=settings.GEN_WORKERS)
def gen(n: int, config: str, size: int, seed: Optional[int], out: Path, workers: int):
    """
    Сгенерировать набор задач и записать его в файл.
    Печатает число задач, гистограмму ответов и сверку с решателем.
    Raises:
        GenerationError: Если решатель не подтвердил хотя бы одну задачу.
    """
    seed = resolve_seed(seed)
    puzzles = generate_dataset(n, PanelConfig(config), size, seed, workers=workers)
    summary = summarize(puzzles)
    click.echo(f"задач: {summary.count} ({summary.config.value}, {size}x{size})")
    histogram = " ".join(f"{i}:{c}" for i, c in enumerate(summary.answer_histogram))
    click.echo(f"ответы: {histogram}")
    click.echo(f"решатель: {summary.oracle_agreement}/{summary.oracle_checked}")
    if not summary.oracle_passed:
        raise GenerationError("Решатель не подтвердил часть задач, файл не записан")
    dataset_service().save(puzzles, out)

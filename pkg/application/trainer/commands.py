from pathlib import Path
from typing import Optional, Sequence

import click

from dataset_io.dependiences import dataset_service
from dcnet_model.dependiences import model_service
from dcnet_model.models import DCNet
from dcnet_model.schemes import Ablation, DCNetConfig
from exceptions import ConfigError, DatasetFormatError
from rpm_gen.models import Puzzle
from settings import settings
from trainer.dependiences import trainer_service
from trainer.repositories import MEAN_LABEL
from trainer.schemes import TrainConfig
from trainer.services import evaluate
from utils.cli import comma_list, resolve_seed

DEFAULT_FRACTIONS = "0.0625,0.125,0.25,0.5,1.0"
DEFAULT_SEEDS = "0,1,2"

existing_file = click.Path(exists=True, dir_okay=False, path_type=Path)
output_file = click.Path(dir_okay=False, path_type=Path)
seeds_option = click.option(
    "--seeds", default=DEFAULT_SEEDS, show_default=True, callback=comma_list(int)
)


def dataset_options(command):
    """Обучающий и тестовый наборы для команд train, fewshot и ablation."""
    command = click.option("--test", type=existing_file, required=True)(command)
    return click.option("--data", type=existing_file, required=True)(command)


def training_options(command):
    """Общие параметры обучения и модели для команд обучения."""
    for option in reversed(
        [
            click.option("--epochs", type=click.IntRange(min=1), default=20),
            click.option("--batch-size", type=click.IntRange(min=2), default=32),
            click.option(
                "--lr", type=click.FloatRange(min=0.0, min_open=True), default=0.001
            ),
            click.option(
                "--image-size",
                type=click.IntRange(min=16),
                default=None,
                help="Сторона панели модели; по умолчанию берётся из набора.",
            ),
            click.option(
                "--dropout-p",
                type=click.FloatRange(min=0.0, max=1.0, max_open=True),
                default=0.5,
            ),
        ]
    ):
        command = option(command)
    return command


def load_sets(paths: Sequence[Path]) -> list[list[Puzzle]]:
    """
    Загружает наборы с панелями одного размера.
    Raises:
        ConfigError: Если размеры панелей наборов различаются.
        DatasetFormatError: Если один из наборов пуст.
    """
    service = dataset_service()
    sets = []
    for path in paths:
        puzzles = service.load(path)
        if not puzzles:
            raise DatasetFormatError(f"{path}: набор не содержит задач")
        if sets and puzzles[0].image_size != sets[0][0].image_size:
            raise ConfigError(
                f"Размер панелей {paths[0]} ({sets[0][0].image_size}) "
                f"не совпадает с {path} ({puzzles[0].image_size})"
            )
        sets.append(puzzles)
    return sets


def load_pair(config: TrainConfig) -> tuple[list[Puzzle], list[Puzzle]]:
    """
    Загружает обучающий и тестовый наборы по путям из конфигурации обучения.
    Raises:
        ConfigError: Если пути не заданы или размеры панелей наборов различаются.
        DatasetFormatError: Если один из наборов пуст.
    """
    if config.train_path is None or config.test_path is None:
        raise ConfigError("Не заданы файлы обучающего и тестового наборов")
    train_set, test_set = load_sets([config.train_path, config.test_path])
    return train_set, test_set


def model_config_for_data(
    puzzles: list[Puzzle], image_size: Optional[int], dropout_p: float, **fields
) -> DCNetConfig:
    """
    Конфигурация DCNet под размер панелей набора.
    Raises:
        ConfigError: Если --image-size не совпадает с размером панелей.
    """
    size = puzzles[0].image_size
    if image_size is not None and image_size != size:
        raise ConfigError(f"--image-size {image_size}, а панели набора {size}x{size}")
    return DCNetConfig(image_size=size, dropout_p=dropout_p, **fields)


@click.command("train")
@dataset_options
@training_options
@click.option("--val", type=existing_file, default=None)
@click.option(
    "--ablation", type=click.Choice([a.value for a in Ablation]), default="full"
)
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--eval-every", type=click.IntRange(min=1), default=1)
@click.option("--out-ckpt", type=output_file, default=None)
@click.option("--metrics", type=output_file, default=None)
def train(
    data: Path,
    test: Path,
    epochs: int,
    batch_size: int,
    lr: float,
    image_size: Optional[int],
    dropout_p: float,
    val: Optional[Path],
    ablation: str,
    seed: Optional[int],
    eval_every: int,
    out_ckpt: Optional[Path],
    metrics: Optional[Path],
):
    """
    Обучить DCNet и записать чекпоинт и CSV метрик по эпохам.
    Raises:
        NumericalError: Если обучение разошлось.
    """
    config = TrainConfig(
        batch_size=batch_size,
        lr=lr,
        epochs=epochs,
        seed=resolve_seed(seed),
        ablation=Ablation(ablation),
        eval_every=eval_every,
        train_path=data,
        test_path=test,
    )
    train_set, test_set = load_pair(config)
    validation = dataset_service().load(val) if val is not None else None
    model = DCNet(
        model_config_for_data(
            train_set,
            image_size,
            dropout_p,
            ablation=config.ablation,
            seed=config.seed,
        )
    )
    click.echo(
        f"variant: {config.ablation.value}, seed: {config.seed}, epochs: {epochs}, "
        f"train: {len(train_set)}, test: {len(test_set)}"
    )
    history = trainer_service().fit(
        model, train_set, test_set, config, metrics, out_ckpt, validation
    )
    last = history[-1]
    click.echo(f"train_loss: {last.train_loss}, test_acc: {last.test_acc}")


@click.command("eval")
@click.option("--ckpt", type=existing_file, required=True)
@click.option("--data", type=existing_file, required=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=32)
def eval_checkpoint(ckpt: Path, data: Path, batch_size: int):
    """Точность модели из чекпоинта на наборе задач."""
    model = model_service().load(ckpt)
    puzzles = dataset_service().load(data)
    accuracy = evaluate(model, puzzles, batch_size)
    click.echo(f"accuracy: {accuracy}")


@click.command("fewshot")
@dataset_options
@training_options
@click.option(
    "--fractions",
    default=DEFAULT_FRACTIONS,
    show_default=True,
    callback=comma_list(float),
)
@seeds_option
@click.option(
    "--ablation", type=click.Choice([a.value for a in Ablation]), default="full"
)
@click.option("--out", type=output_file, required=True)
@click.option("--workers", type=click.IntRange(min=1), default=settings.RUN_WORKERS)
def fewshot(
    data: Path,
    test: Path,
    epochs: int,
    batch_size: int,
    lr: float,
    image_size: Optional[int],
    dropout_p: float,
    fractions: list[float],
    seeds: list[int],
    ablation: str,
    out: Path,
    workers: int,
):
    """
    Обучить свежие модели на долях обучающего набора и записать CSV
    с точностью на полном тестовом наборе для каждой доли.
    """
    config = TrainConfig(
        batch_size=batch_size,
        lr=lr,
        epochs=epochs,
        ablation=Ablation(ablation),
        train_path=data,
        test_path=test,
    )
    train_set, test_set = load_pair(config)
    rows = trainer_service().run_few_shot(
        fractions,
        train_set,
        test_set,
        config,
        model_config_for_data(train_set, image_size, dropout_p),
        seeds,
        workers,
        out,
    )
    for row in rows:
        click.echo(
            f"{row.fraction:g} ({row.train_size}): "
            f"{row.test_acc_mean:.4f} ± {row.test_acc_std:.4f}"
        )


@click.command("ablation")
@dataset_options
@training_options
@seeds_option
@click.option("--out", type=output_file, required=True)
@click.option("--workers", type=click.IntRange(min=1), default=settings.RUN_WORKERS)
def ablation(
    data: Path,
    test: Path,
    epochs: int,
    batch_size: int,
    lr: float,
    image_size: Optional[int],
    dropout_p: float,
    seeds: list[int],
    out: Path,
    workers: int,
):
    """Сравнить полную модель с вариантами без модулей контраста."""
    config = TrainConfig(
        batch_size=batch_size, lr=lr, epochs=epochs, train_path=data, test_path=test
    )
    train_set, test_set = load_pair(config)
    rows = trainer_service().run_ablation(
        train_set,
        test_set,
        config,
        model_config_for_data(train_set, image_size, dropout_p),
        seeds,
        workers=workers,
        out_path=out,
    )
    for row in rows:
        seed = MEAN_LABEL if row.seed is None else row.seed
        click.echo(f"{row.variant.value} {seed}: {row.test_acc:.4f}")


@click.command("generalize")
@click.option("--data", type=existing_file, required=True)
@click.option(
    "--test",
    type=existing_file,
    multiple=True,
    required=True,
    help="Тестовый набор; флаг повторяется для каждой конфигурации.",
)
@training_options
@seeds_option
@click.option(
    "--ablation", type=click.Choice([a.value for a in Ablation]), default="full"
)
@click.option("--out", type=output_file, required=True)
@click.option("--workers", type=click.IntRange(min=1), default=settings.RUN_WORKERS)
def generalize(
    data: Path,
    test: tuple[Path, ...],
    epochs: int,
    batch_size: int,
    lr: float,
    image_size: Optional[int],
    dropout_p: float,
    seeds: list[int],
    ablation: str,
    out: Path,
    workers: int,
):
    """
    Обучить модель на одной конфигурации панелей и записать CSV
    с точностью на каждом тестовом наборе, в том числе других конфигураций.
    """
    config = TrainConfig(
        batch_size=batch_size,
        lr=lr,
        epochs=epochs,
        ablation=Ablation(ablation),
        train_path=data,
    )
    train_set, *test_sets = load_sets([config.train_path, *test])
    rows = trainer_service().run_generalization(
        train_set,
        [(path.name, puzzles) for path, puzzles in zip(test, test_sets)],
        config,
        model_config_for_data(train_set, image_size, dropout_p),
        seeds,
        workers,
        out,
    )
    for row in rows:
        seed = MEAN_LABEL if row.seed is None else row.seed
        click.echo(
            f"{row.train_config.value} -> {row.test_config.value} "
            f"({row.test_set}) {seed}: {row.test_acc:.4f}"
        )

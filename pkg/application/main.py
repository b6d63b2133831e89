import logging
import logging.config
from pathlib import Path
from typing import Optional

import click
import yaml
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from dataset_io.commands import import_external, split
from exceptions import DCNetError, NumericalError
from rpm_gen.commands import gen
from settings import settings
from tensor_engine.commands import gradcheck
from trainer.commands import ablation, eval_checkpoint, fewshot, generalize, train

EXIT_INPUT_ERROR = 2
EXIT_NUMERICAL_ERROR = 3


class CliConfigFile(BaseModel):
    """
    Значения по умолчанию для флагов подкоманды из файла key=value.
    Attrs:
        command (click.Command): Вызываемая подкоманда.
        values (dict[str, Optional[str]]): Ключи - длинные имена флагов.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    command: click.Command
    values: dict[str, Optional[str]]

    @model_validator(mode="after")
    def check_keys(self) -> "CliConfigFile":
        unknown = sorted(set(self.default_map) - self.known)
        if unknown:
            names = ", ".join(unknown)
            raise ValueError(f"Неизвестные ключи для {self.command.name}: {names}")
        return self

    @property
    def known(self) -> set[str]:
        return {param.name for param in self.command.params}

    @property
    def default_map(self) -> dict[str, Optional[str]]:
        return {key.lstrip("-").replace("-", "_"): v for key, v in self.values.items()}


def setup_logging() -> None:
    with open(settings.LOG_CONFIG, encoding="utf-8") as file:
        logging.config.dictConfig(yaml.safe_load(file))


class DCNetGroup(click.Group):
    """
    Группа команд с единым соглашением о кодах выхода:
    0 - успех, 2 - ошибка входных данных, 3 - численный сбой.
    """

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except NumericalError as error:
            click.echo(f"Численный сбой: {error}", err=True)
            ctx.exit(EXIT_NUMERICAL_ERROR)
        except FileNotFoundError as error:
            click.echo(f"Файл не найден: {error.filename or error}", err=True)
            ctx.exit(EXIT_INPUT_ERROR)
        except (DCNetError, ValueError) as error:
            click.echo(f"Ошибка: {error}", err=True)
            ctx.exit(EXIT_INPUT_ERROR)


@click.group(cls=DCNetGroup)
@click.option(
    "--config-file",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Файл key=value со значениями флагов подкоманды по умолчанию.",
)
@click.pass_context
def cli(ctx: click.Context, config_file: Optional[Path]):
    """DCNet: генерация задач, обучение и оценка."""
    if not settings.TESTING:
        setup_logging()
    if config_file is None or ctx.invoked_subcommand is None:
        return
    command = ctx.command.get_command(ctx, ctx.invoked_subcommand)
    try:
        parsed = CliConfigFile(command=command, values=dotenv_values(config_file))
    except ValidationError as error:
        message = "; ".join(item["msg"] for item in error.errors())
        raise click.UsageError(f"{config_file}: {message}", ctx)
    ctx.default_map = {ctx.invoked_subcommand: parsed.default_map}


COMMANDS = (
    gen,
    import_external,
    split,
    gradcheck,
    train,
    eval_checkpoint,
    fewshot,
    ablation,
    generalize,
)
for command in COMMANDS:
    cli.add_command(command)


if __name__ == "__main__":
    cli()

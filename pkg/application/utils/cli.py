from typing import Callable, Optional

import click
import numpy as np

SEED_RANGE = 2**32


def resolve_seed(seed: Optional[int]) -> int:
    """Возвращает seed; если он не задан, берёт его из энтропии ОС и печатает."""
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % SEED_RANGE)
        click.echo(f"seed: {seed}")
    return seed


def comma_list(cast: Callable[[str], object]) -> Callable:
    """Callback click-опции, разбирающий список через запятую."""

    def parse(ctx: click.Context, param: click.Parameter, value: Optional[str]):
        if value is None:
            return None
        try:
            return [cast(item.strip()) for item in value.split(",") if item.strip()]
        except ValueError:
            raise click.BadParameter(f"ожидался список через запятую: {value!r}")

    return parse

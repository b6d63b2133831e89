import click

from dcnet_model.services import full_gradcheck_suite
from exceptions import NumericalError
from settings import settings


@click.command("gradcheck")
@click.option(
    "--samples", type=click.IntRange(min=1), default=settings.GRADCHECK_SAMPLES
)
@click.option(
    "--tolerance",
    type=click.FloatRange(min=0.0, min_open=True),
    default=settings.GRADCHECK_TOLERANCE,
)
@click.option("--seed", type=click.IntRange(min=0), default=0, show_default=True)
def gradcheck(samples: int, tolerance: float, seed: int):
    """
    Сверить градиенты всех операций и полной функции потерь DCNet
    с конечными разностями.
    Печатает PASS/FAIL и максимальную относительную ошибку по каждой проверке;
    код выхода 3, если хотя бы одна проверка не прошла.
    """
    reports = full_gradcheck_suite(samples, tolerance, seed)
    for report in reports:
        status = "PASS" if report.passed else "FAIL"
        line = (
            f"{status} {report.name}: max rel error {report.max_relative_error:.3e} "
            f"({report.checked} checked, {len(report.excluded)} excluded)"
        )
        click.echo(line)
    failed = [report.name for report in reports if not report.passed]
    if failed:
        raise NumericalError(f"градиенты не прошли проверку: {', '.join(failed)}")

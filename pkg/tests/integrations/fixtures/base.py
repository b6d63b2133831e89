from pathlib import Path

import pytest
from click.testing import CliRunner, Result

from main import cli

TRAIN_SIZE = 16
TEST_SIZE = 6
IMAGE_SIZE = 16


def invoke(*args) -> Result:
    """Запускает команду и возвращает результат без проверки кода выхода."""
    return CliRunner().invoke(cli, [str(arg) for arg in args])


@pytest.fixture(scope="session")
def datasets(tmp_path_factory) -> tuple[Path, Path]:
    """
    Обучающий и тестовый наборы Center 16x16, сгенерированные командой gen.
    - train.rpmd: 16 задач, seed 1;
    - test.rpmd: 6 задач, seed 2.
    """
    directory = tmp_path_factory.mktemp("datasets")
    paths = []
    for name, n, seed in (("train", TRAIN_SIZE, 1), ("test", TEST_SIZE, 2)):
        path = directory / f"{name}.rpmd"
        result = invoke(
            "gen", "--n", n, "--size", IMAGE_SIZE, "--seed", seed, "--out", path
        )
        assert result.exit_code == 0, result.output
        paths.append(path)
    return paths[0], paths[1]

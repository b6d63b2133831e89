import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from dataset_io.services import subsample
from dcnet_model.models import CANDIDATES, DCNet, predict
from dcnet_model.schemes import Ablation, DCNetConfig
from dcnet_model.services import ModelService, predict_puzzles, stack_panels
from exceptions import DataLeakError, NumericalError
from rpm_gen.models import Puzzle
from tensor_engine import operations as ops
from tensor_engine.models import Tape
from tensor_engine.schemes import AdamSettings
from tensor_engine.services import Adam
from trainer.repositories import (
    ABLATION_COLUMNS,
    EPOCH_COLUMNS,
    FEW_SHOT_COLUMNS,
    GENERALIZATION_COLUMNS,
    MetricsAbstractRepository,
)
from trainer.schemes import (
    AblationRow,
    EpochMetrics,
    EpochResult,
    FewShotRow,
    GeneralizationRow,
    TrainConfig,
)

logger = logging.getLogger(__name__)


def make_targets(answers: Sequence[int]) -> np.ndarray:
    """
    One-hot метки [N, 8] по индексам правильных ответов.
    Raises:
        ValueError: Если индекс вне 0..7.
    """
    answers = np.asarray(answers, dtype=np.int64).reshape(-1)
    if answers.size and (answers.min() < 0 or answers.max() >= CANDIDATES):
        raise ValueError(f"Индексы ответов должны быть в 0..7, получено {answers}")
    targets = np.zeros((answers.size, CANDIDATES), dtype=np.float64)
    targets[np.arange(answers.size), answers] = 1.0
    return targets


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _score_stats(scores: np.ndarray) -> str:
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        return "все оценки нечисловые"
    return (
        f"min={finite.min():.4g} max={finite.max():.4g} "
        f"mean={finite.mean():.4g} нечисловых={scores.size - finite.size}"
    )


def train_epoch(
    model: DCNet,
    optimizer: Adam,
    puzzles: Sequence[Puzzle],
    config: TrainConfig,
    epoch: int,
) -> EpochResult:
    """
    Одна эпоха: перемешивание по (seed, epoch), затем для каждого пакета
    прямой проход, BCE по сигмоидам оценок, обратный проход и шаг Adam.
    Args:
        model (DCNet): Модель; переводится в режим train.
        optimizer (Adam): Оптимизатор параметров модели.
        puzzles (Sequence[Puzzle]): Обучающие задачи.
        config (TrainConfig): Параметры обучения.
        epoch (int): Номер эпохи, начиная с 1.
    Returns:
        EpochResult: Средняя потеря на задачу, точность и потери пакетов.
    Raises:
        ValueError: Если набор пуст.
        NumericalError: При нечисловой потере или оценках больше порога.
    """
    if not puzzles:
        raise ValueError("Пустой обучающий набор")
    model.train()
    order = epoch_rng(config.seed, epoch).permutation(len(puzzles))
    total_loss = 0.0
    correct = 0
    batch_losses = []
    for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
        batch = [puzzles[int(i)] for i in order[start : start + config.batch_size]]
        answers = np.array([puzzle.answer for puzzle in batch])
        scores = None
        try:
            with Tape() as tape:
                scores = model(stack_panels(batch))
                peak = float(np.abs(scores.data).max())
                limit = config.divergence_threshold
                if peak > limit:
                    raise NumericalError(f"модуль оценки {peak:.4g} больше {limit:g}")
                loss_sum = ops.bce_with_logits(scores, make_targets(answers))
                loss = ops.scale(loss_sum, 1.0 / len(batch))
            tape.backward(loss)
        except NumericalError as error:
            stats = "нет оценок" if scores is None else _score_stats(scores.data)
            logger.error(
                "Обучение расходится: эпоха %d, пакет %d, %s (%s)",
                epoch,
                batch_index,
                error,
                stats,
            )
            raise NumericalError(
                f"Эпоха {epoch}, пакет {batch_index}: {error}; оценки: {stats}"
            ) from error
        optimizer.step()
        batch_losses.append(loss.item())
        total_loss += loss_sum.item()
        correct += int(np.sum(predict(scores.data) == answers))
    return EpochResult(
        mean_loss=total_loss / len(puzzles),
        train_accuracy=correct / len(puzzles),
        batch_losses=batch_losses,
    )


def evaluate(model: DCNet, puzzles: Sequence[Puzzle], batch_size: int = 32) -> float:
    """
    Доля задач, где предсказание совпало с сохранённым ответом (режим eval).
    Raises:
        ValueError: Если набор пуст.
    """
    if not puzzles:
        raise ValueError("Нельзя оценить модель на пустом наборе")
    predicted = predict_puzzles(model, puzzles, batch_size)
    answers = np.array([puzzle.answer for puzzle in puzzles])
    return float(np.mean(predicted == answers))


def train_model(
    model: DCNet,
    train: Sequence[Puzzle],
    test: Optional[Sequence[Puzzle]],
    config: TrainConfig,
    validation: Optional[Sequence[Puzzle]] = None,
) -> list[EpochMetrics]:
    """
    Обучает модель config.epochs эпох.
    Точность на тесте считается каждые eval_every эпох и в последней эпохе;
    в остальных строках она пустая.
    Args:
        model (DCNet): Модель.
        train (Sequence[Puzzle]): Обучающий набор.
        test (Optional[Sequence[Puzzle]]): Тестовый набор.
        config (TrainConfig): Параметры обучения.
        validation (Optional[Sequence[Puzzle]]): Набор для журнала точности.
    Returns:
        list[EpochMetrics]: Метрики по эпохам.
    """
    optimizer = Adam(model.parameters(), AdamSettings(lr=config.lr))
    history: list[EpochMetrics] = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        result = train_epoch(model, optimizer, train, config, epoch)
        test_acc = None
        due = epoch % config.eval_every == 0 or epoch == config.epochs
        if test and due:
            test_acc = evaluate(model, test, config.batch_size)
        if validation and due:
            logger.info(
                "Эпоха %d: точность на валидации %.4f",
                epoch,
                evaluate(model, validation, config.batch_size),
            )
        history.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=result.mean_loss,
                train_acc=result.train_accuracy,
                test_acc=test_acc,
                seconds=time.perf_counter() - started,
            )
        )
        logger.info(
            "Эпоха %d/%d: потеря %.6f, точность %.4f, тест %s",
            epoch,
            config.epochs,
            result.mean_loss,
            result.train_accuracy,
            "-" if test_acc is None else f"{test_acc:.4f}",
        )
    return history


def model_config_for(base: DCNetConfig, config: TrainConfig) -> DCNetConfig:
    """Конфигурация модели с вариантом и зерном из параметров обучения."""
    return DCNetConfig.model_validate(
        {**base.model_dump(), "ablation": config.ablation, "seed": config.seed}
    )


class TrainingJob(NamedTuple):
    train: Sequence[Puzzle]
    test: Sequence[Puzzle]
    config: TrainConfig
    model_config: DCNetConfig


def run_job(job: TrainingJob) -> tuple[float, float]:
    """
    Независимый прогон со свежей моделью.
    Returns:
        tuple[float, float]: Точность на тесте и потеря последней эпохи.
    """
    model = DCNet(model_config_for(job.model_config, job.config))
    history = train_model(model, job.train, job.test, job.config)
    return history[-1].test_acc, history[-1].train_loss


class TransferJob(NamedTuple):
    train: Sequence[Puzzle]
    tests: tuple[Sequence[Puzzle], ...]
    config: TrainConfig
    model_config: DCNetConfig


def run_transfer_job(job: TransferJob) -> list[float]:
    """Обучает свежую модель без теста и оценивает её на каждом наборе из tests."""
    model = DCNet(model_config_for(job.model_config, job.config))
    train_model(model, job.train, None, job.config)
    return [evaluate(model, test, job.config.batch_size) for test in job.tests]


def run_jobs(
    jobs: Sequence[Union[TrainingJob, TransferJob]],
    workers: int = 1,
    runner: Callable = run_job,
) -> list:
    """Выполняет прогоны по порядку или в пуле процессов; порядок итогов как у jobs."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(runner, jobs))
    return [runner(job) for job in jobs]


def check_disjoint(train: Sequence[Puzzle], test: Sequence[Puzzle]) -> None:
    """
    Raises:
        DataLeakError: Если задача тестового набора есть в обучающем.
    """
    leaked = {p.fingerprint for p in train} & {p.fingerprint for p in test}
    if leaked:
        raise DataLeakError(
            f"Тестовые задачи в обучающем наборе: {len(leaked)}, "
            f"например {sorted(leaked)[0]}"
        )


class TrainerService:
    """
    Сервис обучения DCNet: одиночные прогоны с записью метрик и чекпоинта,
    сравнение вариантов модели, прогоны на долях обучающего набора
    и перенос модели на другие конфигурации панелей.
    Внешние зависимости: MetricsAbstractRepository, ModelService.
    """

    def __init__(self, metrics_repo: MetricsAbstractRepository, models: ModelService):
        """
        Args:
            metrics_repo (MetricsAbstractRepository): Репозиторий таблиц метрик.
            models (ModelService): Сервис чекпоинтов модели.
        """
        self.metrics_repo: MetricsAbstractRepository = metrics_repo
        self.models = models

    def fit(
        self,
        model: DCNet,
        train: Sequence[Puzzle],
        test: Optional[Sequence[Puzzle]],
        config: TrainConfig,
        metrics_path: Optional[Path] = None,
        checkpoint_path: Optional[Path] = None,
        validation: Optional[Sequence[Puzzle]] = None,
    ) -> list[EpochMetrics]:
        """
        Обучает модель и записывает CSV метрик и чекпоинт, если заданы пути.
        Args:
            model (DCNet): Модель.
            train (Sequence[Puzzle]): Обучающий набор.
            test (Optional[Sequence[Puzzle]]): Тестовый набор.
            config (TrainConfig): Параметры обучения.
            metrics_path (Optional[Path]): Куда записать CSV метрик.
            checkpoint_path (Optional[Path]): Куда записать чекпоинт.
            validation (Optional[Sequence[Puzzle]]): Набор для журнала точности.
        Returns:
            list[EpochMetrics]: Метрики по эпохам.
        """
        history = train_model(model, train, test, config, validation)
        if metrics_path is not None:
            self.metrics_repo.write(metrics_path, EPOCH_COLUMNS, history)
            logger.info("Метрики записаны: %s", metrics_path)
        if checkpoint_path is not None:
            self.models.save(model, checkpoint_path)
        return history

    def run_ablation(
        self,
        train: Sequence[Puzzle],
        test: Sequence[Puzzle],
        config: TrainConfig,
        model_config: DCNetConfig,
        seeds: Sequence[int],
        variants: Sequence[Ablation] = tuple(Ablation),
        workers: int = 1,
        out_path: Optional[Path] = None,
    ) -> list[AblationRow]:
        """
        Обучает каждый вариант модели с каждым зерном на одних и тех же данных.
        Прогоны отличаются только вариантом и зерном.
        Args:
            train (Sequence[Puzzle]): Обучающий набор.
            test (Sequence[Puzzle]): Тестовый набор.
            config (TrainConfig): Общие параметры обучения.
            model_config (DCNetConfig): Общая конфигурация модели.
            seeds (Sequence[int]): Зёрна.
            variants (Sequence[Ablation]): Сравниваемые варианты.
            workers (int): Число процессов.
            out_path (Optional[Path]): Куда записать CSV.
        Returns:
            list[AblationRow]: Строки по вариантам и зёрнам, после строк
            каждого варианта строка среднего.
        """
        if not seeds or not variants:
            raise ValueError("Нужны хотя бы одно зерно и один вариант")
        plan = [(variant, seed) for variant in variants for seed in seeds]
        jobs = [
            TrainingJob(
                train,
                test,
                config.model_copy(update={"ablation": variant, "seed": seed}),
                model_config,
            )
            for variant, seed in plan
        ]
        results = dict(zip(plan, run_jobs(jobs, workers)))
        rows: list[AblationRow] = []
        for variant in variants:
            runs = [results[(variant, seed)] for seed in seeds]
            for seed, (test_acc, loss) in zip(seeds, runs):
                rows.append(
                    AblationRow(
                        variant=variant,
                        seed=seed,
                        test_acc=test_acc,
                        final_train_loss=loss,
                    )
                )
            rows.append(
                AblationRow(
                    variant=variant,
                    test_acc=float(np.mean([acc for acc, _ in runs])),
                    final_train_loss=float(np.mean([loss for _, loss in runs])),
                )
            )
            logger.info(
                "Вариант %s: средняя точность %.4f", variant.value, rows[-1].test_acc
            )
        if out_path is not None:
            self.metrics_repo.write(out_path, ABLATION_COLUMNS, rows)
            logger.info("Сравнение вариантов записано: %s", out_path)
        return rows

    def run_few_shot(
        self,
        fractions: Sequence[float],
        train: Sequence[Puzzle],
        test: Sequence[Puzzle],
        config: TrainConfig,
        model_config: DCNetConfig,
        seeds: Sequence[int],
        workers: int = 1,
        out_path: Optional[Path] = None,
    ) -> list[FewShotRow]:
        """
        Для каждой доли обучает свежие модели на подвыборках floor(n * доля)
        задач и оценивает их на полном тестовом наборе.
        Зерно прогона задаёт и подвыборку, и модель.
        Args:
            fractions (Sequence[float]): Строго возрастающие доли в (0, 1].
            train (Sequence[Puzzle]): Полный обучающий набор.
            test (Sequence[Puzzle]): Тестовый набор.
            config (TrainConfig): Параметры обучения.
            model_config (DCNetConfig): Конфигурация модели.
            seeds (Sequence[int]): Зёрна.
            workers (int): Число процессов.
            out_path (Optional[Path]): Куда записать CSV.
        Returns:
            list[FewShotRow]: Строка на каждую долю.
        Raises:
            ValueError: Если доли не возрастают или подвыборка пуста.
            DataLeakError: Если наборы пересекаются.
        """
        if not fractions or not seeds:
            raise ValueError("Нужны хотя бы одна доля и одно зерно")
        if any(b <= a for a, b in zip(fractions, fractions[1:])):
            raise ValueError(f"Доли должны строго возрастать: {list(fractions)}")
        check_disjoint(train, test)
        plan = [(fraction, seed) for fraction in fractions for seed in seeds]
        subsets = {key: subsample(train, *key) for key in plan}
        jobs = [
            TrainingJob(
                subsets[key],
                test,
                config.model_copy(update={"seed": key[1]}),
                model_config,
            )
            for key in plan
        ]
        results = dict(zip(plan, run_jobs(jobs, workers)))
        rows: list[FewShotRow] = []
        for fraction in fractions:
            accuracies = np.array([results[(fraction, seed)][0] for seed in seeds])
            rows.append(
                FewShotRow(
                    fraction=fraction,
                    train_size=len(subsets[(fraction, seeds[0])]),
                    test_acc_mean=float(accuracies.mean()),
                    test_acc_std=float(accuracies.std()),
                    seeds=len(seeds),
                )
            )
            logger.info(
                "Доля %g (%d задач): точность %.4f ± %.4f",
                fraction,
                rows[-1].train_size,
                rows[-1].test_acc_mean,
                rows[-1].test_acc_std,
            )
        if out_path is not None:
            self.metrics_repo.write(out_path, FEW_SHOT_COLUMNS, rows)
            logger.info("Результаты по долям записаны: %s", out_path)
        return rows

    def run_generalization(
        self,
        train: Sequence[Puzzle],
        tests: Sequence[tuple[str, Sequence[Puzzle]]],
        config: TrainConfig,
        model_config: DCNetConfig,
        seeds: Sequence[int],
        workers: int = 1,
        out_path: Optional[Path] = None,
    ) -> list[GeneralizationRow]:
        """
        Обучает модель на конфигурации обучающего набора и проверяет её на
        каждом тестовом наборе, в том числе на других конфигурациях.
        Args:
            train (Sequence[Puzzle]): Обучающий набор одной конфигурации.
            tests (Sequence[tuple[str, Sequence[Puzzle]]]): Имя и задачи
                каждого тестового набора.
            config (TrainConfig): Параметры обучения.
            model_config (DCNetConfig): Конфигурация модели.
            seeds (Sequence[int]): Зёрна; на каждое зерно одна обученная модель.
            workers (int): Число процессов.
            out_path (Optional[Path]): Куда записать CSV.
        Returns:
            list[GeneralizationRow]: Строки по наборам и зёрнам, после строк
            каждого набора строка среднего.
        Raises:
            ValueError: Если нет зёрен или тестовых наборов.
            DataLeakError: Если тестовый набор пересекается с обучающим.
        """
        if not seeds or not tests:
            raise ValueError("Нужны хотя бы одно зерно и один тестовый набор")
        for _, puzzles in tests:
            check_disjoint(train, puzzles)
        test_sets = tuple(puzzles for _, puzzles in tests)
        jobs = [
            TransferJob(
                train, test_sets, config.model_copy(update={"seed": seed}), model_config
            )
            for seed in seeds
        ]
        accuracies = np.array(run_jobs(jobs, workers, runner=run_transfer_job))
        source = train[0].config
        rows: list[GeneralizationRow] = []
        for column, (name, puzzles) in enumerate(tests):
            target = puzzles[0].config
            for seed, test_acc in zip(seeds, accuracies[:, column]):
                rows.append(
                    GeneralizationRow(
                        train_config=source,
                        test_config=target,
                        test_set=name,
                        seed=seed,
                        test_acc=float(test_acc),
                    )
                )
            rows.append(
                GeneralizationRow(
                    train_config=source,
                    test_config=target,
                    test_set=name,
                    test_acc=float(accuracies[:, column].mean()),
                )
            )
            logger.info(
                "%s -> %s (%s): средняя точность %.4f",
                source.value,
                target.value,
                name,
                rows[-1].test_acc,
            )
        if out_path is not None:
            self.metrics_repo.write(out_path, GENERALIZATION_COLUMNS, rows)
            logger.info("Результаты переноса записаны: %s", out_path)
        return rows

import csv
import math

import numpy as np
import pytest

from dataset_io.repositories import DatasetBinaryRepository
from dcnet_model.models import DCNet
from dcnet_model.schemes import Ablation
from exceptions import ConfigError, DataLeakError, NumericalError
from rpm_gen.models import PanelConfig
from rpm_gen.services import generate_dataset
from tensor_engine.schemes import AdamSettings
from tensor_engine.services import Adam
from trainer.commands import load_pair
from trainer.dependiences import trainer_service
from trainer.schemes import TrainConfig
from trainer.services import (
    evaluate,
    make_targets,
    model_config_for,
    train_epoch,
    train_model,
)


@pytest.fixture(scope="module")
def train_set():
    return generate_dataset(8, PanelConfig.CENTER, 16, seed=31)


@pytest.fixture(scope="module")
def test_set():
    return generate_dataset(4, PanelConfig.CENTER, 16, seed=32)


@pytest.fixture
def config():
    return TrainConfig(batch_size=4, epochs=2, lr=0.001, seed=0)


def without_seconds(history):
    return [metrics.model_dump(exclude={"seconds"}) for metrics in history]


def test_make_targets():
    np.testing.assert_array_equal(make_targets([2, 0]), np.eye(8)[[2, 0]])
    assert make_targets([]).shape == (0, 8)
    with pytest.raises(ValueError):
        make_targets([8])


def test_first_batch_loss_with_zero_head(tiny_config, train_set, config):
    model = DCNet(tiny_config)
    optimizer = Adam(model.parameters(), AdamSettings(lr=config.lr))
    result = train_epoch(model, optimizer, train_set, config, epoch=1)
    assert len(result.batch_losses) == 2
    assert abs(result.batch_losses[0] - 8 * math.log(2.0)) < 1e-6
    assert 0.0 <= result.train_accuracy <= 1.0


def test_training_is_deterministic(tiny_config, train_set, test_set, config):
    first = train_model(DCNet(tiny_config), train_set, test_set, config)
    second = train_model(DCNet(tiny_config), train_set, test_set, config)
    assert without_seconds(first) == without_seconds(second)
    assert [m.epoch for m in first] == [1, 2]


def test_training_changes_parameters(tiny_config, train_set, config):
    model = DCNet(tiny_config)
    before = model.head.output.weight.data.copy()
    train_model(model, train_set, None, config)
    assert not np.array_equal(before, model.head.output.weight.data)


def test_empty_sets_are_rejected(tiny_config, config):
    model = DCNet(tiny_config)
    with pytest.raises(ValueError):
        evaluate(model, [])
    optimizer = Adam(model.parameters(), AdamSettings())
    with pytest.raises(ValueError):
        train_epoch(model, optimizer, [], config, epoch=1)


def test_divergence_is_reported(tiny_config, train_set):
    model = DCNet(tiny_config.model_copy(update={"zero_head": False}))
    config = TrainConfig(batch_size=4, epochs=1, divergence_threshold=1e-12)
    with pytest.raises(NumericalError):
        train_model(model, train_set, None, config)


def test_fit_writes_metrics_and_checkpoint(tmp_path, tiny_config, train_set, test_set):
    config = TrainConfig(batch_size=4, epochs=3, eval_every=2)
    metrics, checkpoint = tmp_path / "metrics.csv", tmp_path / "dcnet.ckpt"
    service = trainer_service()
    model = DCNet(tiny_config)
    history = service.fit(model, train_set, test_set, config, metrics, checkpoint)

    with open(metrics, newline="", encoding="utf-8") as file:
        rows = list(csv.DictReader(file))
    assert len(rows) == 3
    assert list(rows[0]) == ["epoch", "train_loss", "train_acc", "test_acc", "seconds"]
    assert [row["test_acc"] == "" for row in rows] == [True, False, False]
    assert float(rows[-1]["train_loss"]) == history[-1].train_loss

    restored = service.models.load(checkpoint)
    assert evaluate(restored, test_set, 4) == history[-1].test_acc


def test_ablation_rows(tmp_path, tiny_config, train_set, test_set):
    config = TrainConfig(batch_size=4, epochs=1)
    out = tmp_path / "ablation.csv"
    rows = trainer_service().run_ablation(
        train_set, test_set, config, tiny_config, seeds=[0, 1], out_path=out
    )
    assert len(rows) == len(Ablation) * 2 + len(Ablation)
    means = [row for row in rows if row.seed is None]
    assert [row.variant for row in means] == list(Ablation)
    full = [row.seed for row in rows if row.variant is Ablation.FULL]
    assert full == [0, 1, None]
    lines = out.read_text("utf-8").splitlines()
    assert lines[0] == "variant,seed,test_acc,final_train_loss"
    assert sum(line.split(",")[1] == "mean" for line in lines) == len(Ablation)


def test_ablation_needs_seeds(tiny_config, train_set, test_set):
    with pytest.raises(ValueError):
        trainer_service().run_ablation(
            train_set, test_set, TrainConfig(), tiny_config, seeds=[]
        )


def test_few_shot_full_fraction_matches_plain_run(
    tiny_config, train_set, test_set, config
):
    rows = trainer_service().run_few_shot(
        [0.5, 1.0], train_set, test_set, config, tiny_config, seeds=[0]
    )
    assert [row.train_size for row in rows] == [4, 8]
    assert rows[1].test_acc_std == 0.0 and rows[1].seeds == 1

    model = DCNet(model_config_for(tiny_config, config))
    plain = train_model(model, train_set, test_set, config)
    assert rows[1].test_acc_mean == plain[-1].test_acc


def test_few_shot_fractions_must_increase(tiny_config, train_set, test_set, config):
    with pytest.raises(ValueError):
        trainer_service().run_few_shot(
            [0.5, 0.5], train_set, test_set, config, tiny_config, seeds=[0]
        )


def test_few_shot_detects_leak(tiny_config, train_set, config):
    with pytest.raises(DataLeakError):
        trainer_service().run_few_shot(
            [1.0], train_set, train_set[:2], config, tiny_config, seeds=[0]
        )


def test_generalization_rows(tmp_path, tiny_config, train_set, test_set, config):
    grid = generate_dataset(4, PanelConfig.GRID2X2, 16, seed=33)
    out = tmp_path / "generalization.csv"
    rows = trainer_service().run_generalization(
        train_set,
        [("center.rpmd", test_set), ("grid.rpmd", grid)],
        config,
        tiny_config,
        seeds=[0, 1],
        out_path=out,
    )
    assert [(row.test_set, row.seed) for row in rows] == [
        ("center.rpmd", 0),
        ("center.rpmd", 1),
        ("center.rpmd", None),
        ("grid.rpmd", 0),
        ("grid.rpmd", 1),
        ("grid.rpmd", None),
    ]
    assert all(row.train_config is PanelConfig.CENTER for row in rows)
    assert rows[3].test_config is PanelConfig.GRID2X2
    assert rows[2].test_acc == pytest.approx((rows[0].test_acc + rows[1].test_acc) / 2)

    model = DCNet(model_config_for(tiny_config, config))
    plain = train_model(model, train_set, test_set, config)
    assert rows[0].test_acc == plain[-1].test_acc

    lines = out.read_text("utf-8").splitlines()
    assert lines[0] == "train_config,test_config,test_set,seed,test_acc"
    assert lines[3].startswith("center,center,center.rpmd,mean,")
    assert lines[4].startswith("center,grid2x2,grid.rpmd,0,")


def test_generalization_detects_leak(tiny_config, train_set, config):
    with pytest.raises(DataLeakError):
        trainer_service().run_generalization(
            train_set, [("leak.rpmd", train_set[:2])], config, tiny_config, seeds=[0]
        )


def test_load_pair_reads_paths_from_train_config(tmp_path, train_set, test_set, config):
    train_path, test_path = tmp_path / "train.rpmd", tmp_path / "test.rpmd"
    DatasetBinaryRepository.save(train_set, train_path)
    DatasetBinaryRepository.save(test_set, test_path)
    paired = config.model_copy(update={"train_path": train_path, "test_path": test_path})

    loaded_train, loaded_test = load_pair(paired)

    assert [p.fingerprint for p in loaded_train] == [p.fingerprint for p in train_set]
    assert [p.fingerprint for p in loaded_test] == [p.fingerprint for p in test_set]
    swapped = paired.model_copy(
        update={"train_path": test_path, "test_path": train_path}
    )
    assert len(load_pair(swapped)[0]) == len(test_set)
    with pytest.raises(ConfigError):
        load_pair(config)

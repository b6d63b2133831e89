import numpy as np
import pytest

from exceptions import DatasetFormatError
from tensor_engine import operations as ops
from tensor_engine.dependiences import checkpoint_service
from tensor_engine.layers import BatchNorm2d, Linear, Module
from tensor_engine.models import Parameter, Tape, Tensor, make_result
from tensor_engine.repositories import CheckpointBinaryRepository
from tensor_engine.schemes import AdamSettings
from tensor_engine.services import Adam, adam_step, grad_check, gradcheck_suite


class TinyNet(Module):
    def __init__(self, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.fc = Linear(3, 2, rng)
        self.norm = BatchNorm2d(2)


def test_gradcheck_suite_passes_for_every_operation():
    reports = gradcheck_suite(samples=3, seed=7)
    names = {report.name for report in reports}
    expected = {
        "conv2d",
        "batchnorm2d(train)",
        "batchnorm2d(eval)",
        "maxpool2d",
        "linear",
        "dropout(train)",
        "dropout(eval)",
        "bce_with_logits",
    }
    assert expected <= names
    for report in reports:
        assert report.passed, f"{report.name}: {report.max_relative_error}"
        assert report.checked > 0


def test_eval_batchnorm_check_uses_running_statistics():
    reports = {report.name: report for report in gradcheck_suite(samples=4, seed=3)}
    frozen = reports["batchnorm2d(eval)"]
    assert frozen.passed and not frozen.excluded
    assert frozen.checked == 4 + 3 + 3
    assert reports["dropout(eval)"].max_relative_error < 1e-6


def test_grad_check_detects_wrong_backward_rule(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True, name="a")

    def broken() -> Tensor:
        out = make_result("broken", a.data * 2.0, (a,), lambda grad: (grad * 3.0,))
        return ops.sum_all(out)

    report = grad_check(broken, [a], samples=3)
    assert not report.passed
    assert report.max_relative_error > 0.3


def test_grad_check_excludes_relu_kink():
    a = Tensor([0.0, 1.0], requires_grad=True, name="a")
    report = grad_check(lambda: ops.sum_all(ops.relu(a)), [a], samples=2)
    assert report.excluded == ["a[0]"]
    assert report.checked == 1
    assert report.passed


def test_adam_first_step_moves_by_learning_rate():
    param = Parameter(np.array([1.0, -2.0]))
    param.tensor.grad = np.array([0.5, -4.0])
    adam_step([param], lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, t=1)
    expected = np.array(
        [1.0 - 0.01 * 0.5 / (0.5 + 1e-8), -2.0 + 0.01 * 4.0 / (4.0 + 1e-8)]
    )
    np.testing.assert_allclose(param.data, expected, rtol=0, atol=1e-15)
    assert param.grad is None
    assert param.step == 1


def test_adam_rejects_step_zero():
    with pytest.raises(ValueError):
        adam_step([], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8, t=0)


def test_adam_minimizes_quadratic():
    param = Parameter(np.array([3.0]))
    optimizer = Adam([param], AdamSettings(lr=0.1))
    for _ in range(300):
        with Tape() as tape:
            loss = ops.sum_all(ops.mul(param.tensor, param.tensor))
        tape.backward(loss)
        optimizer.step()
    assert abs(param.data[0]) < 0.5
    assert optimizer.t == 300


def test_module_names_follow_attribute_paths():
    names = [name for name, _ in TinyNet().named_entries()]
    assert names == [
        "fc.weight",
        "fc.bias",
        "norm.gamma",
        "norm.beta",
        "norm.running_mean",
        "norm.running_var",
    ]
    assert [name for name, _ in TinyNet().named_parameters()] == names[:4]


def test_checkpoint_round_trip_is_byte_exact(tmp_path):
    model = TinyNet(seed=1)
    model.fc.weight.adam_m[...] = 0.25
    model.fc.weight.step = 5
    model.norm.running_mean.data[...] = [0.5, -0.5]
    first, second = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    service = checkpoint_service()
    service.save(model, first)

    restored = TinyNet(seed=2)
    service.restore(restored, first)
    service.save(restored, second)

    assert first.read_bytes() == second.read_bytes()
    np.testing.assert_array_equal(restored.fc.weight.data, model.fc.weight.data)
    np.testing.assert_array_equal(restored.norm.stats.mean, [0.5, -0.5])
    assert restored.fc.weight.step == 5


def test_checkpoint_truncated_file(tmp_path):
    path = tmp_path / "model.ckpt"
    checkpoint_service().save(TinyNet(), path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DatasetFormatError):
        CheckpointBinaryRepository.load(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(DatasetFormatError):
        CheckpointBinaryRepository.load(path)


def test_restore_rejects_other_architecture(tmp_path):
    class OtherNet(Module):
        def __init__(self):
            super().__init__()
            self.fc = Linear(4, 2, np.random.default_rng(0))
            self.norm = BatchNorm2d(2)

    path = tmp_path / "model.ckpt"
    checkpoint_service().save(TinyNet(), path)
    with pytest.raises(DatasetFormatError):
        checkpoint_service().restore(OtherNet(), path)

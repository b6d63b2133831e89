import struct

import numpy as np
import pytest

from dataset_io.dependiences import dataset_service
from dataset_io.repositories import DatasetBinaryRepository
from dataset_io.schemes import HEADER_SIZE, PROVENANCE_SIZE
from dataset_io.services import area_resize, area_weights, split_folds, subsample
from exceptions import DatasetFormatError
from rpm_gen.models import PanelConfig
from rpm_gen.services import generate_dataset


@pytest.fixture(scope="module")
def puzzles():
    return generate_dataset(12, PanelConfig.GRID2X2, 16, seed=21)


@pytest.fixture
def saved(tmp_path, puzzles):
    path = tmp_path / "puzzles.rpmd"
    DatasetBinaryRepository.save(puzzles, path)
    return path


def test_save_load_round_trip(tmp_path, puzzles, saved):
    loaded = DatasetBinaryRepository.load(saved)
    assert [p.fingerprint for p in loaded] == [p.fingerprint for p in puzzles]
    assert [p.provenance for p in loaded] == [p.provenance for p in puzzles]
    assert all(p.config is PanelConfig.GRID2X2 for p in loaded)

    again = tmp_path / "again.rpmd"
    DatasetBinaryRepository.save(loaded, again)
    assert again.read_bytes() == saved.read_bytes()


def test_record_layout(saved, puzzles):
    record = 1 + 16 * 16 * 16 + PROVENANCE_SIZE
    assert PROVENANCE_SIZE == 107
    assert saved.stat().st_size == HEADER_SIZE + len(puzzles) * record


def test_read_one_matches_full_load(saved, puzzles):
    one = DatasetBinaryRepository.read_one(saved, 7)
    assert one.fingerprint == puzzles[7].fingerprint
    with pytest.raises(IndexError):
        DatasetBinaryRepository.read_one(saved, len(puzzles))


def test_truncated_file(saved):
    saved.write_bytes(saved.read_bytes()[:-5])
    with pytest.raises(DatasetFormatError):
        DatasetBinaryRepository.load(saved)


def test_trailing_bytes(saved):
    saved.write_bytes(saved.read_bytes() + b"\x00")
    with pytest.raises(DatasetFormatError):
        DatasetBinaryRepository.load(saved)


def test_bad_magic(saved):
    saved.write_bytes(b"NOPE" + saved.read_bytes()[4:])
    with pytest.raises(DatasetFormatError):
        DatasetBinaryRepository.load(saved)


def test_unsupported_version(saved):
    raw = saved.read_bytes()
    saved.write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(DatasetFormatError):
        DatasetBinaryRepository.load(saved)


def test_header_for_rejects_mixed_sets(puzzles):
    with pytest.raises(ValueError):
        DatasetBinaryRepository.header_for([])
    other = generate_dataset(1, PanelConfig.GRID2X2, 24, seed=0)
    with pytest.raises(ValueError):
        DatasetBinaryRepository.header_for([puzzles[0], other[0]])
    bare = puzzles[1].model_copy(update={"provenance": None})
    with pytest.raises(ValueError):
        DatasetBinaryRepository.header_for([puzzles[0], bare])


def test_area_weights_rows_sum_to_one():
    weights = area_weights(160, 96)
    assert weights.shape == (96, 160)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)
    assert (weights >= 0).all()


def test_area_resize_averages_blocks():
    image = np.array([[[0, 100, 40, 40], [100, 0, 40, 40], [7, 7, 9, 9], [7, 7, 9, 9]]])
    resized = area_resize(image.astype(np.uint8), 2)
    np.testing.assert_array_equal(resized[0], [[50, 40], [7, 9]])


def test_area_resize_keeps_constant_image():
    image = np.full((2, 160, 160), 173, dtype=np.uint8)
    resized = area_resize(image, 96)
    assert resized.dtype == np.uint8
    assert (resized == 173).all()


def write_npz(path, size=160, target=3, panels=16):
    rng = np.random.default_rng(len(path.name))
    image = rng.integers(0, 256, size=(panels, size, size), dtype=np.uint8)
    np.savez(path, image=image, target=np.int64(target))


def test_import_external_directory(tmp_path):
    for name in ("a.npz", "b.npz", "c.npz"):
        write_npz(tmp_path / name)
    write_npz(tmp_path / "d.npz", target=9)
    write_npz(tmp_path / "e.npz", panels=15)
    (tmp_path / "notes.txt").write_text("не задача")

    puzzles, report = dataset_service().import_external(tmp_path, 96)

    assert report.imported == ["a.npz", "b.npz", "c.npz"]
    assert sorted(r.file for r in report.rejected) == ["d.npz", "e.npz", "notes.txt"]
    assert report.total == 6
    assert all(r.reason for r in report.rejected)
    assert len(puzzles) == 3
    assert all(p.image_size == 96 and p.answer == 3 for p in puzzles)
    assert all(p.config is PanelConfig.EXTERNAL for p in puzzles)
    assert all(p.provenance is None for p in puzzles)


def test_import_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        dataset_service().import_external(tmp_path / "missing", 32)


def test_subsample_keeps_order(puzzles):
    order = [p.fingerprint for p in puzzles]
    chosen = [p.fingerprint for p in subsample(puzzles, 0.25, seed=4)]
    assert len(chosen) == 3
    positions = [order.index(fingerprint) for fingerprint in chosen]
    assert positions == sorted(positions)
    assert [p.fingerprint for p in subsample(puzzles, 0.25, seed=4)] == chosen
    assert [p.fingerprint for p in subsample(puzzles, 1.0, seed=4)] == order


@pytest.mark.parametrize(
    "fraction,size", [(0.29, 29), (0.07, 7), (0.57, 57), (1.0, 100)]
)
def test_subsample_size_follows_decimal_fraction(fraction, size):
    items = list(range(100))
    assert len(subsample(items, fraction, seed=0)) == size


@pytest.mark.parametrize("fraction", [0.0, 1.5, 0.05])
def test_subsample_rejects_bad_fraction(puzzles, fraction):
    with pytest.raises(ValueError):
        subsample(puzzles, fraction, seed=0)


def test_split_folds_are_disjoint_and_cover():
    items = list(range(30))
    split = split_folds(items, seed=3)
    assert [len(part) for part in split] == [18, 6, 6]
    assert sorted(i for part in split for i in part) == items
    assert all(part == sorted(part) for part in split)
    assert split_folds(items, seed=3) == split


def test_split_folds_needs_enough_puzzles(puzzles):
    with pytest.raises(ValueError):
        split_folds(puzzles[:5], seed=0)

import numpy as np
import pytest

from exceptions import GenerationError
from rpm_gen.models import (
    ALLOWED_KINDS,
    CENTER_MASK,
    Attribute,
    AttributeVector,
    PanelConfig,
    RuleKind,
    ShapeType,
)
from rpm_gen.rasterizer import BACKGROUND, fill_gray, rasterize
from rpm_gen.rules import Hypothesis, is_feasible
from rpm_gen.services import (
    balanced_answers,
    generate_dataset,
    generate_puzzle,
    instantiate_matrix,
    make_distractors,
    sample_ruleset,
    summarize,
)


def rows_of(matrix, attribute):
    values = [panel.value(attribute) for panel in matrix]
    return [tuple(values[r * 3 : r * 3 + 3]) for r in range(3)]


@pytest.mark.parametrize("config", [PanelConfig.CENTER, PanelConfig.GRID2X2])
def test_sampled_rulesets_are_valid(config):
    rng = np.random.default_rng(5)
    for _ in range(50):
        rules = sample_ruleset(config, rng)
        assert 1 <= len(rules.rules) <= 4
        assert all(is_feasible(rule) for rule in rules.rules)
        for rule in rules.rules:
            assert rule.kind in ALLOWED_KINDS[rule.attribute]
        if config is PanelConfig.CENTER:
            assert len(rules.rules) <= 3
            assert rules.rule_for(Attribute.COUNT) is None
            assert rules.rule_for(Attribute.POSITION) is None


def test_ten_thousand_rulesets_cover_every_rule_kind():
    rng = np.random.default_rng(17)
    seen, sizes = set(), set()
    for draw in range(10_000):
        config = (PanelConfig.CENTER, PanelConfig.GRID2X2)[draw % 2]
        rules = sample_ruleset(config, rng)
        sizes.add((config, len(rules.rules)))
        seen.update((rule.attribute, rule.kind) for rule in rules.rules)
    expected = {(attr, kind) for attr, kinds in ALLOWED_KINDS.items() for kind in kinds}
    assert seen == expected
    assert {kind for _, kind in seen} == set(RuleKind)
    assert {n for config, n in sizes if config is PanelConfig.CENTER} == {1, 2, 3}
    assert {n for config, n in sizes if config is PanelConfig.GRID2X2} == {1, 2, 3, 4}


def test_sample_ruleset_rejects_external():
    with pytest.raises(ValueError):
        sample_ruleset(PanelConfig.EXTERNAL, np.random.default_rng(0))


@pytest.mark.parametrize("config", [PanelConfig.CENTER, PanelConfig.GRID2X2])
def test_every_row_satisfies_every_rule(config):
    rng = np.random.default_rng(11)
    for _ in range(40):
        rules = sample_ruleset(config, rng)
        matrix = instantiate_matrix(rules, rng)
        assert len(matrix) == 9
        for rule in rules.rules:
            rows = rows_of(matrix, rule.attribute)
            if rule.kind is RuleKind.DISTRIBUTE_THREE:
                assert all(len(set(row)) == 3 for row in rows)
                assert set(rows[0]) == set(rows[1]) == set(rows[2])
            else:
                assert all(Hypothesis.from_rule(rule).holds(row) for row in rows)
        if config is PanelConfig.CENTER:
            assert all(p.position_mask == CENTER_MASK for p in matrix)


def test_free_attributes_are_constant_within_rows():
    rng = np.random.default_rng(2)
    for _ in range(20):
        rules = sample_ruleset(PanelConfig.CENTER, rng)
        matrix = instantiate_matrix(rules, rng)
        for attribute in (Attribute.SHAPE, Attribute.SIZE, Attribute.FILL):
            if rules.rule_for(attribute) is None:
                assert all(len(set(row)) == 1 for row in rows_of(matrix, attribute))


@pytest.mark.parametrize("config", [PanelConfig.CENTER, PanelConfig.GRID2X2])
def test_distractors_differ_in_one_field(config):
    rng = np.random.default_rng(8)
    for _ in range(20):
        rules = sample_ruleset(config, rng)
        matrix = instantiate_matrix(rules, rng)
        try:
            distractors = make_distractors(matrix[8], rules, rng, matrix[:8])
        except GenerationError:
            continue
        assert len(distractors) == 7
        assert len({d.attributes for d in distractors} | {matrix[8]}) == 8
        for distractor in distractors:
            changed = [
                a != b
                for a, b in zip(distractor.attributes.fields(), matrix[8].fields())
            ]
            assert sum(changed) == 1


def test_puzzle_provenance_records_perturbations():
    puzzle, _ = generate_puzzle(PanelConfig.GRID2X2, 32, 6, np.random.default_rng(4))
    provenance = puzzle.provenance
    assert puzzle.answer == 6
    assert provenance.perturbations[6] is None
    assert all(p is not None for i, p in enumerate(provenance.perturbations) if i != 6)
    assert provenance.choice_attributes[6] == provenance.matrix[8]
    assert puzzle.context.shape == (8, 32, 32)
    assert puzzle.choices.dtype == np.uint8


def test_balanced_answers():
    answers = balanced_answers(100, np.random.default_rng(0))
    counts = np.bincount(answers, minlength=8)
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 100


def test_generate_dataset_is_deterministic():
    first = generate_dataset(10, PanelConfig.CENTER, 16, seed=1)
    second = generate_dataset(10, PanelConfig.CENTER, 16, seed=1)
    assert [p.fingerprint for p in first] == [p.fingerprint for p in second]
    other = generate_dataset(10, PanelConfig.CENTER, 16, seed=2)
    assert [p.fingerprint for p in first] != [p.fingerprint for p in other]


def test_generate_dataset_does_not_depend_on_workers():
    serial = generate_dataset(6, PanelConfig.GRID2X2, 16, seed=3)
    parallel = generate_dataset(6, PanelConfig.GRID2X2, 16, seed=3, workers=2)
    assert [p.fingerprint for p in serial] == [p.fingerprint for p in parallel]


def test_summary_counts_oracle_agreement():
    puzzles = generate_dataset(16, PanelConfig.CENTER, 16, seed=9)
    summary = summarize(puzzles)
    assert summary.count == 16
    assert summary.answer_histogram == [2] * 8
    assert summary.oracle_agreement == summary.oracle_checked == 16
    assert summary.oracle_passed


def test_generate_dataset_rejects_empty():
    with pytest.raises(ValueError):
        generate_dataset(0, PanelConfig.CENTER, 16, seed=0)


def vector(shape=ShapeType.SQUARE, size=3, fill=1, mask=1):
    return AttributeVector(
        shape_type=shape,
        size_level=size,
        fill_level=fill,
        count=bin(mask).count("1"),
        position_mask=mask,
    )


def test_rasterize_shape_and_background():
    image = rasterize(vector(), 32)
    assert image.shape == (32, 32)
    assert image.dtype == np.uint8
    assert image[0, 0] == BACKGROUND
    assert (image == 0).any()


def test_rasterize_is_deterministic_without_jitter():
    a = rasterize(vector(shape=ShapeType.HEXAGON, fill=4), 32)
    b = rasterize(vector(shape=ShapeType.HEXAGON, fill=4), 32)
    np.testing.assert_array_equal(a, b)


def test_larger_size_covers_more_pixels():
    small = rasterize(vector(size=1, fill=5), 48)
    large = rasterize(vector(size=5, fill=5), 48)
    assert (large < BACKGROUND).sum() > (small < BACKGROUND).sum()


def test_fill_level_darkens_interior():
    light = rasterize(vector(shape=ShapeType.CIRCLE, size=5, fill=1), 48)
    dark = rasterize(vector(shape=ShapeType.CIRCLE, size=5, fill=5), 48)
    assert light[24, 24] == fill_gray(1) == BACKGROUND
    assert dark[24, 24] == fill_gray(5)


def test_grid_mask_draws_only_occupied_slots():
    top_left = vector(size=5, fill=5, mask=0b0001)
    image = rasterize(top_left, 32, config=PanelConfig.GRID2X2)
    assert (image[:16, :16] < BACKGROUND).any()
    assert (image[16:, :] == BACKGROUND).all()
    assert (image[:, 16:] == BACKGROUND).all()


def test_rasterize_rejects_tiny_images():
    with pytest.raises(ValueError):
        rasterize(vector(), 8)

import json

import pytest

from data.models import AnswerVocab, Example, HeadType, RawImageFeatures, Split, TaskDataset
from data.repository import DatasetRepository
from data.sampling import CandidatePoolBuilder, build_eval_candidates, downsample, downsample_curve
from data.synthetic import SyntheticSuiteConfig, SyntheticSuiteGenerator, generate_synthetic_suite
from exceptions import (
    CompatibilityError,
    ConfigurationError,
    DataError,
    DatasetValidationError,
    DomainError,
    ParseError,
)


@pytest.fixture
def repository():
    return DatasetRepository()


# Repository

def test_save_and_load_reproduce_bytes(repository, suite, tmp_path):
    """Test that a loaded dataset saves back byte for byte."""
    for dataset in suite:
        path = repository.save_dataset(dataset, tmp_path / f"{dataset.name}.jsonl")
        loaded = repository.load_dataset(path)
        assert loaded.name == dataset.name and len(loaded.train) == len(dataset.train)
        assert repository.dumps(loaded) == path.read_bytes()


def test_missing_file_is_a_data_error(repository, tmp_path):
    with pytest.raises(DataError):
        repository.load_dataset(tmp_path / "absent.jsonl")


def test_parse_error_names_the_line(repository, by_name, tmp_path):
    lines = repository.dumps(by_name["caption"]).decode("utf-8").split("\n")
    lines[2] = "{not json"
    path = tmp_path / "broken.jsonl"
    path.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(ParseError) as excinfo:
        repository.load_dataset(path)
    assert excinfo.value.line_no == 3
    assert "broken.jsonl:3" in str(excinfo.value)


def test_unknown_split_is_a_parse_error(repository, by_name, tmp_path):
    lines = repository.dumps(by_name["caption"]).decode("utf-8").split("\n")
    record = json.loads(lines[1])
    record["split"] = "holdout"
    lines[1] = json.dumps(record)
    path = tmp_path / "split.jsonl"
    path.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(ParseError) as excinfo:
        repository.load_dataset(path)
    assert excinfo.value.line_no == 2


def test_newer_format_version_is_incompatible(repository, by_name, tmp_path):
    lines = repository.dumps(by_name["qa"]).decode("utf-8").split("\n")
    header = json.loads(lines[0])
    header["format_version"] = 99
    lines[0] = json.dumps(header)
    path = tmp_path / "future.jsonl"
    path.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(CompatibilityError):
        repository.load_dataset(path)


def test_empty_file_is_a_parse_error(repository, tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(ParseError):
        repository.load_dataset(path)


# Invariants

def test_duplicate_ids_across_splits_are_rejected(by_name):
    dataset = by_name["caption"]
    leaked = dataset.model_copy(update={"valid": [*dataset.valid, dataset.train[0]]})
    with pytest.raises(DatasetValidationError) as excinfo:
        leaked.validate_invariants()
    assert excinfo.value.example_id == dataset.train[0].id


def test_style_outside_style_space_is_rejected(by_name):
    dataset = by_name["caption"]
    stray = dataset.train[0].model_copy(update={"id": "stray", "style_id": 42})
    with pytest.raises(DatasetValidationError):
        dataset.model_copy(update={"test": [*dataset.test, stray]}).validate_invariants()


def test_answer_index_outside_vocabulary_is_rejected():
    dataset = TaskDataset(
        name="toy",
        head=HeadType.CLASSIFICATION,
        answers=AnswerVocab(answers=["yes", "no"]),
        train=[Example(id="a", context_tokens=[3], answer_index=2)],
    )
    with pytest.raises(DatasetValidationError):
        dataset.validate_invariants()


def test_ragged_regional_features_are_rejected():
    with pytest.raises(ValueError):
        RawImageFeatures(regional=[[1.0, 2.0], [1.0]])


def test_answer_targets_hard_and_soft():
    hard = Example(id="h", context_tokens=[3], answer_index=1)
    soft = Example(id="s", context_tokens=[3], answer_index=[0.2, 0.8, 0.0])
    assert hard.answer_target(3).tolist() == [0.0, 1.0, 0.0]
    assert soft.answer_target(3).tolist() == [0.2, 0.8, 0.0]
    assert soft.hard_answer() == 1


def test_supports_reports_missing_targets(by_name):
    assert by_name["qa"].supports(HeadType.BOTH)
    assert by_name["caption"].supports(HeadType.RANKING)
    assert not by_name["caption"].supports(HeadType.CLASSIFICATION)


# Candidate pools

def test_pool_holds_gold_exactly_once(by_name):
    dataset = by_name["chat"]
    builder = CandidatePoolBuilder(dataset, Split.VALID, seed=7)
    for example in dataset.valid:
        pool = builder.pool_for(example)
        assert len(pool) == dataset.eval_candidate_count
        assert pool.count(example.gold_text) == 1
        assert len({tuple(c) for c in pool}) == len(pool)


def test_pools_are_fixed_by_seed(by_name):
    dataset = by_name["caption"]
    example = dataset.test[0]
    assert build_eval_candidates(example, dataset, 3) == build_eval_candidates(example, dataset, 3, Split.TEST)
    pools = {tuple(map(tuple, build_eval_candidates(example, dataset, seed))) for seed in range(10)}
    assert len(pools) > 1


def test_pool_larger_than_distinct_golds_is_rejected(by_name):
    dataset = by_name["caption"].model_copy(update={"eval_candidate_count": 500})
    with pytest.raises(ConfigurationError):
        CandidatePoolBuilder(dataset, Split.VALID, seed=0)


# Downsampling

def test_downsample_fraction_keeps_a_subset(by_name):
    dataset = by_name["caption"]
    half = downsample(dataset, 0.5, seed=1)
    assert len(half.train) == len(dataset.train) // 2
    assert {e.id for e in half.train} <= {e.id for e in dataset.train}
    assert half.valid == dataset.valid and half.test == dataset.test
    assert downsample(dataset, 0.5, seed=1).train == half.train


def test_downsample_absolute_count(by_name):
    assert len(downsample(by_name["qa"], 5, seed=0).train) == 5


@pytest.mark.parametrize("size", [0.0, 1.5, 0, 10_000])
def test_downsample_rejects_invalid_sizes(by_name, size):
    with pytest.raises(DomainError):
        downsample(by_name["qa"], size, seed=0)


def test_downsample_curve():
    assert downsample_curve(5, 0.25) == [0.25, 0.4375, 0.625, 0.8125, 1.0]
    assert downsample_curve(1) == [1.0]


# Synthetic suite

def test_generation_is_deterministic(suite_config, repository):
    first = [repository.dumps(d) for d in generate_synthetic_suite(suite_config)]
    second = [repository.dumps(d) for d in generate_synthetic_suite(suite_config)]
    other = [repository.dumps(d) for d in generate_synthetic_suite(suite_config.model_copy(update={"seed": 1}))]
    assert first == second
    assert first != other


def test_suite_shapes(suite, suite_config):
    assert [d.name for d in suite] == ["caption", "chat", "qa"]
    assert [d.head for d in suite] == [HeadType.RANKING, HeadType.RANKING, HeadType.CLASSIFICATION]
    for dataset in suite:
        assert len(dataset.train) == suite_config.train_size
        assert dataset.n_regions == suite_config.n_regions


def test_generator_inversion_recovers_every_target(suite_config, by_name):
    """Test that a perfect reader of the generating function scores 100%."""
    generator = SyntheticSuiteGenerator(suite_config)
    for example in by_name["qa"].test:
        assert generator.oracle_answer(example) == example.answer_index
    for task in ("caption", "chat"):
        for example in by_name[task].test:
            assert generator.oracle_gold(task, example) == example.gold_text


def test_vocabulary_too_small_is_rejected():
    with pytest.raises(ConfigurationError):
        SyntheticSuiteGenerator(SyntheticSuiteConfig(vocab_size=10))

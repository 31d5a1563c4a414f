import json

import numpy as np
import pytest
from pydantic import ValidationError

from data.models import HeadType
from data.repository import DatasetRepository
from data.synthetic import SyntheticSuiteConfig, generate_synthetic_suite
from exceptions import ConfigurationError
from models.transresnet import TransResNetModel
from services.ablation_service import (
    PARAMETER_TOLERANCE,
    AblationService,
    AblationSuiteConfig,
    RunOutcome,
    RunSpec,
    layer_matched_gap,
    run_experiment,
)
from services.schemas import TrainConfig
from services.trainer_service import TrainerService


@pytest.fixture
def service():
    return AblationService()


@pytest.fixture
def suite_on_disk(suite, tmp_path):
    repository = DatasetRepository()
    return [repository.save_dataset(d, tmp_path / "data" / f"{d.name}.jsonl") for d in suite]


@pytest.fixture
def make_suite(suite_on_disk, tmp_path, tiny_model):
    def build(*ablations, **overrides):
        fields = dict(
            datasets=suite_on_disk,
            output_dir=tmp_path / "ablations",
            ablations=list(ablations),
            model=tiny_model,
            train=TrainConfig(batch_size=4, max_epochs=1, steps_per_epoch=3, max_eval_examples=4),
            max_eval_examples=4,
        )
        fields.update(overrides)
        return AblationSuiteConfig(**fields)
    return build


def test_suite_needs_at_least_one_ablation(tmp_path):
    with pytest.raises(ValidationError):
        AblationSuiteConfig(datasets=[], output_dir=tmp_path, ablations=[])
    with pytest.raises(ValidationError):
        AblationSuiteConfig(datasets=[], output_dir=tmp_path, ablations=["sparsity"])
    with pytest.raises(ValidationError):
        AblationSuiteConfig(datasets=[], output_dir=tmp_path, ablations=["layer_matched"],
                            layer_matched_combiners=[5])


# Planning

@pytest.mark.parametrize("kind,runs", [
    ("early_stop", 4),
    ("mt_ft", 1),
    ("heads", 3),
    ("freeze", 2),
    ("single_combiner", 1),
    ("layer_matched", 6),
    ("downsample", 10),
    ("image_features", 4),
])
def test_plan_sizes(service, make_suite, suite, kind, runs):
    specs = service.plan_ablation(kind, make_suite(kind), suite)
    assert len(specs) == runs
    assert all(spec.ablation == kind for spec in specs)
    assert len({spec.run_dir for spec in specs}) == runs


def test_unknown_ablation_is_rejected(service, make_suite, suite):
    with pytest.raises(ConfigurationError):
        service.plan_ablation("sparsity", make_suite("freeze"), suite)


def test_early_stop_plans_one_run_per_criterion(service, make_suite, suite):
    specs = service.plan_ablation("early_stop", make_suite("early_stop"), suite)
    assert [s.train.early_stop_criterion for s in specs] == ["average", "task:caption", "task:chat", "task:qa"]
    assert all(s.train_tasks == ["caption", "chat", "qa"] for s in specs)


def test_heads_ablation_trains_the_answer_task_three_ways(service, make_suite, suite):
    specs = service.plan_ablation("heads", make_suite("heads"), suite)
    assert [s.label for s in specs] == ["classification head", "ranking head", "multi-head"]
    assert [s.train.head_modes["qa"] for s in specs] == [HeadType.CLASSIFICATION, HeadType.RANKING, HeadType.BOTH]
    assert [s.eval_heads["qa"] for s in specs] == [HeadType.CLASSIFICATION, HeadType.RANKING,
                                                   HeadType.CLASSIFICATION]
    assert [s.report_heads["qa"] for s in specs] == [
        [HeadType.CLASSIFICATION], [HeadType.RANKING], [HeadType.CLASSIFICATION, HeadType.RANKING],
    ]
    assert all(s.train_tasks == ["qa"] for s in specs)


def test_heads_ablation_needs_an_answer_task(service, make_suite, by_name):
    with pytest.raises(ConfigurationError):
        service.plan_ablation("heads", make_suite("heads"), [by_name["caption"], by_name["chat"]])


def test_layer_matched_pairs_controls_with_ammc(service, make_suite, suite):
    specs = service.plan_ablation("layer_matched", make_suite("layer_matched"), suite)
    assert [s.label for s in specs] == ["MMC 2 layers", "2-AMMC", "MMC 3 layers", "3-AMMC", "MMC 4 layers", "4-AMMC"]
    control, ammc = specs[0], specs[1]
    assert control.model["n_combiners"] == 1 and control.model["layers_per_combiner"] == 2
    assert ammc.model["n_combiners"] == 2 and ammc.model["layers_per_combiner"] == 1
    assert control.model["d_model"] == 8


def test_downsample_plans_single_and_multi_task_curves(service, make_suite, suite):
    specs = service.plan_ablation("downsample", make_suite("downsample", downsample_task="qa"), suite)
    assert [s.downsample_size for s in specs[::2]] == [0.25, 0.4375, 0.625, 0.8125, 1.0]
    assert [s.label for s in specs[:2]] == ["ST qa n=6", "MT qa n=6"]
    assert specs[-1].label == "MT qa n=24"
    assert [s.train_tasks for s in specs[:2]] == [["qa"], ["caption", "chat", "qa"]]
    assert all(s.train.early_stop_criterion == "task:qa" and s.downsample_task == "qa" for s in specs)
    assert [(s.table_row, s.table_column) for s in specs[:2]] == [("n=6", "ST"), ("n=6", "MT")]


def test_downsample_on_a_single_task_has_no_multi_task_column(service, make_suite, by_name):
    specs = service.plan_ablation("downsample", make_suite("downsample"), [by_name["qa"]])
    assert len(specs) == 5
    assert {s.table_column for s in specs} == {"ST"}


def test_downsample_task_must_exist(service, make_suite, suite):
    with pytest.raises(ConfigurationError):
        service.plan_ablation("downsample", make_suite("downsample", downsample_task="vqa"), suite)


def test_single_combiner_probes_an_ammc(service, make_suite, suite):
    (spec,) = service.plan_ablation("single_combiner", make_suite("single_combiner", probe_combiners=2), suite)
    assert spec.probe
    assert spec.model["n_combiners"] == 2
    assert spec.label == "2-AMMC"


# Parameter audit

def outcome(label, combiner_params):
    return RunOutcome(ablation="layer_matched", label=label, run_dir="unused",
                      combiner_parameter_count=combiner_params)


def test_parameter_audit_flags_mismatched_pairs(service):
    notes = service._notes("layer_matched", [
        outcome("MMC 2 layers", 1000), outcome("2-AMMC", 1005),
        outcome("MMC 3 layers", 1000), outcome("3-AMMC", 1100),
    ])
    assert len(notes) == 2
    assert notes[0].endswith("(ok)")
    assert notes[1].endswith("(MISMATCH)")


def test_layer_matched_gap_is_the_gate_only(suite, make_model_config):
    ammc = TransResNetModel(make_model_config(suite, d_model=16, n_combiners=2, layers_per_combiner=1))
    mmc = TransResNetModel(make_model_config(suite, d_model=16, n_combiners=1, layers_per_combiner=2))
    control = mmc.parameter_groups()["combiner"]
    gap = layer_matched_gap(ammc.parameter_groups()["combiner"], control)
    assert gap == pytest.approx((16 * 2 + 2) / control)
    assert gap <= PARAMETER_TOLERANCE


# Execution

def test_failed_run_is_recorded_not_raised(make_suite, tmp_path):
    suite = make_suite("freeze")
    spec = RunSpec(
        ablation="freeze", label="broken", run_dir=tmp_path / "broken", datasets=suite.datasets,
        train_tasks=["vqa"], model=suite.model, train=suite.train, seed=0, eval_split=suite.eval_split,
    )
    result = run_experiment(spec)
    assert result.status == "failed"
    assert "vqa" in result.error
    manifest = json.loads((tmp_path / "broken" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "failed"


@pytest.mark.parametrize("error", [OSError("disk full"), FloatingPointError("overflow encountered")])
def test_io_and_numeric_failures_are_recorded_not_raised(make_suite, tmp_path, monkeypatch, error):
    def fail(self, *args, **kwargs):
        raise error
    monkeypatch.setattr(TrainerService, "train", fail)
    suite = make_suite("freeze")
    spec = RunSpec(
        ablation="freeze", label="broken", run_dir=tmp_path / "broken", datasets=suite.datasets,
        train_tasks=["caption"], model=suite.model, train=suite.train, seed=0, eval_split=suite.eval_split,
    )
    result = run_experiment(spec)
    assert result.status == "failed"
    assert result.error == f"{type(error).__name__}: {error}"
    manifest = json.loads((tmp_path / "broken" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["status"] == "failed"


def test_suite_continues_past_a_failing_run(service, make_suite, suite_on_disk, monkeypatch):
    train = TrainerService.train

    def fail_when_frozen(self, model, tasks, cfg, **kwargs):
        if cfg.freeze_encoders:
            raise OSError("disk full")
        return train(self, model, tasks, cfg, **kwargs)
    monkeypatch.setattr(TrainerService, "train", fail_when_frozen)
    suite = make_suite("freeze", datasets=[suite_on_disk[0], suite_on_disk[2]])
    summary = service.run_suite(suite)["freeze"]
    assert summary.failures == {"freeze encoders": "OSError: disk full"}
    assert summary.table.cells["freeze encoders"] == {"caption": None, "qa": None}
    assert all(value is not None for value in summary.table.cells["fine-tune encoders"].values())
    text = (suite.output_dir / "freeze" / "summary.txt").read_text(encoding="utf-8")
    assert "FAILED freeze encoders: OSError: disk full" in text


def test_unplannable_ablation_writes_a_failed_summary(service, tmp_path, by_name, tiny_model):
    path = DatasetRepository().save_dataset(by_name["caption"], tmp_path / "caption.jsonl")
    suite = AblationSuiteConfig(datasets=[path], output_dir=tmp_path / "out", ablations=["heads"], model=tiny_model)
    summaries = service.run_suite(suite)
    assert "heads" in summaries["heads"].failures
    assert "FAILED heads" in (tmp_path / "out" / "heads" / "summary.txt").read_text(encoding="utf-8")


def test_heads_summary_notes_metric_changes(service, make_suite, suite):
    specs = service.plan_ablation("heads", make_suite("heads"), suite)
    outcomes = [
        RunOutcome(ablation="heads", label=s.label, run_dir=str(s.run_dir), rows={s.label: {"qa": 0.5}})
        for s in specs
    ]
    outcomes[2] = RunOutcome(ablation="heads", label="multi-head", run_dir="unused", status="failed", error="boom")
    summary = service.summarise("heads", outcomes, suite, specs)
    assert summary.table.rows == ["classification head", "ranking head", "multi-head"]
    assert summary.table.cells["ranking head"] == {"caption": None, "chat": None, "qa": 0.5}
    assert summary.table.cells["multi-head"]["qa"] is None
    assert summary.failures == {"multi-head": "boom"}
    assert "ranking head: qa reports R@1" in summary.notes
    assert not any(note.startswith("classification head") for note in summary.notes)
    assert "FAILED multi-head: boom" in summary.render()


def test_heads_summary_compares_each_head_alone_and_jointly(service, make_suite, suite):
    specs = service.plan_ablation("heads", make_suite("heads"), suite)
    head_metrics = [
        {"classification": {"qa": 0.6}},
        {"ranking": {"qa": 0.4}},
        {"classification": {"qa": 0.65}, "ranking": {"qa": 0.5}},
    ]
    outcomes = [
        RunOutcome(ablation="heads", label=s.label, run_dir=str(s.run_dir), rows={s.label: {"qa": 0.5}},
                   head_metrics=metrics)
        for s, metrics in zip(specs, head_metrics)
    ]
    summary = service.summarise("heads", outcomes, suite, specs)
    detail = summary.detail
    assert detail.columns == ["classification head", "ranking head"]
    assert detail.cells["multi-head"] == {"classification head": 0.65, "ranking head": 0.5}
    assert detail.cells["ranking head"] == {"classification head": None, "ranking head": 0.4}
    assert "ranking head: multi-head - ranking head alone = +10.00 points" in summary.notes
    assert "classification head: multi-head - classification head alone = +5.00 points" in summary.notes
    rendered = summary.render()
    assert "classification head (qa accuracy)" in rendered
    assert "ranking head (qa R@1)" in rendered


def test_downsample_summary_tabulates_single_against_multi_task(service, make_suite, suite):
    specs = service.plan_ablation("downsample", make_suite("downsample", downsample_task="qa"), suite)
    outcomes = []
    for spec in specs:
        value = 0.3 if spec.table_column == "ST" else 0.5
        outcomes.append(RunOutcome(ablation="downsample", label=spec.label, run_dir=str(spec.run_dir),
                                   rows={spec.label: {"caption": 0.1, "chat": 0.1, "qa": value}}))
    outcomes[-1] = RunOutcome(ablation="downsample", label=specs[-1].label, run_dir="unused",
                              status="failed", error="FloatingPointError: overflow")
    summary = service.summarise("downsample", outcomes, suite, specs)
    detail = summary.detail
    assert detail.rows == ["n=6", "n=10", "n=15", "n=20", "n=24"]
    assert detail.columns == ["ST", "MT"]
    assert detail.cells["n=6"] == {"ST": 0.3, "MT": 0.5}
    assert detail.cells["n=24"] == {"ST": 0.3, "MT": None}
    assert "n=6: MT - ST = +20.00 points" in summary.notes
    assert not any(note.startswith("n=24:") for note in summary.notes)
    assert "qa train size" in summary.render()


@pytest.mark.slow
def test_freeze_suite_runs_end_to_end(service, make_suite):
    suite = make_suite("freeze")
    summary = service.run_suite(suite)["freeze"]
    assert not summary.failures
    assert summary.table.rows == ["fine-tune encoders", "freeze encoders"]
    assert "freeze encoders: freeze_contract = True" in summary.notes
    for label in summary.table.rows:
        assert all(0.0 <= value <= 1.0 for value in summary.table.cells[label].values())
    for slug in ("finetune", "frozen"):
        assert (suite.output_dir / "freeze" / slug / "checkpoint.ckpt").is_file()
        assert (suite.output_dir / "freeze" / slug / "manifest.json").is_file()
    assert (suite.output_dir / "freeze" / "summary.json").is_file()


# Directional checks on generated data, median over seeds

SEEDS = (0, 1, 2)


@pytest.fixture
def seeded_suite(tmp_path):
    """A mid-sized generated suite per seed, with a base config that trains for a few epochs."""
    def build(ablation, seed, **overrides):
        repository = DatasetRepository()
        datasets = generate_synthetic_suite(SyntheticSuiteConfig(seed=seed, train_size=400))
        paths = [repository.save_dataset(d, tmp_path / f"data_{seed}" / f"{d.name}.jsonl") for d in datasets]
        fields = dict(
            datasets=paths,
            output_dir=tmp_path / f"ablations_{seed}",
            ablations=[ablation],
            seed=seed,
            model={"d_model": 16},
            train=TrainConfig(batch_size=16, max_epochs=6, patience=3, max_eval_examples=100),
        )
        fields.update(overrides)
        return AblationSuiteConfig(**fields)
    return build


@pytest.mark.slow
def test_multi_head_training_helps_the_ranking_head(service, seeded_suite):
    gains = []
    for seed in SEEDS:
        summary = service.run_suite(seeded_suite("heads", seed))["heads"]
        assert not summary.failures
        cells = summary.detail.cells
        gains.append(cells["multi-head"]["ranking head"] - cells["ranking head"]["ranking head"])
    assert np.median(gains) >= 0.05


@pytest.mark.slow
def test_frozen_encoders_lose_to_fine_tuned_encoders(service, seeded_suite):
    gaps = []
    for seed in SEEDS:
        summary = service.run_suite(seeded_suite("freeze", seed))["freeze"]
        assert not summary.failures
        assert "freeze encoders: freeze_contract = True" in summary.notes
        gaps.append(summary.table.average("fine-tune encoders") - summary.table.average("freeze encoders"))
    assert np.median(gaps) >= 0.05


@pytest.mark.slow
def test_multi_task_helps_most_on_the_smallest_training_set(service, seeded_suite):
    gaps = []
    for seed in SEEDS:
        suite = seeded_suite("downsample", seed, downsample_task="caption", downsample_points=3)
        detail = service.run_suite(suite)["downsample"].detail
        assert detail.columns == ["ST", "MT"]
        gaps.append([detail.cells[row]["MT"] - detail.cells[row]["ST"] for row in detail.rows])
    medians = np.median(np.asarray(gaps), axis=0)
    assert medians[0] >= 0.03
    inversions = sum(later > earlier for earlier, later in zip(medians, medians[1:]))
    assert inversions <= 1

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autograd import no_grad
from autograd.tensor import Tensor
from data.models import UNK_ID, HeadType, RawImageFeatures
from exceptions import ConfigurationError, DimensionError, DomainError, ShapeError, VocabIndexError
from models.combiner import (
    AttentiveMultimodalCombiner,
    FeatureAssembler,
    ammc_forward,
    assemble_sequence,
    mmc_forward,
    probe_single_combiner,
)
from models.config import CombinerConfig
from models.encoders import (
    CandidateEncoder,
    ContextEncoder,
    FeatureBundle,
    ImageFeatureAdapter,
    adapt_image_features,
    encode_candidates,
    encode_context,
)
from models.heads import (
    RankingBatch,
    argmax_lowest,
    classification_loss,
    multi_head_loss,
    ranking_loss,
)
from models.transresnet import TransResNetModel


def gated_combiner(n_combiners: int, seed: int = 0) -> AttentiveMultimodalCombiner:
    """A combiner whose gate has been moved away from its zero initialisation."""
    combiner = AttentiveMultimodalCombiner(
        CombinerConfig(n_combiners=n_combiners, layers_per_combiner=1, n_heads=2, d_model=8), seed
    )
    if combiner.gate is not None:
        combiner.gate.weight.data = np.random.default_rng(seed).normal(size=(8, n_combiners))
    return combiner


# Combiner

@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (1, 8), elements=st.floats(-20, 20)), st.integers(2, 4))
def test_gate_weights_lie_on_the_simplex(style, n_combiners):
    """Test that gate weights are non-negative and sum to one for any query."""
    weights = gated_combiner(n_combiners).gate_weights(Tensor(style)).data
    assert weights.shape == (1, n_combiners)
    assert np.all(weights >= 0)
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_zero_initialised_gate_is_uniform(rng):
    combiner = AttentiveMultimodalCombiner(CombinerConfig(n_combiners=3, layers_per_combiner=1, d_model=8), 0)
    weights = combiner.gate_weights(Tensor(rng.normal(size=(1, 8)))).data
    np.testing.assert_allclose(weights, np.full((1, 3), 1 / 3), rtol=1e-15)


def test_single_combiner_equals_plain_combiner_bit_for_bit(rng):
    """Test that one combiner has no gate parameters and reproduces the MMC exactly."""
    combiner = gated_combiner(1)
    assert combiner.gate is None
    assert not any("gate" in name for name, _ in combiner.named_parameters())
    seq, style = Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(1, 8)))
    joint, record = ammc_forward(seq, style, combiner)
    np.testing.assert_array_equal(joint.data, mmc_forward(seq, combiner.combiners[0]).data)
    assert record.weights == (1.0,)


@pytest.mark.parametrize("n_combiners", [2, 3, 4])
def test_joint_is_gate_weighted_sum_of_probes(rng, n_combiners):
    combiner = gated_combiner(n_combiners, seed=n_combiners)
    seq, style = Tensor(rng.normal(size=(6, 8))), Tensor(rng.normal(size=(1, 8)))
    joint, record = ammc_forward(seq, style, combiner, style_id=3)
    rebuilt = sum(w * probe_single_combiner(seq, style, combiner, i).data for i, w in enumerate(record.weights))
    np.testing.assert_allclose(joint.data, rebuilt, atol=1e-12)
    assert record.n_combiners == n_combiners
    assert record.style_id == 3


def test_probe_rejects_out_of_range_index(rng):
    combiner = gated_combiner(2)
    with pytest.raises(VocabIndexError):
        probe_single_combiner(Tensor(rng.normal(size=(3, 8))), Tensor(rng.normal(size=(1, 8))), combiner, 2)


def test_gate_rejects_misshapen_query(rng):
    with pytest.raises(DimensionError):
        gated_combiner(2).gate_weights(Tensor(rng.normal(size=(2, 8))))


def test_assembler_keeps_family_order_and_skips_absent_blocks(rng):
    assembler = FeatureAssembler(8, 4, rng)
    bundle = FeatureBundle(
        context_tokens=Tensor(rng.normal(size=(3, 8))),
        image_global=None,
        image_regional=Tensor(rng.normal(size=(2, 8))),
        style=Tensor(rng.normal(size=(1, 8))),
    )
    assert bundle.type_tags == [0, 0, 0, 2, 2, 3]
    assert assemble_sequence(bundle, assembler).shape == (6, 8)


def test_assembler_rejects_empty_bundle(rng):
    with pytest.raises(ShapeError):
        assemble_sequence(FeatureBundle(None, None, None, None), FeatureAssembler(8, 4, rng))


# Encoders

def test_context_keeps_most_recent_tokens_and_maps_unknown_ids(rng):
    encoder = ContextEncoder(10, 4, 2, 1, 3, rng)
    assert encoder.prepare_ids([4, 5, 6, 42]) == [5, 6, UNK_ID]


def test_candidate_keeps_leading_tokens(rng):
    encoder = CandidateEncoder(10, 4, 2, 1, 3, rng)
    assert encoder.prepare_ids([4, 5, 6, 7]) == [4, 5, 6]


def test_encoders_produce_model_width_rows(rng):
    context = ContextEncoder(10, 4, 2, 1, 8, rng)
    candidates = CandidateEncoder(10, 4, 2, 1, 8, rng)
    assert encode_context([3, 4, 5], context).shape == (3, 4)
    assert encode_candidates([[3], [4, 5], [6, 7, 8]], candidates).shape == (3, 4)


def test_encoders_reject_empty_inputs(rng):
    with pytest.raises(DomainError):
        encode_context([], ContextEncoder(10, 4, 2, 1, 8, rng))
    with pytest.raises(DomainError):
        encode_candidates([[3], []], CandidateEncoder(10, 4, 2, 1, 8, rng))


def test_image_adapter_projects_present_families(rng):
    adapter = ImageFeatureAdapter(3, 2, 4, rng)
    raw = RawImageFeatures(global_vec=[0.1, 0.2, 0.3], regional=[[1.0, 2.0]] * 5)
    image_global, image_regional = adapt_image_features(raw, adapter)
    assert image_global.shape == (1, 4)
    assert image_regional.shape == (5, 4)
    assert adapt_image_features(None, adapter) == (None, None)
    assert adapt_image_features(RawImageFeatures(global_vec=[0.1, 0.2, 0.3]), adapter)[1] is None


def test_image_adapter_rejects_wrong_width(rng):
    adapter = ImageFeatureAdapter(3, 2, 4, rng)
    with pytest.raises(DimensionError):
        adapt_image_features(RawImageFeatures(global_vec=[0.1, 0.2]), adapter)


# Heads

def test_argmax_breaks_ties_towards_lowest_index():
    assert argmax_lowest(np.array([0.5, 2.0, 2.0, 1.0])) == 1


def test_ranking_loss_uses_in_batch_negatives(rng):
    joints, golds = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    scores = joints @ golds.T
    target = np.eye(3)
    expected = np.mean(np.logaddexp(0, scores) - scores * target)
    loss = ranking_loss(RankingBatch(Tensor(joints), Tensor(golds)))
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_ranking_loss_needs_two_examples(rng):
    with pytest.raises(ConfigurationError):
        ranking_loss(RankingBatch(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(1, 4)))))


def test_classification_loss_rejects_bad_targets():
    with pytest.raises(DomainError):
        classification_loss(Tensor([[0.0, 1.0]]), [1.0, -0.5])
    with pytest.raises(DimensionError):
        classification_loss(Tensor([[0.0, 1.0]]), [1.0, 0.0, 0.0])


def test_multi_head_loss_mixes_parts():
    ranking, classification = Tensor([2.0]), Tensor([4.0])
    assert multi_head_loss(ranking, classification, 0.25).item() == pytest.approx(0.25 * 4 + 0.75 * 2)
    assert multi_head_loss(ranking, None, 0.25) is ranking
    assert multi_head_loss(None, classification, 0.25) is classification
    with pytest.raises(ConfigurationError):
        multi_head_loss(ranking, classification, 1.5)
    with pytest.raises(ConfigurationError):
        multi_head_loss(None, None)


# Full model

def test_model_parameter_groups(model):
    groups = model.parameter_groups()
    assert set(groups) == {
        "context_encoder", "candidate_encoder", "style_encoder", "image_adapter",
        "assembler", "combiner", "classifier",
    }
    assert sum(groups.values()) == model.parameter_count()
    assert all(name.split(".")[0] in {"context_encoder", "candidate_encoder", "style_encoder", "image_adapter"}
               for name in model.encoder_parameter_names())


def test_initialisation_is_deterministic_per_component(suite, make_model_config):
    """Test that resizing the combiner leaves encoder initialisation untouched."""
    one = TransResNetModel(make_model_config(suite)).state_dict()
    again = TransResNetModel(make_model_config(suite)).state_dict()
    three = TransResNetModel(make_model_config(suite, n_combiners=3)).state_dict()
    for name, value in one.items():
        np.testing.assert_array_equal(value, again[name])
        if name.startswith(("context_encoder", "candidate_encoder", "style_encoder", "image_adapter")):
            np.testing.assert_array_equal(value, three[name])


def test_layer_matched_controls_differ_only_by_gate(suite, make_model_config):
    """Test that N combiners of k layers cost the gate more than one combiner of N*k layers."""
    ammc = TransResNetModel(make_model_config(suite, n_combiners=2, layers_per_combiner=1))
    mmc = TransResNetModel(make_model_config(suite, n_combiners=1, layers_per_combiner=2))
    d = ammc.config.d_model
    assert ammc.parameter_count() - mmc.parameter_count() == d * 2 + 2


@pytest.mark.parametrize("task,head", [("caption", HeadType.RANKING), ("qa", HeadType.CLASSIFICATION),
                                       ("qa", HeadType.BOTH)])
def test_batch_loss_is_finite(model, by_name, task, head):
    loss, parts = model.batch_loss(by_name[task].train[:4], head, mix=0.5)
    assert np.isfinite(loss.item())
    assert parts["loss"] == loss.item()
    assert ("ranking" in parts) == head.uses_ranking
    assert ("classification" in parts) == head.uses_classification


def test_image_feature_ablation_drops_image_rows(suite, make_model_config, by_name):
    example = by_name["caption"].train[0]
    full = TransResNetModel(make_model_config(suite)).feature_bundle(example)
    blind = TransResNetModel(make_model_config(suite, image_features="none")).feature_bundle(example)
    assert full.image_global is not None and full.image_regional is not None
    assert blind.image_global is None and blind.image_regional is None


def test_style_id_outside_vocabulary_is_rejected(model, by_name):
    example = by_name["caption"].train[0].model_copy(update={"style_id": 999})
    with pytest.raises(VocabIndexError):
        model.joint(example)


def test_candidate_cache_does_not_change_scores(model, by_name):
    example = by_name["caption"].valid[0]
    candidates = [e.gold_text for e in by_name["caption"].valid[:4]]
    cache: dict = {}
    first = model.score_candidates(example, candidates, cache=cache)
    second = model.score_candidates(example, candidates, cache=cache)
    np.testing.assert_allclose(first, model.score_candidates(example, candidates), atol=1e-12)
    np.testing.assert_array_equal(first, second)
    assert len(cache) == len({tuple(c) for c in candidates})


def test_scoring_records_no_tape(model, by_name):
    with no_grad():
        joint, _ = model.joint(by_name["qa"].valid[0])
    assert not joint.requires_grad
    assert model.answer_logits(by_name["qa"].valid[0]).shape == (model.config.n_answers,)

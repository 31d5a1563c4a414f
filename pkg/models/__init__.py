from .config import FEATURE_ORDER, CombinerConfig, ModelConfig
from .combiner import (
    AttentiveMultimodalCombiner,
    FeatureAssembler,
    GateRecord,
    MultimodalCombiner,
    ammc_forward,
    assemble_sequence,
    mmc_forward,
    probe_single_combiner,
)
from .encoders import (
    CandidateEncoder,
    ContextEncoder,
    FeatureBundle,
    ImageFeatureAdapter,
    StyleEncoder,
    adapt_image_features,
    encode_candidates,
    encode_context,
    encode_style,
)
from .heads import (
    ClassificationHead,
    RankingBatch,
    argmax_lowest,
    classification_loss,
    classify,
    multi_head_loss,
    rank_candidates,
    ranking_loss,
)
from .transresnet import ENCODER_GROUPS, TransResNetModel

__all__ = [
    'FEATURE_ORDER',
    'CombinerConfig',
    'ModelConfig',
    'AttentiveMultimodalCombiner',
    'FeatureAssembler',
    'GateRecord',
    'MultimodalCombiner',
    'ammc_forward',
    'assemble_sequence',
    'mmc_forward',
    'probe_single_combiner',
    'CandidateEncoder',
    'ContextEncoder',
    'FeatureBundle',
    'ImageFeatureAdapter',
    'StyleEncoder',
    'adapt_image_features',
    'encode_candidates',
    'encode_context',
    'encode_style',
    'ClassificationHead',
    'RankingBatch',
    'argmax_lowest',
    'classification_loss',
    'classify',
    'multi_head_loss',
    'rank_candidates',
    'ranking_loss',
    'ENCODER_GROUPS',
    'TransResNetModel',
]

"""Spontaneous-style codec language-model text-to-speech toolkit."""

__version__ = "0.1.0"

from .annotation import (
    TAXONOMY,
    AnnotatedUtterance,
    behavior_id,
    behavior_name,
    expand_labels,
    parse_transcript,
    split_subsentences,
    syntactic_features,
)
from .backbone import ConditionSeq, ModelConfig, SamplingConfig, concat_augment
from .codec import CodecSpec, CodecTokenGrid, MockCodec
from .model import Checkpoint, SponSpeechModel
from .synthesis import SynthesisRequest, synthesize, synthesize_baseline
from .training import TrainingConfig, loss_stage1

__all__ = [
    "TAXONOMY",
    "AnnotatedUtterance",
    "Checkpoint",
    "CodecSpec",
    "CodecTokenGrid",
    "ConditionSeq",
    "MockCodec",
    "ModelConfig",
    "SamplingConfig",
    "SponSpeechModel",
    "SynthesisRequest",
    "TrainingConfig",
    "behavior_id",
    "behavior_name",
    "concat_augment",
    "expand_labels",
    "loss_stage1",
    "parse_transcript",
    "split_subsentences",
    "synthesize",
    "synthesize_baseline",
    "syntactic_features",
]

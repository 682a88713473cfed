"""Relation extraction with sentence-, mention- and segment-level attention
over a self-contained reverse-mode autodiff core."""

__version__ = "0.1.0"

from .autodiff import Graph, Tensor, grad_check
from .data import RelationInstance, Vocab
from .encoders import ChannelConfig, EncodedSentence
from .evaluation import ScoreReport, micro_f1, semeval_macro_f1
from .model import ModelConfig, RelationModel
from .sms import FeatureToggles, SmsOutput, SmsParams, attend, forward
from .training import TrainConfig, train

__all__ = [
    "Graph", "Tensor", "grad_check",
    "RelationInstance", "Vocab",
    "ChannelConfig", "EncodedSentence",
    "ScoreReport", "micro_f1", "semeval_macro_f1",
    "ModelConfig", "RelationModel",
    "FeatureToggles", "SmsOutput", "SmsParams", "attend", "forward",
    "TrainConfig", "train",
]

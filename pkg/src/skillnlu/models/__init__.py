"""Statistical intent classification and slot tagging."""

from .crf import CrfModel, bio_labels, crf_loglik_grad, decode_frame, train_crf, viterbi_decode
from .maxent import MaxEntModel, predict_intent, train_maxent
from .optim import TrainConfig
from .quantize import QuantizedModel, quantize_model

__all__ = [
    "CrfModel",
    "MaxEntModel",
    "QuantizedModel",
    "TrainConfig",
    "bio_labels",
    "crf_loglik_grad",
    "decode_frame",
    "predict_intent",
    "quantize_model",
    "train_crf",
    "train_maxent",
    "viterbi_decode",
]

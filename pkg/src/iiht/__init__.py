"""Indicator-conditioned radiology report generation on a small numpy autodiff core."""

from .corpus import CorpusSpec, ReportRecord, generate as generate_corpus, load_jsonl, save_jsonl
from .decoding import GenerationResult, beam_search, generate, generate_batch, greedy_search
from .errors import (ConfigError, ContractError, DimensionError, IIHTError, NonFiniteGradient,
                     NumericError, TrainingDiverged, ValidationError)
from .kernels import BACKEND
from .metrics import EvalReport, bleu_n, build_report, meteor_simplified, rouge_l
from .model import IIHTModel, ModelConfig
from .templates import IndicatorTemplates
from .tokenizer import SubwordVocab, train_bpe
from .training import TrainConfig, load_checkpoint, preset, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "ContractError", "CorpusSpec", "DimensionError", "EvalReport",
    "GenerationResult", "IIHTError", "IIHTModel", "IndicatorTemplates", "ModelConfig",
    "NonFiniteGradient", "NumericError", "ReportRecord", "SubwordVocab", "TrainConfig",
    "TrainingDiverged", "ValidationError", "beam_search", "bleu_n", "build_report", "generate",
    "generate_batch", "generate_corpus", "greedy_search", "load_checkpoint", "load_jsonl",
    "meteor_simplified", "preset", "rouge_l", "save_checkpoint", "save_jsonl", "train", "train_bpe",
]

"""Multimodal entity linker: mention queries enhanced by text, scene and
visual attention units, ranked against entity description vectors."""

from .config import TrainConfig, load_config
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (EntityRecord, MultimodalSample, load_dataset,
                   split_dataset, synth_generate)
from .evaluate import RankingReport, evaluate
from .model import Featurizer, batch_forward, eval_forward, forward_sample, init_params
from .optim import ParamStore, adamw_step, grad_check
from .retrieval import (CandidateSet, EntityIndex, levenshtein,
                        name_similarity, retrieve_candidates, sample_negatives)
from .tensor import Tensor, backward, no_grad
from .train import TrainResult, train

__all__ = [
    "CandidateSet", "EntityIndex", "EntityRecord", "Featurizer",
    "MultimodalSample", "ParamStore", "RankingReport", "Tensor",
    "TrainConfig", "TrainResult", "adamw_step", "backward", "batch_forward",
    "eval_forward", "evaluate", "forward_sample", "grad_check",
    "init_params", "levenshtein", "load_checkpoint", "load_config",
    "load_dataset", "name_similarity", "no_grad", "retrieve_candidates",
    "sample_negatives", "save_checkpoint", "split_dataset", "synth_generate",
    "train",
]

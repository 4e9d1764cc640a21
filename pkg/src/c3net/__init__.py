"""Continuum-environment property prediction from per-atom potentials."""

from .chemio import Molecule, parse_sdf, read_sdf, write_decomposition
from .model import (EnvironmentSpec, ForwardResult, ModelConfig, ModelParams, load_checkpoint,
                    load_solvent_table, logp_from_solvation, predict, save_checkpoint)
from .surface import sas_points
from .type2vec import EmbeddingTable, SkipGramConfig, train_skipgram

__version__ = "0.1.0"

__all__ = [
    "EmbeddingTable", "EnvironmentSpec", "ForwardResult", "ModelConfig", "ModelParams", "Molecule",
    "SkipGramConfig", "load_checkpoint", "load_solvent_table", "logp_from_solvation", "parse_sdf",
    "predict", "read_sdf", "sas_points", "save_checkpoint", "train_skipgram", "write_decomposition",
]

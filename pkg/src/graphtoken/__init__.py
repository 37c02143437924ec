"""Align a molecular graph into a frozen language model's token space.

A GIN encodes the molecule, a learnable compressor shrinks the LM vocabulary,
and cross multi-head attention lets the graph feature retrieve a mixture of
compressed token embeddings.  The result is injected at a ``<|graph|>``
placeholder in a text prompt and read out by a linear task head.
"""

from .aligner import AlignerParams, GraphToken, compress_vocab, cross_attend, graph_tokenize, value_placeholder_embedding
from .backbone import ParamDigest, Vocab, build_vocab, freeze_check, param_digest, tokenize
from .checkpoint import Checkpoint
from .config import ConfigError, Dims, RunConfig, TrainConfig, config_hash, load_config
from .data import DatasetRecord, ingest, load_fixture
from .encoders import GinParams, gin_encode, text_encode
from .evalkit import SplitSpec, evaluate, mae, roc_auc, split_dataset
from .molgraph import Atom, Bond, MolGraph, ParseError, featurize, parse_smiles, wl_colors
from .numerics import SGD, Tensor, backward, grad_check
from .pipeline import (Backbone, FrozenViolation, TaskSpec, assemble_prompt, build_backbone, fewshot_adapt,
                       info_nce, inject_embeddings, train_stage1, train_stage2)

__version__ = "0.1.0"

"""Masked part autoencoder: unsupervised part discovery by masking and restoration.

The package splits along the pipeline:

- ``autodiff``: reverse-mode tensors over numpy float64
- ``rng``: counter-based seeded streams
- ``filters``: the frozen filter bank that feeds dense features
- ``model``: projection, descriptor extraction, encoder, fill, decoder
- ``losses``: the five training constraints plus restoration
- ``masking``: patch bookkeeping and mask generation
- ``training`` / ``checkpoint``: the loop and its bit-exact state format
- ``inference``: pixel-level part masks from a trained model
- ``metrics`` / ``evaluate``: NMI, ARI, NME and the evaluation protocol
- ``datagen``: synthetic labeled scenes for the toy benchmark
- ``gradcheck``: finite-difference verification of every gradient path
"""

from .config import RunConfig, config_from_dict, config_hash, load_config
from .datagen import LabeledScene, SceneSpec, generate_scenes
from .errors import (
    CheckpointMismatchError,
    FormatError,
    MpaeError,
    NumericalError,
    UnsupportedDtypeError,
    ValidationError,
)
from .inference import PartMasks, load_part_masks, predict_masks, save_part_masks
from .metrics import ari, nme, nmi
from .training import TrainState, train

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "config_from_dict",
    "config_hash",
    "load_config",
    "LabeledScene",
    "SceneSpec",
    "generate_scenes",
    "MpaeError",
    "ValidationError",
    "FormatError",
    "UnsupportedDtypeError",
    "NumericalError",
    "CheckpointMismatchError",
    "PartMasks",
    "predict_masks",
    "save_part_masks",
    "load_part_masks",
    "nmi",
    "ari",
    "nme",
    "TrainState",
    "train",
    "__version__",
]

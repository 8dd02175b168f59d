"""Convolutional framelets and the encoder-decoder interpolation network."""

from .framelet import (
    FilterBank,
    FrameletCoefficients,
    FrameOperators,
    check_frame_condition,
    framelet_decompose,
    framelet_reconstruct,
    identity_pair,
    redundant_pair,
)
from .network import (
    DESK_PRESET,
    PAPER_PRESET,
    CheckpointError,
    FrameletNet,
    NetConfig,
    build_network,
    count_parameters,
    interpolate_planes,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    TrainHyper,
    TrainingDivergedError,
    TrainingReport,
    prepare_pairs,
    train,
    train_curriculum,
)

forward = interpolate_planes

__all__ = [
    "FilterBank", "FrameletCoefficients", "FrameOperators", "check_frame_condition",
    "framelet_decompose", "framelet_reconstruct", "identity_pair", "redundant_pair",
    "DESK_PRESET", "PAPER_PRESET", "CheckpointError", "FrameletNet", "NetConfig",
    "build_network", "count_parameters", "interpolate_planes", "load_checkpoint",
    "save_checkpoint", "TrainHyper", "TrainingDivergedError", "TrainingReport",
    "prepare_pairs", "train", "train_curriculum", "forward",
]

from .model import (
    ConvBlockSpec,
    CvaeArchitecture,
    CvaeModel,
    PosteriorParams,
    ReparamScales,
    constrain_sigma_delta,
    kl_closed_form,
    reparam_scales,
    sample_latent,
)
from .train import TrainConfig, load_checkpoint, save_checkpoint, train, write_loss_trace

__all__ = [
    "ConvBlockSpec", "CvaeArchitecture", "CvaeModel", "PosteriorParams",
    "ReparamScales", "constrain_sigma_delta", "kl_closed_form",
    "reparam_scales", "sample_latent", "TrainConfig", "train",
    "save_checkpoint", "load_checkpoint", "write_loss_trace",
]

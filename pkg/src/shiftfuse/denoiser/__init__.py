"""Audio-conditioned denoisers (analytic oracles and a trainable toy network)
and the guided single-clip reverse step."""
from .sampling import CostCounter, LatentClip, MotionContext, denoise_clip
from .oracles import GaussianProcessOracle, LinearGaussianOracle
from .toy import DenoiserParams, ToyConfig, ToyDenoiser, spatial_audio_attend, temporal_audio_attend
from .training import DropoutRates, sample_dropout, train_toy

__all__ = [
    "CostCounter", "LatentClip", "MotionContext", "denoise_clip",
    "GaussianProcessOracle", "LinearGaussianOracle",
    "DenoiserParams", "ToyConfig", "ToyDenoiser", "spatial_audio_attend", "temporal_audio_attend",
    "DropoutRates", "sample_dropout", "train_toy",
]

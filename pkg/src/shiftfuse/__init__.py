"""Position-shift fusion for long-sequence latent diffusion, with an
audio-conditioned toy denoiser and an instrumented cost model."""
from .errors import (BucketRangeError, ConfigError, DimensionError, EmptyInputError, InputError,
                     InsufficientDataError, NumericalError, ReconciliationError, ScheduleError,
                     ShiftFuseError)
from .diffusion import GuidanceConfig, NoiseSchedule, guided_predict
from .motion import MotionBuckets
from .scheduler import ShiftConfig, StrategyConfig, plan_windows, run_shift, run_strategy
from .costmodel import CostConfig, CostReport, reconcile

__version__ = "0.1.0"

__all__ = [
    "BucketRangeError", "ConfigError", "DimensionError", "EmptyInputError", "InputError",
    "InsufficientDataError", "NumericalError", "ReconciliationError", "ScheduleError",
    "ShiftFuseError",
    "GuidanceConfig", "NoiseSchedule", "guided_predict", "MotionBuckets",
    "ShiftConfig", "StrategyConfig", "plan_windows", "run_shift", "run_strategy",
    "CostConfig", "CostReport", "reconcile",
]

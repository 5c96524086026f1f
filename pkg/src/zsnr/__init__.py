"""Diffusion noise schedules with zero terminal SNR, v-prediction, trailing
sample steps and rescaled classifier-free guidance, plus a toy denoiser for
measuring the brightness bias that the flawed pipeline produces."""

from .dataset import DatasetSpec, brightness_stats, generate
from .denoiser import Adam, MLPDenoiser, TrainConfig, load_checkpoint, save_checkpoint, train, train_step
from .diffusion import (
    LossConfig,
    NoiseMode,
    Parameterization,
    forward_diffuse,
    posterior,
    sample_noise,
    to_x0_eps,
    training_loss,
    v_target,
)
from .errors import (
    CheckpointFormatError,
    ConfigError,
    DegenerateInputError,
    InvalidArgumentError,
    SingularParameterizationError,
    TrainingDivergedError,
    ZsnrError,
)
from .estimator import DiffusionModel
from .sampler import GuidanceConfig, SamplerConfig, apply_cfg, ddim_step, ddpm_step, rescale_cfg, sample
from .schedule import (
    NoiseSchedule,
    ScheduleKind,
    build_schedule,
    make_schedule,
    rescale_zero_terminal_snr,
    snr,
    terminal_stats,
)
from .timesteps import ZERO, TimestepPlan, TimestepStrategy, select_timesteps

__version__ = "0.1.0"

"""DDIM and ancestral samplers with classifier-free guidance.

Guidance is combined in model-output space (on the raw epsilon or v
prediction) and only then converted to ``(x0, eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import Parameterization, posterior, to_x0_eps
from .errors import DegenerateInputError, InvalidArgumentError, SingularParameterizationError
from .schedule import NoiseSchedule
from .timesteps import ZERO, TimestepPlan


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 7.5
    phi: float = 0.7

    def __post_init__(self):
        if not self.w >= 0:
            raise InvalidArgumentError(f"guidance weight must be >= 0, got {self.w}")
        if not 0.0 <= self.phi <= 1.0:
            raise InvalidArgumentError(f"rescale factor phi must be in [0, 1], got {self.phi}")


@dataclass(frozen=True)
class SamplerConfig:
    plan: TimestepPlan
    method: str = "ddim"
    guidance: GuidanceConfig | None = None

    def __post_init__(self):
        if self.method not in ("ddim", "ddpm"):
            raise InvalidArgumentError(f"unknown sampler method: {self.method!r}")
        if self.plan.S < 1:
            raise InvalidArgumentError("empty timestep plan")


def _check_pair(a, b):
    if np.shape(a) != np.shape(b):
        raise InvalidArgumentError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def apply_cfg(x_pos, x_neg, w: float) -> np.ndarray:
    """Classifier-free guidance ``x_neg + w * (x_pos - x_neg)``."""
    _check_pair(x_pos, x_neg)
    x_pos = np.asarray(x_pos, dtype=np.float64)
    x_neg = np.asarray(x_neg, dtype=np.float64)
    return x_neg + w * (x_pos - x_neg)


def _per_sample_std(x: np.ndarray) -> np.ndarray:
    # 1-D input is a single sample; otherwise axis 0 is the batch
    if x.ndim <= 1:
        return np.asarray(np.std(x))
    flat = x.reshape(x.shape[0], -1)
    return np.std(flat, axis=1).reshape((-1,) + (1,) * (x.ndim - 1))


def rescale_cfg(x_cfg, x_pos, phi: float) -> np.ndarray:
    """Pull the guided output's per-sample std back toward the conditional one.

    ``phi = 1`` restores the std of ``x_pos`` exactly, ``phi = 0`` is a no-op.
    Stds are population stds over all non-batch elements.
    """
    _check_pair(x_cfg, x_pos)
    if not 0.0 <= phi <= 1.0:
        raise InvalidArgumentError(f"phi must be in [0, 1], got {phi}")
    x_cfg = np.asarray(x_cfg, dtype=np.float64)
    x_pos = np.asarray(x_pos, dtype=np.float64)
    std_cfg = _per_sample_std(x_cfg)
    if np.any(std_cfg == 0):
        raise DegenerateInputError("guided output has zero standard deviation")
    std_pos = _per_sample_std(x_pos)
    rescaled = x_cfg * (std_pos / std_cfg)
    return phi * rescaled + (1.0 - phi) * x_cfg


def ddim_step(x_t, model_out, t: int, t_prev: int, schedule: NoiseSchedule, param) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    t = schedule.check_t(t)
    if t_prev != ZERO:
        t_prev = schedule.check_t(t_prev)
    if t_prev >= t:
        raise InvalidArgumentError(f"t_prev ({t_prev}) must precede t ({t})")
    x0_pred, eps_pred = to_x0_eps(model_out, x_t, t, schedule, param)
    if t_prev == ZERO:
        return x0_pred
    ab_prev = schedule.alpha_bar(t_prev)
    return np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev) * eps_pred


def ddpm_step(
    x_t,
    model_out,
    t: int,
    schedule: NoiseSchedule,
    param,
    rng: np.random.Generator,
    t_prev: int | None = None,
) -> np.ndarray:
    """Ancestral step: posterior mean plus ``sqrt(variance)`` times fresh noise.

    ``t_prev`` other than ``t - 1`` uses the skipped-step approximation of
    :func:`zsnr.diffusion.posterior`. No noise is drawn when the variance is 0.
    """
    x0_pred, _ = to_x0_eps(model_out, x_t, t, schedule, param)
    mean, var = posterior(x0_pred, x_t, t, schedule, t_prev)
    if var == 0:
        return mean
    return mean + np.sqrt(var) * rng.standard_normal(mean.shape)


def guided_output(model, x, t: int, cond, guidance: GuidanceConfig | None) -> np.ndarray:
    """Model output with optional CFG and rescale; two forward calls when guided."""
    if guidance is None:
        return model.forward(x, t, cond)
    x_pos = model.forward(x, t, cond)
    x_neg = model.forward(x, t, None)
    out = apply_cfg(x_pos, x_neg, guidance.w)
    if guidance.phi > 0:
        out = rescale_cfg(out, x_pos, guidance.phi)
    return out


def sample(
    model,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    cond=None,
    n: int = 1,
    rng: np.random.Generator | None = None,
    x_init: np.ndarray | None = None,
    return_trajectory: bool = False,
):
    """Generate ``n`` samples starting from pure noise at the plan's last timestep.

    ``model`` needs ``forward(x, t, cond)`` and a ``param`` attribute;
    ``cond=None`` selects the null (unconditional) class.
    """
    plan = config.plan
    if plan.S < 1:
        raise InvalidArgumentError("empty timestep plan")
    if plan.T != schedule.T:
        raise InvalidArgumentError(f"plan built for T={plan.T}, schedule has T={schedule.T}")
    param = Parameterization.parse(model.param)
    t_max = plan.steps[-1]
    if param is Parameterization.EPSILON and schedule.alpha_bar(t_max) == 0.0:
        raise SingularParameterizationError(
            f"epsilon-prediction cannot start at t={t_max} where alpha_bar == 0; use v-prediction"
        )
    if rng is None:
        rng = np.random.default_rng()
    if x_init is None:
        x = rng.standard_normal((int(n), model.data_dim))
    else:
        x = np.array(x_init, dtype=np.float64)
    trajectory = [x]
    for t, t_prev in plan.transitions():
        out = guided_output(model, x, t, cond, config.guidance)
        if config.method == "ddim":
            x = ddim_step(x, out, t, t_prev, schedule, param)
        else:
            x = ddpm_step(x, out, t, schedule, param, rng, t_prev=t_prev)
        if return_trajectory:
            trajectory.append(x)
    return (x, trajectory) if return_trajectory else x

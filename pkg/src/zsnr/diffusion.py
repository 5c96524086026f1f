"""Forward process, epsilon/v/x0 conversions, training targets and noise draws.

Tensors are float64 numpy arrays with the batch on axis 0. A timestep
argument may be a single int or an integer array with one entry per batch
element; coefficients broadcast over the non-batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidArgumentError, SingularParameterizationError
from .schedule import NoiseSchedule


class Parameterization(str, Enum):
    EPSILON = "epsilon"
    V = "v"

    @classmethod
    def parse(cls, value: "Parameterization | str") -> "Parameterization":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        key = {"eps": "epsilon", "v_prediction": "v", "v-prediction": "v"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise InvalidArgumentError(f"unknown parameterization: {value!r}") from None


@dataclass(frozen=True)
class LossConfig:
    """Per-timestep loss weight; ``lambda_t`` maps an int array of ``t`` to weights."""

    lambda_t: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "constant-1"

    def weights(self, t) -> np.ndarray:
        t = np.asarray(t)
        if self.lambda_t is None:
            return np.ones(t.shape)
        w = np.broadcast_to(np.asarray(self.lambda_t(t), dtype=np.float64), t.shape)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidArgumentError("loss weights must be positive and finite")
        return w

    @classmethod
    def constant(cls, value: float) -> "LossConfig":
        if not value > 0:
            raise InvalidArgumentError("constant loss weight must be positive")
        return cls(lambda t: np.full(np.shape(t), float(value)), name=f"constant-{value:g}")


@dataclass(frozen=True)
class NoiseMode:
    """``iid`` standard normal, or ``offset`` noise with a shared per-channel shift."""

    kind: str = "iid"
    strength: float = 0.1

    def __post_init__(self):
        if self.kind not in ("iid", "offset"):
            raise InvalidArgumentError(f"unknown noise mode: {self.kind!r}")
        if not self.strength >= 0:
            raise InvalidArgumentError("offset strength must be >= 0")


class X0Eps(NamedTuple):
    x0_pred: np.ndarray
    eps_pred: np.ndarray


class Posterior(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray | float


def _same_shape(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"shape mismatch: {sorted(shapes)}")


def _broadcast(values: np.ndarray, ndim: int):
    # scalar t -> python float; per-sample t -> (B, 1, ..., 1)
    if values.ndim == 0:
        return float(values)
    return values.reshape(values.shape + (1,) * (ndim - 1))


def alpha_bar_at(schedule: NoiseSchedule, t) -> np.ndarray:
    """Vectorised ``alpha_bar`` lookup; ``t == 0`` maps to 1."""
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise InvalidArgumentError("timesteps must be integers")
        t = t.astype(np.int64)
    if np.any(t < 0) or np.any(t > schedule.T):
        raise InvalidArgumentError(f"timestep outside [0, {schedule.T}]")
    padded = np.concatenate([[1.0], schedule.alphas_bar])
    return padded[t]


def _coefs(schedule, t, ndim, allow_zero=False):
    t_arr = np.asarray(t)
    if not allow_zero and np.any(t_arr < 1):
        raise InvalidArgumentError(f"timestep outside [1, {schedule.T}]")
    ab = alpha_bar_at(schedule, t_arr)
    return _broadcast(np.sqrt(ab), ndim), _broadcast(np.sqrt(1.0 - ab), ndim)


def forward_diffuse(x0, eps, t, schedule: NoiseSchedule) -> np.ndarray:
    """``sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps``."""
    _same_shape(x0, eps)
    x0 = np.asarray(x0, dtype=np.float64)
    a, s = _coefs(schedule, t, x0.ndim)
    return a * x0 + s * np.asarray(eps, dtype=np.float64)


def v_target(x0, eps, t, schedule: NoiseSchedule) -> np.ndarray:
    """Velocity target ``sqrt(abar_t) * eps - sqrt(1 - abar_t) * x0``."""
    _same_shape(x0, eps)
    x0 = np.asarray(x0, dtype=np.float64)
    a, s = _coefs(schedule, t, x0.ndim)
    return a * np.asarray(eps, dtype=np.float64) - s * x0


def to_x0_eps(model_out, x_t, t, schedule: NoiseSchedule, param) -> X0Eps:
    """Recover ``(x0, eps)`` estimates from a model output at timestep ``t``.

    Raises
    ------
    SingularParameterizationError
        For epsilon-prediction at a timestep with ``alpha_bar == 0``.
    """
    param = Parameterization.parse(param)
    _same_shape(model_out, x_t)
    out = np.asarray(model_out, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    a, s = _coefs(schedule, t, x_t.ndim)
    if param is Parameterization.V:
        return X0Eps(a * x_t - s * out, s * x_t + a * out)
    if np.any(np.asarray(a) == 0.0):
        raise SingularParameterizationError(
            "epsilon-prediction cannot recover x0 where alpha_bar == 0"
        )
    return X0Eps((x_t - s * out) / a, out.copy())


def prediction_target(x0, eps, t, schedule: NoiseSchedule, param) -> np.ndarray:
    param = Parameterization.parse(param)
    if param is Parameterization.V:
        return v_target(x0, eps, t, schedule)
    _same_shape(x0, eps)
    return np.asarray(eps, dtype=np.float64)


def training_loss(
    model_out,
    x0,
    eps,
    t,
    schedule: NoiseSchedule,
    param,
    loss_cfg: LossConfig | None = None,
) -> float:
    """Weighted mean squared error against the parameterization's target.

    The reduction is a mean over elements (per sample), then a mean over
    the batch of ``lambda_t``-weighted per-sample errors.
    """
    _same_shape(model_out, x0, eps)
    loss_cfg = loss_cfg or LossConfig()
    target = prediction_target(x0, eps, t, schedule, param)
    diff = np.asarray(model_out, dtype=np.float64) - target
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        return float(loss_cfg.weights(t_arr) * np.mean(diff**2))
    per_sample = np.mean(diff.reshape(diff.shape[0], -1) ** 2, axis=1)
    return float(np.mean(loss_cfg.weights(t_arr) * per_sample))


def posterior(x0_pred, x_t, t, schedule: NoiseSchedule, t_prev=None) -> Posterior:
    """Mean and variance of ``q(x_{t_prev} | x_t, x0)``.

    ``t_prev`` defaults to ``t - 1``. When it is smaller than ``t - 1`` the
    step's effective beta is ``1 - abar_t / abar_prev``, an approximation
    used for ancestral sampling over skipped timesteps. ``t_prev == 0``
    returns ``x0_pred`` with zero variance. A zero-SNR ``t`` (``alpha_t == 0``)
    needs no special case in this x0-form.
    """
    _same_shape(x0_pred, x_t)
    x0_pred = np.asarray(x0_pred, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    t = schedule.check_t(t)
    t_prev = t - 1 if t_prev is None else int(t_prev)
    if not 0 <= t_prev < t:
        raise InvalidArgumentError(f"t_prev must lie in [0, {t}), got {t_prev}")
    if t_prev == 0:
        return Posterior(x0_pred.copy(), 0.0)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    if t_prev == t - 1:
        alpha = schedule.alphas[t - 1]
        beta = schedule.betas[t - 1]
    else:
        alpha = ab_t / ab_prev
        beta = 1.0 - alpha
    denom = 1.0 - ab_t
    c_x0 = np.sqrt(ab_prev) * beta / denom
    c_xt = np.sqrt(alpha) * (1.0 - ab_prev) / denom
    variance = (1.0 - ab_prev) / denom * beta
    return Posterior(c_x0 * x0_pred + c_xt * x_t, float(variance))


def sample_noise(shape, mode: NoiseMode | None, rng: np.random.Generator) -> np.ndarray:
    """Draw training/sampling noise.

    Offset noise needs a channel axis at position 1, e.g. ``(B, C, H, W)``
    or ``(B, C, N)``; each ``(sample, channel)`` pair gets one shared
    ``strength * N(0, 1)`` shift added to all of its elements.
    """
    mode = mode or NoiseMode()
    shape = tuple(int(s) for s in shape)
    noise = rng.standard_normal(shape)
    if mode.kind == "offset":
        if len(shape) < 3:
            raise InvalidArgumentError("offset noise needs a (batch, channel, ...) shape")
        delta = rng.standard_normal(shape[:2])
        noise += mode.strength * delta.reshape(shape[:2] + (1,) * (len(shape) - 2))
    return noise

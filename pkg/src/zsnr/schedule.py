"""Discrete variance-preserving noise schedules.

Timesteps are 1-based at the API (``t`` in ``1..T``) and stored 0-based,
so ``schedule.alphas_bar[t - 1]`` is the cumulative signal power at ``t``.
Implementations that index timesteps ``0..T-1`` should shift by one.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidArgumentError

COSINE_OFFSET = 0.008
COSINE_MAX_BETA = 0.999


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    SCALED_LINEAR = "scaled-linear"
    COSINE = "cosine"

    @classmethod
    def parse(cls, value: "ScheduleKind | str") -> "ScheduleKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        if key in ("stable-diffusion", "sd"):
            key = cls.SCALED_LINEAR.value
        try:
            return cls(key)
        except ValueError:
            raise InvalidArgumentError(f"unknown schedule kind: {value!r}") from None


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable beta/alpha tables for ``T`` discrete timesteps.

    Only ``betas`` is supplied; every other table is derived from it so the
    invariants ``alphas = 1 - betas`` and ``alphas_bar = cumprod(alphas)``
    hold by construction.
    """

    betas: np.ndarray
    name: str = "custom"
    alphas: np.ndarray = field(init=False, repr=False)
    alphas_bar: np.ndarray = field(init=False, repr=False)
    sqrt_alphas_bar: np.ndarray = field(init=False, repr=False)
    sqrt_one_minus_alphas_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64).ravel()
        if betas.size < 2:
            raise InvalidArgumentError("a schedule needs at least 2 timesteps")
        if not np.all(np.isfinite(betas)) or np.any(betas <= 0) or np.any(betas > 1):
            raise InvalidArgumentError("betas must lie in (0, 1]")
        alphas = 1.0 - betas
        alphas_bar = np.cumprod(alphas)
        tables = {
            "betas": betas,
            "alphas": alphas,
            "alphas_bar": alphas_bar,
            "sqrt_alphas_bar": np.sqrt(alphas_bar),
            "sqrt_one_minus_alphas_bar": np.sqrt(1.0 - alphas_bar),
        }
        for key, arr in tables.items():
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @property
    def zero_terminal_snr(self) -> bool:
        return bool(self.alphas_bar[-1] == 0.0)

    def check_t(self, t: int) -> int:
        if isinstance(t, (bool, np.bool_)) or int(t) != t or not 1 <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t!r} outside [1, {self.T}]")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal power at ``t``, with the convention ``alpha_bar(0) == 1``."""
        if t == 0:
            return 1.0
        return float(self.alphas_bar[self.check_t(t) - 1])

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_t(t) - 1])

    def snr(self, t: int) -> float:
        return snr(self, t)

    def digest(self) -> str:
        """Stable identity hash of the beta table (little-endian float64 bytes)."""
        raw = self.betas.astype("<f8").tobytes()
        return hashlib.sha256(raw).hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return np.array_equal(self.betas, other.betas)

    def __hash__(self):
        return hash(self.digest())


def _fraction(T: int) -> np.ndarray:
    # i = (t - 1) / (T - 1) for t = 1..T
    return np.arange(T, dtype=np.float64) / (T - 1)


def _cosine_betas(T: int, clip_beta: bool) -> np.ndarray:
    def f(u):
        return math.cos((u + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2

    f0 = f(0.0)
    betas = np.empty(T)
    for k in range(T):
        prev = f(k / T) / f0
        cur = f((k + 1) / T) / f0
        betas[k] = 1.0 - cur / prev
    betas = np.minimum(betas, 1.0)
    if clip_beta:
        betas = np.minimum(betas, COSINE_MAX_BETA)
    return betas


def make_schedule(
    kind: ScheduleKind | str,
    T: int = 1000,
    *,
    clip_beta: bool = True,
    float32_betas: bool = False,
) -> NoiseSchedule:
    """Build one of the three standard schedules.

    Parameters
    ----------
    kind : {"linear", "scaled-linear", "cosine"}
    T : int
        Number of train timesteps, at least 2.
    clip_beta : bool
        Cosine only. Clip betas at 0.999; ``False`` keeps the final beta at
        exactly 1, which already yields zero terminal SNR.
    float32_betas : bool
        Round the beta table through float32 before accumulating. Reference
        implementations store betas this way, and the widely quoted cosine
        terminal values (SNR 2.428735e-09) only come out under this rounding;
        the exact double-precision value is 2.428767e-09.
    """
    kind = ScheduleKind.parse(kind)
    if isinstance(T, bool) or int(T) != T or T < 2:
        raise InvalidArgumentError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    if kind is ScheduleKind.LINEAR:
        i = _fraction(T)
        betas = 0.0001 * (1 - i) + 0.02 * i
    elif kind is ScheduleKind.SCALED_LINEAR:
        i = _fraction(T)
        betas = (math.sqrt(0.00085) * (1 - i) + math.sqrt(0.012) * i) ** 2
    else:
        betas = _cosine_betas(T, clip_beta)
    if float32_betas:
        betas = betas.astype(np.float32).astype(np.float64)
    name = kind.value
    if kind is ScheduleKind.COSINE and not clip_beta:
        name += "-unclipped"
    return NoiseSchedule(betas, name=name)


def snr(schedule: NoiseSchedule, t: int) -> float:
    """Signal-to-noise ratio ``alpha_bar / (1 - alpha_bar)`` at 1-based ``t``."""
    ab = schedule.alpha_bar(schedule.check_t(t))
    if ab == 0.0:
        return 0.0
    if ab == 1.0:
        return math.inf
    return ab / (1.0 - ab)


def rescale_zero_terminal_snr(schedule: NoiseSchedule) -> NoiseSchedule:
    """Shift and scale ``sqrt(alpha_bar)`` so the last timestep carries no signal.

    The first timestep keeps its ``sqrt(alpha_bar)``; every other value is
    mapped linearly so the final one lands on exactly zero. Betas are then
    recovered from consecutive ratios of the new ``alpha_bar``.
    """
    s = schedule.sqrt_alphas_bar.copy()
    s_first = s[0]
    s_last = s[-1]
    if s_first == s_last:
        raise InvalidArgumentError("degenerate schedule: sqrt(alpha_bar) is constant")
    s -= s_last
    s *= s_first / (s_first - s_last)

    alphas_bar = s**2
    alphas = np.empty_like(alphas_bar)
    alphas[0] = alphas_bar[0]
    alphas[1:] = alphas_bar[1:] / alphas_bar[:-1]
    betas = 1.0 - alphas
    name = schedule.name if schedule.name.endswith("+ztsnr") else schedule.name + "+ztsnr"
    return NoiseSchedule(betas, name=name)


def terminal_stats(schedule: NoiseSchedule) -> dict[str, float]:
    """Signal/noise coefficients at ``t = T``, i.e. ``x_T = a * x0 + b * eps``."""
    return {
        "snr_T": snr(schedule, schedule.T),
        "sqrt_abar_T": float(schedule.sqrt_alphas_bar[-1]),
        "sqrt_one_minus_abar_T": float(schedule.sqrt_one_minus_alphas_bar[-1]),
    }


def build_schedule(
    kind: ScheduleKind | str,
    T: int = 1000,
    *,
    rescaled: bool = False,
    clip_beta: bool = True,
    float32_betas: bool = False,
) -> NoiseSchedule:
    """``make_schedule`` optionally followed by the zero-terminal-SNR rescale."""
    sched = make_schedule(kind, T, clip_beta=clip_beta, float32_betas=float32_betas)
    return rescale_zero_terminal_snr(sched) if rescaled else sched

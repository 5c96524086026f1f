"""Sample-step selection: which of the ``T`` train timesteps a sampler visits."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .errors import InvalidArgumentError

#: Sentinel for "below the first timestep"; ``alpha_bar(ZERO) == 1``.
ZERO = 0


class TimestepStrategy(str, Enum):
    LEADING = "leading"
    LINSPACE = "linspace"
    TRAILING = "trailing"

    @classmethod
    def parse(cls, value: "TimestepStrategy | str") -> "TimestepStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown timestep strategy: {value!r}") from None


@dataclass(frozen=True)
class TimestepPlan:
    """Ascending 1-based timesteps; samplers walk them in reverse."""

    steps: tuple[int, ...]
    strategy: TimestepStrategy
    T: int

    @property
    def S(self) -> int:
        return len(self.steps)

    def transitions(self) -> list[tuple[int, int]]:
        """``(t, t_prev)`` pairs in sampling order, ending with ``(t_min, ZERO)``."""
        desc = list(reversed(self.steps))
        return list(zip(desc, desc[1:] + [ZERO]))

    def to_list(self) -> list[int]:
        return list(self.steps)


def _round_half_away(q: Fraction) -> int:
    n = abs(q.numerator)
    d = q.denominator
    r = (2 * n + d) // (2 * d)
    return r if q >= 0 else -r


def select_timesteps(strategy: TimestepStrategy | str, T: int, S: int) -> TimestepPlan:
    """Pick ``S`` of ``T`` timesteps.

    leading   ``1, 1 + floor(T/S), 1 + 2*floor(T/S), ...``
    linspace  ``round(linspace(1, T, S))``
    trailing  ``round(T - k*T/S)`` for ``k = S-1 .. 0``

    Rounding is half away from zero on exact rationals, so the result does
    not depend on how a float ``arange`` would accumulate.
    """
    strategy = TimestepStrategy.parse(strategy)
    for name, value in (("T", T), ("S", S)):
        if isinstance(value, bool) or int(value) != value:
            raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    T, S = int(T), int(S)
    if T < 1 or S < 1 or S > T:
        raise InvalidArgumentError(f"need 1 <= S <= T, got S={S}, T={T}")

    if strategy is TimestepStrategy.LEADING:
        stride = T // S
        steps = [1 + k * stride for k in range(S)]
    elif strategy is TimestepStrategy.LINSPACE:
        if S == 1:
            steps = [1]
        else:
            steps = [_round_half_away(1 + Fraction(k * (T - 1), S - 1)) for k in range(S)]
    else:
        steps = sorted(_round_half_away(T - Fraction(k * T, S)) for k in range(S))
    return TimestepPlan(tuple(steps), strategy, T)

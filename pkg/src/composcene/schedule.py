"""Forward diffusion: linear beta schedule and the closed-form noising map.

Timesteps are 1-based everywhere in the public API: t ranges over {1, ..., T}
and alpha_bar(t) is the running product of (1 - beta_s) for s <= t.  The
tables are stored 0-indexed; the conversion happens inside the accessors and
nowhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables beta_t, alpha_t = 1 - beta_t and alpha_bar_t = prod alpha_s."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def step_count(self) -> int:
        return len(self.betas)

    def check_timestep(self, t: int) -> None:
        if not 1 <= t <= self.step_count:
            raise ParameterError(
                f"timestep {t} outside [1, {self.step_count}]"
            )

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at 1-based timestep t."""
        self.check_timestep(t)
        return float(self.alpha_bars[t - 1])

    def coeffs(self, t: int) -> tuple[float, float]:
        """(sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) at timestep t."""
        ab = self.alpha_bar(t)
        return math.sqrt(ab), math.sqrt(1.0 - ab)


@dataclass(frozen=True)
class NoiseSample:
    """One noise draw paired with the timestep it applies to."""

    epsilon: np.ndarray
    timestep: int


def make_linear_schedule(
    step_count: int,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Build the T-step schedule with betas linearly spaced over the endpoints.

    Endpoints are inclusive; alpha_bar is the exact cumulative product of the
    alphas.  Raises ParameterError naming the offending field for out-of-range
    arguments.
    """
    if not isinstance(step_count, (int, np.integer)) or step_count < 1:
        raise ParameterError(f"step_count must be an integer >= 1, got {step_count!r}")
    if not 0.0 < beta_start < 1.0:
        raise ParameterError(f"beta_start must lie in (0, 1), got {beta_start!r}")
    if not 0.0 < beta_end < 1.0:
        raise ParameterError(f"beta_end must lie in (0, 1), got {beta_end!r}")
    if beta_start > beta_end:
        raise ParameterError(
            f"beta_start={beta_start!r} exceeds beta_end={beta_end!r}"
        )
    betas = np.linspace(float(beta_start), float(beta_end), int(step_count))
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def noise_image(x0, sample: NoiseSample, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noising: x^t = sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps.

    Deterministic given its inputs; computed in float64.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(sample.epsilon, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(
            f"image shape {x0.shape} does not match noise shape {eps.shape}"
        )
    if not np.all(np.isfinite(x0)):
        raise NumericError("x0 contains non-finite entries")
    s, w = schedule.coeffs(sample.timestep)
    return s * x0 + w * eps

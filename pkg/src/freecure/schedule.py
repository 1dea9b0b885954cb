"""Noise schedule and deterministic latent stepping in both directions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BETA_START = 1e-4
BETA_END = 0.02


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule with cumulative signal products.

    ``alpha_bar[k]`` is the product of ``1 - beta`` over the first ``k + 1``
    betas, so it is strictly decreasing and stays in (0, 1]. Time indices
    live on a grid of ``step_count + 1`` points: index 0 is the clean
    sample, index ``step_count`` the noisiest state, and the cumulative
    signal fraction at index ``t > 0`` is ``alpha_bar[t - 1]``.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def step_count(self) -> int:
        return int(self.beta.shape[0])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal fraction at time index ``t`` (1.0 at t == 0)."""
        if not 0 <= t <= self.step_count:
            raise ValueError(f"time index {t} outside [0, {self.step_count}]")
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])


def build_schedule(kind: str, step_count: int) -> NoiseSchedule:
    """Construct a schedule. Only the linear beta ramp is defined."""
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if step_count < 1:
        raise ValueError("step_count must be at least 1")
    beta = np.linspace(BETA_START, BETA_END, step_count, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=_readonly(beta), alpha_bar=_readonly(alpha_bar))


@dataclass(frozen=True)
class LatentState:
    """A latent tensor together with its time index."""

    z: np.ndarray
    t: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("latent contains non-finite values")
        if self.t < 0:
            raise ValueError("time index must be non-negative")
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "t", int(self.t))


def _checked_eps(state: LatentState, eps) -> np.ndarray:
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != state.z.shape:
        raise ValueError(f"noise shape {eps.shape} != latent shape {state.z.shape}")
    if not np.all(np.isfinite(eps)):
        raise FloatingPointError("noise prediction contains non-finite values")
    return eps


def _retarget(state: LatentState, eps: np.ndarray, t_next: int, sched: NoiseSchedule) -> LatentState:
    ab_cur = sched.alpha_bar_at(state.t)
    ab_next = sched.alpha_bar_at(t_next)
    x0 = (state.z - math.sqrt(1.0 - ab_cur) * eps) / math.sqrt(ab_cur)
    z_next = math.sqrt(ab_next) * x0 + math.sqrt(1.0 - ab_next) * eps
    return LatentState(z_next, t_next)


def ddim_step(state: LatentState, eps, t_next: int, sched: NoiseSchedule) -> LatentState:
    """Deterministic update moving ``state`` to time ``t_next``.

    The implied clean sample is extracted with the supplied noise and
    re-noised at the target time. ``t_next == state.t`` is the identity.
    The same update applied with ``t_next > state.t`` inverts a prior step
    taken with the same noise tensor.
    """
    eps = _checked_eps(state, eps)
    if t_next == state.t:
        sched.alpha_bar_at(t_next)  # still range-check
        return LatentState(state.z, state.t)
    return _retarget(state, eps, t_next, sched)


def ddim_invert_step(state: LatentState, eps, t_next: int, sched: NoiseSchedule) -> LatentState:
    """Run the update toward a larger time index (noising direction)."""
    eps = _checked_eps(state, eps)
    if t_next <= state.t:
        raise ValueError(f"inversion requires t_next > t ({t_next} <= {state.t})")
    return _retarget(state, eps, t_next, sched)


def sample_initial_latent(seed: int, shape: tuple[int, ...], sched: NoiseSchedule) -> LatentState:
    """Draw the standard-normal starting latent for a run, at the top index."""
    rng = np.random.default_rng(seed)
    return LatentState(rng.standard_normal(shape), sched.step_count)

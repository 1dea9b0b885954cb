"""Denoising run drivers.

Three entry points share one stepping core: a foundation run (prompt-only
conditioning end to end), a personalized run (identity conditioning
switched in after a few warm-up steps), and the lockstep pair that blends
foundation noise into the personalized branch under a spatial mask. The
blend happens in noise space every step at or after the configured start
step, either after classifier-free guidance has been applied (default) or
on the raw conditional predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schedule import LatentState, NoiseSchedule, ddim_step

BLEND_POINTS = ("post_cfg", "pre_cfg")


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by every denoising run.

    Args:
        step_count: number of denoising steps (the schedule length).
        identity_injection_step: first step index that sees the fused
            identity conditioning; earlier steps run prompt-only so layout
            settles before the identity takes over.
        blend_start_step: first step index at which masked noise blending
            applies; defaults to the injection step.
        blend_point: 'post_cfg' blends guided predictions, 'pre_cfg'
            blends raw conditional predictions before guidance.
        guidance_scale: classifier-free guidance scale; 1 disables the
            unconditional pass entirely.
        seed: initial-latent seed, recorded for provenance.
    """

    step_count: int = 50
    identity_injection_step: int = 10
    blend_start_step: int | None = None
    blend_point: str = "post_cfg"
    guidance_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.step_count < 1:
            raise ValueError(f"step_count must be positive, got {self.step_count}")
        if not 0 <= self.identity_injection_step <= self.step_count:
            raise ValueError(
                f"identity_injection_step {self.identity_injection_step} outside "
                f"[0, {self.step_count}]"
            )
        if self.blend_start_step is None:
            object.__setattr__(self, "blend_start_step", self.identity_injection_step)
        if not 0 <= self.blend_start_step <= self.step_count:
            raise ValueError(
                f"blend_start_step {self.blend_start_step} outside [0, {self.step_count}]"
            )
        if self.blend_point not in BLEND_POINTS:
            raise ValueError(f"blend_point must be one of {BLEND_POINTS}, got {self.blend_point!r}")
        if self.guidance_scale < 1.0:
            raise ValueError(f"guidance_scale must be >= 1, got {self.guidance_scale}")


@dataclass(frozen=True)
class RunResult:
    """Final latent and decoded image of one run."""

    final_latent: LatentState
    image: np.ndarray
    capture: object | None = None
    trajectory: tuple | None = None
    fd_branch: "RunResult | None" = None
    blend_log: tuple = field(default=())


def _check_start(z_init: LatentState, cfg: RunConfig, sched: NoiseSchedule) -> None:
    if not isinstance(z_init, LatentState):
        raise TypeError(f"z_init must be a LatentState, got {type(z_init).__name__}")
    if cfg.step_count != sched.step_count:
        raise ValueError(
            f"config step_count {cfg.step_count} does not match schedule {sched.step_count}"
        )
    if z_init.t != sched.step_count:
        raise ValueError(
            f"initial latent sits at timestep {z_init.t}, expected {sched.step_count}"
        )


def _guided_eps(backend, state, cond, sched, capture, scale):
    eps_c = backend.predict_noise(state, cond, sched, capture=capture)
    if scale == 1.0:
        return eps_c
    eps_u = backend.predict_noise(state, backend.null_conditioning(), sched)
    return eps_u + scale * (eps_c - eps_u)


def run_fd(
    z_init: LatentState,
    cond,
    cfg: RunConfig,
    backend,
    sched: NoiseSchedule,
    capture=None,
    keep_trajectory: bool = False,
) -> RunResult:
    """Foundation denoising: prompt-only conditioning the whole way down."""
    if cond.identity_fused:
        raise ValueError("foundation run requires unfused conditioning")
    _check_start(z_init, cfg, sched)
    state = z_init
    traj = [state] if keep_trajectory else None
    for i in range(cfg.step_count):
        eps = _guided_eps(backend, state, cond, sched, capture, cfg.guidance_scale)
        state = ddim_step(state, eps, cfg.step_count - i - 1, sched)
        if traj is not None:
            traj.append(state)
    return RunResult(
        final_latent=state,
        image=backend.decode_latent(state.z),
        capture=capture,
        trajectory=tuple(traj) if traj is not None else None,
    )


def _pd_cond(step: int, cond_unfused, cond_fused, cfg: RunConfig):
    return cond_fused if step >= cfg.identity_injection_step else cond_unfused


def run_pd(
    z_init: LatentState,
    cond_unfused,
    cond_fused,
    cfg: RunConfig,
    backend,
    sched: NoiseSchedule,
    capture=None,
    keep_trajectory: bool = False,
) -> RunResult:
    """Personalized denoising with delayed identity injection."""
    if cond_unfused.identity_fused:
        raise ValueError("the warm-up conditioning must be unfused")
    if not cond_fused.identity_fused:
        raise ValueError("the injected conditioning must carry a fused identity")
    _check_start(z_init, cfg, sched)
    state = z_init
    traj = [state] if keep_trajectory else None
    for i in range(cfg.step_count):
        cond = _pd_cond(i, cond_unfused, cond_fused, cfg)
        eps = _guided_eps(backend, state, cond, sched, capture, cfg.guidance_scale)
        state = ddim_step(state, eps, cfg.step_count - i - 1, sched)
        if traj is not None:
            traj.append(state)
    return RunResult(
        final_latent=state,
        image=backend.decode_latent(state.z),
        capture=capture,
        trajectory=tuple(traj) if traj is not None else None,
    )


def run_blended_pair(
    z_init: LatentState,
    cond_fd,
    cond_pd: tuple,
    mask: np.ndarray,
    cfg: RunConfig,
    backend,
    sched: NoiseSchedule,
    capture_fd=None,
    capture_pd=None,
    keep_trajectory: bool = False,
    log_steps: bool = False,
) -> RunResult:
    """Run both branches in lockstep and blend noise into the second.

    The mask selects, per latent cell, how much of the foundation branch's
    noise prediction replaces the personalized one: 1 keeps the foundation
    prediction, 0 keeps the personalized prediction. Both branches share
    the initial latent but evolve separately; only noise crosses over.

    Args:
        z_init: shared starting latent at the top timestep.
        cond_fd: unfused conditioning for the foundation branch.
        cond_pd: (unfused, fused) pair for the personalized branch.
        mask: [0, 1] map over the latent grid, broadcast across channels.
        cfg: run configuration; blending starts at cfg.blend_start_step.
        backend: denoising backend.
        sched: noise schedule matching cfg.step_count.
        capture_fd: optional attention session fed by the foundation branch.
        capture_pd: optional attention session fed by the personalized branch.
        keep_trajectory: retain per-step latents of the blended branch.
        log_steps: record a per-step summary line in the result.

    Returns:
        RunResult for the blended branch; the plain foundation branch
        result rides along as ``fd_branch``.
    """
    if cond_fd.identity_fused:
        raise ValueError("foundation branch conditioning must be unfused")
    pd_unfused, pd_fused = cond_pd
    if pd_unfused.identity_fused or not pd_fused.identity_fused:
        raise ValueError("personalized branch needs an (unfused, fused) conditioning pair")
    _check_start(z_init, cfg, sched)
    mask = np.asarray(mask, dtype=np.float64)
    spatial = backend.capabilities.latent_shape[1:]
    if mask.shape != spatial:
        raise ValueError(f"mask shape {mask.shape} does not match latent grid {spatial}")
    if not np.all(np.isfinite(mask)):
        raise FloatingPointError("mask contains non-finite values")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")
    m = mask[None, :, :]
    scale = cfg.guidance_scale
    fd_state = z_init
    pd_state = z_init
    traj = [pd_state] if keep_trajectory else None
    log = []
    for i in range(cfg.step_count):
        t_next = cfg.step_count - i - 1
        cond_p = _pd_cond(i, pd_unfused, pd_fused, cfg)
        blending = i >= cfg.blend_start_step
        if scale == 1.0:
            eps_f = backend.predict_noise(fd_state, cond_fd, sched, capture=capture_fd)
            eps_p = backend.predict_noise(pd_state, cond_p, sched, capture=capture_pd)
            if blending:
                eps_p = m * eps_f + (1.0 - m) * eps_p
        else:
            null = backend.null_conditioning()
            ef_c = backend.predict_noise(fd_state, cond_fd, sched, capture=capture_fd)
            ef_u = backend.predict_noise(fd_state, null, sched)
            ep_c = backend.predict_noise(pd_state, cond_p, sched, capture=capture_pd)
            ep_u = backend.predict_noise(pd_state, null, sched)
            if blending and cfg.blend_point == "pre_cfg":
                ep_c = m * ef_c + (1.0 - m) * ep_c
            eps_f = ef_u + scale * (ef_c - ef_u)
            eps_p = ep_u + scale * (ep_c - ep_u)
            if blending and cfg.blend_point == "post_cfg":
                eps_p = m * eps_f + (1.0 - m) * eps_p
        if log_steps:
            log.append(
                f"step={i} t={pd_state.t} fused={cond_p.identity_fused} "
                f"blend={blending} eps_gap={float(np.abs(eps_f - eps_p).max()):.6g}"
            )
        fd_state = ddim_step(fd_state, eps_f, t_next, sched)
        pd_state = ddim_step(pd_state, eps_p, t_next, sched)
        if traj is not None:
            traj.append(pd_state)
    fd_result = RunResult(
        final_latent=fd_state,
        image=backend.decode_latent(fd_state.z),
        capture=capture_fd,
    )
    return RunResult(
        final_latent=pd_state,
        image=backend.decode_latent(pd_state.z),
        capture=capture_pd,
        trajectory=tuple(traj) if traj is not None else None,
        fd_branch=fd_result,
        blend_log=tuple(log),
    )

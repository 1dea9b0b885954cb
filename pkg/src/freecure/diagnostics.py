"""Mechanism probes: attention interpolation and inversion-depth sweeps.

These exist to make the identity mechanism visible. The interpolation
sweep replays a personalized run while pulling the identity token's
attention column toward the foundation run's column, which continuously
morphs the output between the two branches. The inversion sweep varies
how far the blended image is pushed back up the schedule before abstract
restoration, tracing how much the output moves as a function of depth.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .attention import BLOCK_GROUPS, CaptureSession, IdentityAttentionEdit
from .backend import get_backend
from .engine import RunResult, run_fd, run_pd
from .errors import CapabilityError
from .manifest import RunManifest
from .prompts import bundle_from_spec, encode_identity, encode_prompt, fuse_identity
from .restore import build_restore_plan, invert_to_gamma, restore_abstract, run_pipeline
from .schedule import build_schedule, sample_initial_latent


@dataclass(frozen=True)
class SweepPoint:
    """One sweep sample: parameter value, run result, and distances."""

    value: float
    result: RunResult
    distances: dict


def _mean_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(a) - np.asarray(b))))


def run_interpolation_sweep(
    manifest: RunManifest,
    alphas,
    block_groups=("up",),
    out_dir: str | None = None,
    backend=None,
):
    """Sweep the identity-attention interpolation weight.

    For each alpha, the personalized run is repeated with the identity
    column of the selected blocks blended toward the foundation run's
    column: 0 leaves the run untouched, 1 substitutes the foundation
    column entirely.

    Args:
        manifest: run manifest providing prompt, identity, and schedule.
        alphas: interpolation weights in [0, 1].
        block_groups: which blocks the edit touches.
        out_dir: when given, per-alpha images, a contact sheet, a distance
            curve, and sweep.json are written there.
        backend: adapter override.

    Returns:
        (points, fd_result, pd_result): sweep points in alpha order plus
        the unedited foundation and personalized results.
    """
    alphas = [float(a) for a in alphas]
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"alpha {a} outside [0, 1]")
    groups = frozenset(block_groups)
    unknown = groups - set(BLOCK_GROUPS)
    if unknown:
        raise ValueError(f"unknown block groups {sorted(unknown)}")
    if backend is None:
        backend = get_backend(manifest.backend)
    if not backend.capabilities.supports_attention_capture:
        raise CapabilityError(
            f"backend {manifest.backend!r} cannot capture attention; sweep unavailable"
        )
    sched = build_schedule("linear", manifest.step_count)
    cfg = manifest.run_config()
    spec, cond_u = encode_prompt(manifest.prompt, backend, manifest.attribute_specs())
    reference = manifest.identity.reference_image(backend)
    cond_f = fuse_identity(cond_u, encode_identity(reference, backend))
    z_init = sample_initial_latent(manifest.seed, backend.capabilities.latent_shape, sched)

    donor_capture = CaptureSession(run_tag="fd")
    fd = run_fd(z_init, cond_u, cfg, backend, sched, capture=donor_capture)
    pd = run_pd(z_init, cond_u, cond_f, cfg, backend, sched)

    points = []
    for alpha in alphas:
        edit = IdentityAttentionEdit.from_session(
            donor_capture,
            target_index=spec.placeholder_index,
            source_index=spec.placeholder_index,
            alpha=alpha,
            block_groups=groups,
        )
        capture = CaptureSession(run_tag=f"pd-alpha-{alpha:g}", edit=edit)
        result = run_pd(z_init, cond_u, cond_f, cfg, backend, sched, capture=capture)
        points.append(
            SweepPoint(
                value=alpha,
                result=result,
                distances={
                    "to_foundation": _mean_abs(result.image, fd.image),
                    "to_personalized": _mean_abs(result.image, pd.image),
                },
            )
        )

    if out_dir is not None:
        _persist_sweep(
            out_dir,
            "alpha",
            points,
            extra_images=[("foundation", fd.image), ("personalized", pd.image)],
            curve_key="to_foundation",
            curve_label="mean abs distance to foundation",
        )
    return points, fd, pd


def run_inversion_sweep(
    manifest: RunManifest,
    gammas,
    out_dir: str | None = None,
    backend=None,
    parser=None,
):
    """Sweep the inversion depth of abstract restoration.

    The stage-1 and stage-2 work (branches, masks, blending) runs once;
    each gamma then re-inverts the blended image to its own depth and
    denoises back under the full prompt.

    Returns:
        (points, base): sweep points in gamma order and the underlying
        pipeline result whose blended image they restore from.
    """
    gammas = [float(g) for g in gammas]
    for g in gammas:
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gamma {g} outside [0, 1]")
    if backend is None:
        backend = get_backend(manifest.backend)
    base = run_pipeline(manifest, backend=backend, parser=parser)
    sched = build_schedule("linear", manifest.step_count)
    template_cond = bundle_from_spec(base.plan.template, backend)
    augmented_cond = bundle_from_spec(base.plan.augmented, backend)

    points = []
    for gamma in gammas:
        z_hat = invert_to_gamma(base.blended.image, template_cond, gamma, backend, sched)
        result = restore_abstract(z_hat, augmented_cond, backend, sched)
        points.append(
            SweepPoint(
                value=gamma,
                result=result,
                distances={"to_blended": _mean_abs(result.image, base.blended.image)},
            )
        )

    if out_dir is not None:
        _persist_sweep(
            out_dir,
            "gamma",
            points,
            extra_images=[("blended", base.blended.image)],
            curve_key="to_blended",
            curve_label="mean abs distance to blended",
        )
    return points, base


def _persist_sweep(out_dir, param, points, extra_images, curve_key, curve_label):
    from .figures import contact_sheet, line_plot
    from .imageops import save_image

    os.makedirs(out_dir, exist_ok=True)
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    entries = []
    for label, img in extra_images:
        save_image(os.path.join(images_dir, f"{label}.png"), np.clip(img, 0.0, 1.0))
        entries.append((label, img))
    rows = []
    for p in points:
        name = f"{param}_{p.value:.2f}"
        save_image(os.path.join(images_dir, f"{name}.png"), np.clip(p.result.image, 0.0, 1.0))
        entries.append((name.replace("_", " = "), p.result.image))
        row = {param: p.value}
        row.update({k: round(v, 8) for k, v in p.distances.items()})
        rows.append(row)
    contact_sheet(entries, os.path.join(out_dir, f"{param}_sheet.png"), title=f"{param} sweep")
    line_plot(
        [p.value for p in points],
        [p.distances[curve_key] for p in points],
        os.path.join(out_dir, f"{param}_curve.png"),
        xlabel=param,
        ylabel=curve_label,
    )
    with open(os.path.join(out_dir, "sweep.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"parameter": param, "points": rows}, indent=2, sort_keys=True) + "\n")

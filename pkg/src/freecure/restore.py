"""Attribute restoration and the end-to-end enhancement pipeline.

The pipeline runs in stages: encode the prompt and identity, run the
foundation and personalized branches in parallel from a shared latent,
build spatially aligned masks for localized attributes, re-run the
personalized branch with masked noise blending, then recover abstract
attributes by partially inverting the blended image under a template
prompt with those attributes removed and denoising back under the full
prompt. Inversion and the final denoise run unguided so the two
directions use the same noise predictions.

Failures are re-raised as StageError carrying the stage tag, except
manifest and capability problems which keep their own types.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .attention import CaptureSession
from .backend import get_backend, get_parser
from .engine import RunResult, run_blended_pair, run_fd, run_pd
from .errors import CapabilityError, ManifestError, StageError
from .imageops import block_upsample, save_gray, save_image
from .manifest import RunManifest, save_manifest
from .masks import MaskBundle, build_mask_bundle, empty_mask_bundle, parse_face
from .prompts import (
    PromptSpec,
    bundle_from_spec,
    encode_identity,
    encode_prompt,
    fuse_identity,
    strip_attributes,
)
from .schedule import (
    LatentState,
    NoiseSchedule,
    build_schedule,
    ddim_invert_step,
    ddim_step,
    sample_initial_latent,
)
from .tensorio import write_tensor

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RestorePlan:
    """Which attributes take which restoration path for one prompt."""

    localized: tuple
    abstract: tuple
    gamma: float
    template: PromptSpec
    augmented: PromptSpec

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


def build_restore_plan(spec: PromptSpec, gamma: float) -> RestorePlan:
    """Split a prompt's attributes by route and derive the template prompt.

    The template drops every abstract attribute's tokens so inversion is
    conditioned on a prompt that does not mention them; the augmented
    prompt is the original.
    """
    localized = tuple(a for a in spec.attributes if a.route == "localized")
    abstract = tuple(a for a in spec.attributes if a.route == "abstract")
    template = strip_attributes(spec, [a.attribute_id for a in abstract]) if abstract else spec
    return RestorePlan(
        localized=localized,
        abstract=abstract,
        gamma=float(gamma),
        template=template,
        augmented=spec,
    )


def inversion_steps(gamma: float, step_count: int) -> int:
    """Number of noising steps a partial inversion takes."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return int(math.floor(gamma * step_count))


def invert_to_gamma(
    image: np.ndarray,
    template_cond,
    gamma: float,
    backend,
    sched: NoiseSchedule,
) -> LatentState:
    """Push an image ``floor(gamma * T)`` steps up the schedule.

    Uses the template conditioning (abstract attributes removed) and the
    plain conditional prediction, so a later denoise with the same
    conditioning retraces the trajectory exactly.
    """
    if template_cond.identity_fused:
        raise ValueError("inversion runs on unfused conditioning")
    k = inversion_steps(gamma, sched.step_count)
    state = LatentState(backend.encode_image(image), 0)
    for t_next in range(1, k + 1):
        eps = backend.predict_noise(state, template_cond, sched)
        state = ddim_invert_step(state, eps, t_next, sched)
    return state


def restore_abstract(
    z_hat: LatentState,
    augmented_cond,
    backend,
    sched: NoiseSchedule,
    keep_trajectory: bool = False,
) -> RunResult:
    """Denoise a partially inverted latent under the full prompt."""
    if augmented_cond.identity_fused:
        raise ValueError("abstract restoration runs on unfused conditioning")
    state = z_hat
    traj = [state] if keep_trajectory else None
    for t in range(z_hat.t, 0, -1):
        eps = backend.predict_noise(state, augmented_cond, sched)
        state = ddim_step(state, eps, t - 1, sched)
        if traj is not None:
            traj.append(state)
    return RunResult(
        final_latent=state,
        image=backend.decode_latent(state.z),
        trajectory=tuple(traj) if traj is not None else None,
    )


@dataclass(frozen=True)
class PipelineResult:
    """Everything one pipeline run produced."""

    manifest: RunManifest
    reference_image: np.ndarray
    fd: RunResult
    pd: RunResult
    blended: RunResult
    output: RunResult
    masks: MaskBundle
    plan: RestorePlan
    report: dict
    out_dir: str | None = None


def _stage(name: str, fn):
    try:
        return fn()
    except (StageError, ManifestError, CapabilityError):
        raise
    except Exception as e:
        raise StageError(name, e) from e


def run_pipeline(
    manifest: RunManifest,
    out_dir: str | None = None,
    backend=None,
    parser=None,
    debug: bool = False,
) -> PipelineResult:
    """Execute a full enhancement run described by a manifest.

    Args:
        manifest: validated run manifest.
        out_dir: when given, the artifact bundle (images, masks, attention
            maps, report) is written under it.
        backend: adapter override; defaults to the manifest's backend.
        parser: face parser override; defaults to the backend's parser.
        debug: additionally persist latents, per-step blend logs, and
            raw mask tensors.

    Returns:
        PipelineResult with the branch results and the report dict.
    """
    if backend is None:
        backend = get_backend(manifest.backend)
    if parser is None:
        parser = get_parser(manifest.backend)
    sched = build_schedule("linear", manifest.step_count)
    cfg = manifest.run_config()

    def encode():
        attr_specs = manifest.attribute_specs()
        spec, cond_u = encode_prompt(manifest.prompt, backend, attr_specs)
        reference = manifest.identity.reference_image(backend)
        identity = encode_identity(reference, backend)
        cond_f = fuse_identity(cond_u, identity)
        plan = build_restore_plan(spec, manifest.gamma)
        z_init = sample_initial_latent(manifest.seed, backend.capabilities.latent_shape, sched)
        return spec, cond_u, cond_f, reference, plan, z_init

    spec, cond_u, cond_f, reference, plan, z_init = _stage("encode", encode)

    def parallel():
        capture = None
        if backend.capabilities.supports_attention_capture:
            capture = CaptureSession(run_tag="fd")
        elif plan.localized:
            raise CapabilityError(
                f"backend {manifest.backend!r} cannot capture attention, "
                "required for localized attribute masks"
            )
        fd = run_fd(z_init, cond_u, cfg, backend, sched, capture=capture)
        pd = run_pd(z_init, cond_u, cond_f, cfg, backend, sched)
        return fd, pd

    fd, pd = _stage("parallel", parallel)

    def masks():
        if not plan.localized:
            return empty_mask_bundle(backend.capabilities.latent_shape[1:])
        needs_parsing = any(a.mask_source == "parsing" for a in plan.localized)
        pm_pd = pm_fd = None
        if needs_parsing:
            if parser is None:
                raise CapabilityError(
                    f"backend {manifest.backend!r} has no face parser, "
                    "required for parsing-based masks"
                )
            pm_pd = parse_face(pd.image, parser)
            pm_fd = parse_face(fd.image, parser)
        window = (max(cfg.step_count - cfg.identity_injection_step, 1), 1)
        return build_mask_bundle(
            plan.localized,
            fd.capture,
            pm_pd,
            pm_fd,
            backend.capabilities.latent_shape[1:],
            timestep_window=window,
            attn_fusion=manifest.attn_fusion,
        )

    mask_bundle = _stage("masks", masks)

    def blend():
        if not plan.localized:
            return pd
        return run_blended_pair(
            z_init,
            cond_u,
            (cond_u, cond_f),
            mask_bundle.merged,
            cfg,
            backend,
            sched,
            log_steps=debug,
        )

    blended = _stage("blend", blend)

    def restore():
        if not plan.abstract:
            return blended, 0
        template_cond = bundle_from_spec(plan.template, backend)
        z_hat = invert_to_gamma(blended.image, template_cond, plan.gamma, backend, sched)
        out = restore_abstract(z_hat, cond_u, backend, sched)
        return out, z_hat.t

    output, inv_steps = _stage("restore", restore)

    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "backend": manifest.backend,
        "prompt": manifest.prompt,
        "seed": manifest.seed,
        "steps": manifest.step_count,
        "identity_injection_step": manifest.identity_injection_step,
        "blend_start_step": manifest.blend_start_step,
        "gamma": manifest.gamma,
        "inversion_steps": inv_steps,
        "attn_fusion": manifest.attn_fusion,
        "attributes": {
            a.attribute_id: {
                "route": a.route,
                "mask_source": a.mask_source,
                "mask_area": (
                    round(float(mask_bundle.per_attribute[a.attribute_id].mean()), 6)
                    if a.attribute_id in mask_bundle.per_attribute
                    else None
                ),
            }
            for a in spec.attributes
        },
        "merged_mask_area": round(float(mask_bundle.merged.mean()), 6),
        "output_shift": round(float(np.abs(output.image - blended.image).max()), 6),
    }

    result = PipelineResult(
        manifest=manifest,
        reference_image=reference,
        fd=fd,
        pd=pd,
        blended=blended,
        output=output,
        masks=mask_bundle,
        plan=plan,
        report=report,
        out_dir=out_dir,
    )
    if out_dir is not None:
        _stage("persist", lambda: persist_bundle(result, out_dir, debug=debug))
    return result


def persist_bundle(result: PipelineResult, out_dir: str, debug: bool = False) -> dict:
    """Write the artifact bundle for one run and return its file map."""
    os.makedirs(out_dir, exist_ok=True)
    images_dir = os.path.join(out_dir, "images")
    masks_dir = os.path.join(out_dir, "masks")
    attn_dir = os.path.join(out_dir, "attn")
    os.makedirs(images_dir, exist_ok=True)
    files = {}

    save_manifest(result.manifest, os.path.join(out_dir, "manifest.json"))
    files["manifest"] = "manifest.json"
    for name, img in (
        ("reference", result.reference_image),
        ("fd", result.fd.image),
        ("pd", result.pd.image),
        ("blended", result.blended.image),
        ("output", result.output.image),
    ):
        rel = os.path.join("images", f"{name}.png")
        save_image(os.path.join(out_dir, rel), np.clip(img, 0.0, 1.0))
        files[name] = rel

    bundle = result.masks
    if bundle.per_attribute:
        os.makedirs(masks_dir, exist_ok=True)
        up = 64 // bundle.resolution[0] if bundle.resolution[0] and 64 % bundle.resolution[0] == 0 else 1
        for attr_id, mask in bundle.per_attribute.items():
            rel = os.path.join("masks", f"{attr_id}.png")
            save_gray(os.path.join(out_dir, rel), block_upsample(mask, up))
            files[f"mask:{attr_id}"] = rel
        rel = os.path.join("masks", "merged.png")
        save_gray(os.path.join(out_dir, rel), block_upsample(bundle.merged, up))
        files["mask:merged"] = rel
    if bundle.attention:
        os.makedirs(attn_dir, exist_ok=True)
        for attr_id, amap in bundle.attention.items():
            rel_t = os.path.join("attn", f"{attr_id}.fct")
            write_tensor(os.path.join(out_dir, rel_t), amap)
            files[f"attn:{attr_id}:tensor"] = rel_t
            rel_p = os.path.join("attn", f"{attr_id}.png")
            save_gray(os.path.join(out_dir, rel_p), np.clip(amap, 0.0, 1.0))
            files[f"attn:{attr_id}:png"] = rel_p

    if debug:
        debug_dir = os.path.join(out_dir, "debug")
        os.makedirs(debug_dir, exist_ok=True)
        write_tensor(os.path.join(debug_dir, "z_blended.fct"), result.blended.final_latent.z)
        write_tensor(os.path.join(debug_dir, "z_output.fct"), result.output.final_latent.z)
        if bundle.per_attribute:
            write_tensor(os.path.join(debug_dir, "merged_mask.fct"), bundle.merged)
        if result.blended.blend_log:
            with open(os.path.join(debug_dir, "blend_log.txt"), "w", encoding="utf-8") as fh:
                fh.write("\n".join(result.blended.blend_log) + "\n")
        files["debug"] = "debug"

    report = dict(result.report)
    report["files"] = files
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return files

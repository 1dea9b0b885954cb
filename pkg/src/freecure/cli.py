"""Command line interface.

Subcommands:
  enhance    run the full pipeline from a manifest and write the bundle
  sweep      alpha (attention interpolation) or gamma (inversion) sweeps
  eval       score a directory of finished runs and write a report
  dump-attn  aggregate and dump attention maps for one token

Exit codes: 0 success, 1 run/stage failure, 2 manifest problems, 3 missing
backend capability.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .attention import BLOCK_GROUPS, CaptureSession, aggregate_attribute_map
from .backend import get_backend
from .engine import run_fd, run_pd
from .errors import CapabilityError, FreecureError, ManifestError
from .imageops import load_image, save_gray
from .manifest import load_manifest
from .metrics import (
    MetricsReport,
    RunMetrics,
    composite_and_deltas,
    face_diversity,
    format_metric,
    grouped_summary,
    identity_fidelity,
    prompt_consistency,
    render_report_text,
    write_csv,
)
from .prompts import encode_identity, encode_prompt, fuse_identity
from .restore import run_pipeline
from .schedule import build_schedule, sample_initial_latent
from .tensorio import write_tensor


def _parse_values(text: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}: {e}") from e
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freecure",
        description="Training-free restoration of attribute control in personalized diffusion runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="run the enhancement pipeline from a manifest")
    p.add_argument("--manifest", required=True, help="path to the run manifest JSON")
    p.add_argument("--out", required=True, help="directory for the artifact bundle")
    p.add_argument(
        "--no-attn-fusion",
        action="store_true",
        help="use parsing masks alone, without the attention factor",
    )
    p.add_argument(
        "--debug-dump",
        action="store_true",
        help="also write latents, blend logs, and raw mask tensors",
    )
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("sweep", help="parameter sweeps over alpha or gamma")
    p.add_argument("--manifest", required=True)
    p.add_argument("--param", required=True, choices=("alpha", "gamma"))
    p.add_argument("--values", required=True, type=_parse_values, help="comma-separated values")
    p.add_argument("--out", required=True)
    p.add_argument(
        "--blocks",
        default="up",
        help="comma-separated block groups the alpha edit touches (default: up)",
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="score a directory of finished runs")
    p.add_argument("--runs", required=True, help="directory containing run bundles")
    p.add_argument("--out", required=True, help="directory for the evaluation report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-attn", help="dump aggregated attention maps for one token")
    p.add_argument("--manifest", required=True)
    p.add_argument("--token", required=True, type=int, help="token index (0 is the start token)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attn)
    return parser


def cmd_enhance(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.no_attn_fusion:
        manifest = manifest.with_overrides(attn_fusion=False)
    result = run_pipeline(manifest, out_dir=args.out, debug=args.debug_dump)
    from .figures import contact_sheet

    sheet = contact_sheet(
        [
            ("reference", result.reference_image),
            ("foundation", result.fd.image),
            ("personalized", result.pd.image),
            ("blended", result.blended.image),
            ("output", result.output.image),
        ],
        os.path.join(args.out, "overview.png"),
        title=manifest.prompt,
    )
    for key in ("prompt", "seed", "gamma", "inversion_steps", "merged_mask_area", "output_shift"):
        print(f"{key}: {result.report[key]}")
    print(f"bundle: {os.path.abspath(args.out)}")
    print(f"figure: {os.path.abspath(sheet)}")
    return 0


def cmd_sweep(args) -> int:
    from .diagnostics import run_interpolation_sweep, run_inversion_sweep

    manifest = load_manifest(args.manifest)
    if args.param == "alpha":
        blocks = tuple(b.strip() for b in args.blocks.split(",") if b.strip())
        points, _, _ = run_interpolation_sweep(
            manifest, args.values, block_groups=blocks, out_dir=args.out
        )
    else:
        points, _ = run_inversion_sweep(manifest, args.values, out_dir=args.out)
    for p in points:
        dists = " ".join(f"{k}={v:.6f}" for k, v in sorted(p.distances.items()))
        print(f"{args.param}={p.value:g} {dists}")
    print(f"sweep: {os.path.abspath(args.out)}")
    return 0


def _discover_runs(root: str) -> list:
    if not os.path.isdir(root):
        raise FreecureError(f"run directory {root!r} does not exist")
    out = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if os.path.isdir(path) and os.path.exists(os.path.join(path, "manifest.json")):
            out.append((name, path))
    if not out:
        raise FreecureError(f"no run bundles (directories with manifest.json) under {root!r}")
    return out


def cmd_eval(args) -> int:
    from .analytic import ToyCaptionScorer, ToyFaceDetector, ToyFaceEmbedder
    from .figures import metric_bars

    runs = _discover_runs(args.runs)
    scorer = ToyCaptionScorer()
    detector = ToyFaceDetector()
    embedder = ToyFaceEmbedder()
    os.makedirs(args.out, exist_ok=True)

    per_run = []
    base_runs = []
    enh_runs = []
    base_images = []
    enh_images = []
    for name, path in runs:
        manifest = load_manifest(os.path.join(path, "manifest.json"))
        ref_path = os.path.join(path, "images", "reference.png")
        if os.path.exists(ref_path):
            reference = load_image(ref_path)
        else:
            reference = manifest.identity.reference_image(get_backend(manifest.backend))
        baseline = load_image(os.path.join(path, "images", "pd.png"))
        enhanced = load_image(os.path.join(path, "images", "output.png"))
        count = len(manifest.attributes)
        pc_b = prompt_consistency(baseline, manifest.prompt, scorer)
        pc_e = prompt_consistency(enhanced, manifest.prompt, scorer)
        if_b = identity_fidelity(baseline, reference, detector, embedder)
        if_e = identity_fidelity(enhanced, reference, detector, embedder)
        base_runs.append(RunMetrics(name, count, pc_b, if_b))
        enh_runs.append(RunMetrics(name, count, pc_e, if_e))
        base_images.append((name, baseline))
        enh_images.append((name, enhanced))
        per_run.append(
            [
                name,
                count,
                f"{pc_b:.2f}",
                f"{pc_e:.2f}",
                format_metric(if_b),
                format_metric(if_e),
            ]
        )

    def summarize(rows, images):
        pcs = [r.pc for r in rows if r.pc is not None]
        ifs = [r.if_score for r in rows if r.if_score is not None]
        return MetricsReport(
            pc=float(np.mean(pcs)) if pcs else None,
            if_score=float(np.mean(ifs)) if ifs else None,
            face_div=face_diversity(images, detector, embedder),
            missing_faces=sum(1 for r in rows if r.if_score is None),
        )

    base_report, enh_report = composite_and_deltas(
        summarize(base_runs, base_images), summarize(enh_runs, enh_images)
    )
    base_buckets = grouped_summary(base_runs)
    enh_buckets = grouped_summary(enh_runs)

    pairs = [
        ("runs", str(len(runs))),
        ("pc baseline", format_metric(base_report.pc)),
        ("pc enhanced", format_metric(enh_report.pc)),
        ("if baseline", format_metric(base_report.if_score)),
        ("if enhanced", format_metric(enh_report.if_score)),
        ("face-div baseline", format_metric(base_report.face_div)),
        ("face-div enhanced", format_metric(enh_report.face_div)),
        ("pc x if baseline", format_metric(base_report.pc_times_if)),
        ("pc x if enhanced", format_metric(enh_report.pc_times_if)),
        ("missing faces baseline", str(base_report.missing_faces)),
        ("missing faces enhanced", str(enh_report.missing_faces)),
    ]
    for key, value in sorted(enh_report.deltas.items()):
        pairs.append((f"delta {key} (%)", f"{value:+.2f}"))
    for notice in enh_buckets["notices"]:
        pairs.append(("notice", notice))
    text = render_report_text(pairs)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)

    write_csv(
        os.path.join(args.out, "runs.csv"),
        ["run", "attributes", "pc_baseline", "pc_enhanced", "if_baseline", "if_enhanced"],
        per_run,
    )
    bucket_rows = []
    for bucket in sorted(enh_buckets["buckets"]):
        b = base_buckets["buckets"][bucket]
        e = enh_buckets["buckets"][bucket]
        bucket_rows.append(
            [
                bucket,
                e["count"],
                format_metric(b["pc"]),
                format_metric(e["pc"]),
                format_metric(b["if_score"]),
                format_metric(e["if_score"]),
            ]
        )
    write_csv(
        os.path.join(args.out, "buckets.csv"),
        ["attributes", "count", "pc_baseline", "pc_enhanced", "if_baseline", "if_enhanced"],
        bucket_rows,
    )
    chart_rows = [
        (f"{bucket} attr", base_buckets["buckets"][bucket]["pc"], enh_buckets["buckets"][bucket]["pc"])
        for bucket in sorted(enh_buckets["buckets"])
    ]
    metric_bars(
        chart_rows,
        os.path.join(args.out, "pc_by_bucket.png"),
        title="prompt consistency by attribute count",
    )
    chart_rows = [
        (
            f"{bucket} attr",
            base_buckets["buckets"][bucket]["if_score"],
            enh_buckets["buckets"][bucket]["if_score"],
        )
        for bucket in sorted(enh_buckets["buckets"])
    ]
    metric_bars(
        chart_rows,
        os.path.join(args.out, "if_by_bucket.png"),
        title="identity fidelity by attribute count",
    )
    summary = {
        "baseline": {
            "pc": base_report.pc,
            "if": base_report.if_score,
            "face_div": base_report.face_div,
            "pc_times_if": base_report.pc_times_if,
            "missing_faces": base_report.missing_faces,
        },
        "enhanced": {
            "pc": enh_report.pc,
            "if": enh_report.if_score,
            "face_div": enh_report.face_div,
            "pc_times_if": enh_report.pc_times_if,
            "missing_faces": enh_report.missing_faces,
        },
        "deltas": enh_report.deltas,
        "buckets": {"baseline": base_buckets, "enhanced": enh_buckets},
    }
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_dump_attn(args) -> int:
    manifest = load_manifest(args.manifest)
    backend = get_backend(manifest.backend)
    if not backend.capabilities.supports_attention_capture:
        raise CapabilityError(
            f"backend {manifest.backend!r} cannot capture attention maps"
        )
    spec, cond_u = encode_prompt(manifest.prompt, backend, manifest.attribute_specs())
    if not 0 <= args.token < len(spec.token_ids):
        raise FreecureError(
            f"token index {args.token} outside the prompt's {len(spec.token_ids)} tokens"
        )
    reference = manifest.identity.reference_image(backend)
    cond_f = fuse_identity(cond_u, encode_identity(reference, backend))
    sched = build_schedule("linear", manifest.step_count)
    cfg = manifest.run_config()
    z_init = sample_initial_latent(manifest.seed, backend.capabilities.latent_shape, sched)
    fd_capture = CaptureSession(run_tag="fd")
    pd_capture = CaptureSession(run_tag="pd")
    run_fd(z_init, cond_u, cfg, backend, sched, capture=fd_capture)
    run_pd(z_init, cond_u, cond_f, cfg, backend, sched, capture=pd_capture)
    os.makedirs(args.out, exist_ok=True)
    words = manifest.prompt.split()
    word = "<start>" if args.token == 0 else words[args.token - 1]
    files = []
    for tag, capture in (("fd", fd_capture), ("pd", pd_capture)):
        for group in BLOCK_GROUPS:
            amap = aggregate_attribute_map(
                capture, [args.token], (64, 64), block_groups=(group,)
            )
            stem = os.path.join(args.out, f"{tag}_{group}_token{args.token}")
            write_tensor(stem + ".fct", amap)
            save_gray(stem + ".png", np.clip(amap, 0.0, 1.0))
            files.append(stem + ".fct")
    meta = {"token": args.token, "word": word, "prompt": manifest.prompt, "files": files}
    with open(os.path.join(args.out, "dump.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"token {args.token} ({word!r}): wrote {len(files)} maps to {os.path.abspath(args.out)}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as e:
        print(f"manifest error: {e}", file=sys.stderr)
        return 2
    except CapabilityError as e:
        print(f"capability error: {e}", file=sys.stderr)
        return 3
    except FreecureError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

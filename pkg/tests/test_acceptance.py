"""End-to-end checks for the whole toolkit.

One test per guarantee, ordered roughly by how much machinery each one
pulls in: metric arithmetic, blending identities, piecewise restoration,
inversion round trips and monotonicity, attribute non-interference, the
attention interpolation sweep, mask algebra properties, bundle
determinism, and the evaluation harness over the standard corpus.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from freecure.analytic import SyntheticFaceSpec, render_face, resolve_face
from freecure.attention import normalize_map
from freecure.cli import main
from freecure.corpus import corpus_manifests
from freecure.diagnostics import run_interpolation_sweep, run_inversion_sweep
from freecure.engine import RunConfig, run_blended_pair, run_fd, run_pd
from freecure.imageops import block_upsample, load_image
from freecure.masks import aligned_mask, merge_masks
from freecure.metrics import (
    MetricsReport,
    composite_and_deltas,
    identity_fidelity,
    prompt_consistency,
)
from freecure.prompts import AttributeSpec, encode_identity, encode_prompt, fuse_identity, locate_phrase
from freecure.restore import invert_to_gamma, restore_abstract, run_pipeline
from freecure.schedule import sample_initial_latent

DEMO = Path(__file__).resolve().parents[1] / "manifests" / "demo.json"
TOL = 2.0 / 255.0


def _conds(backend):
    prompt = "a <S> with black curly hair"
    attrs = (AttributeSpec("hair", "black curly hair",
                           locate_phrase(prompt, "black curly hair")),)
    spec, cond_u = encode_prompt(prompt, backend, attrs)
    identity = render_face(resolve_face(SyntheticFaceSpec(7, (("hair", "brown"),))))
    cond_f = fuse_identity(cond_u, encode_identity(identity, backend))
    return spec, cond_u, cond_f


def _erode(mask: np.ndarray) -> np.ndarray:
    """Shrink a binary mask by one pixel (8-neighborhood)."""
    m = mask > 0.5
    p = np.pad(m, 1, mode="edge")
    out = np.ones_like(m)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            out &= p[1 + dr:1 + dr + m.shape[0], 1 + dc:1 + dc + m.shape[1]]
    return out


def test_01_reference_table_arithmetic_reproduces():
    rows = [
        # (baseline pc, if), (enhanced pc, if), expected composites and deltas
        ((22.97, 51.95), (24.60, 50.97), 11.93, 12.54,
         {"pc": 7.10, "if_score": -1.89, "pc_times_if": 5.08}),
        ((20.36, 58.19), (22.11, 57.68), 11.85, 12.75,
         # the fidelity drop here computes to -0.88 from its own operands
         {"pc": 8.60, "if_score": -0.88, "pc_times_if": 7.64}),
        ((17.54, 43.38), (21.40, 40.94), 7.61, 8.76,
         {"pc": 22.01, "if_score": -5.62, "pc_times_if": 15.14}),
    ]
    for (pb, ib), (pe, ie), comp_b, comp_e, deltas in rows:
        b, e = composite_and_deltas(
            MetricsReport(pc=pb, if_score=ib), MetricsReport(pc=pe, if_score=ie)
        )
        assert b.pc_times_if == pytest.approx(comp_b, abs=0.01)
        assert e.pc_times_if == pytest.approx(comp_e, abs=0.01)
        for key, expected in deltas.items():
            assert e.deltas[key] == pytest.approx(expected, abs=0.01), key


def test_02_all_zero_and_all_one_masks_recover_the_branches(backend, sched):
    spec, cond_u, cond_f = _conds(backend)
    cfg = RunConfig()
    shape = backend.capabilities.latent_shape
    zeros = np.zeros(shape[1:])
    ones = np.ones(shape[1:])
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 2**31 - 1, size=20):
        z_init = sample_initial_latent(int(seed), shape, sched)
        pd = run_pd(z_init, cond_u, cond_f, cfg, backend, sched)
        fd = run_fd(z_init, cond_u, cfg, backend, sched)
        all_pd = run_blended_pair(z_init, cond_u, (cond_u, cond_f), zeros, cfg, backend, sched)
        all_fd = run_blended_pair(z_init, cond_u, (cond_u, cond_f), ones, cfg, backend, sched)
        assert all_pd.final_latent.z.tobytes() == pd.final_latent.z.tobytes()
        assert all_pd.image.tobytes() == pd.image.tobytes()
        assert all_fd.final_latent.z.tobytes() == fd.final_latent.z.tobytes()
        assert all_fd.image.tobytes() == fd.image.tobytes()


def test_03_blended_image_is_piecewise_between_the_branch_targets(demo_manifest, backend):
    manifest = demo_manifest.with_overrides(
        attributes=tuple(a for a in demo_manifest.attributes if a.route == "localized"))
    result = run_pipeline(manifest)
    spec, cond_u = encode_prompt(manifest.prompt, backend, manifest.attribute_specs())
    cond_f = fuse_identity(cond_u, encode_identity(result.reference_image, backend))
    fd_target = backend.render_target(cond_u)
    pd_target = backend.render_target(cond_f)

    mask_px = block_upsample(result.masks.merged, 2)
    inside = _erode(mask_px)
    outside = _erode(1.0 - mask_px)
    assert inside.sum() > 100 and outside.sum() > 1000
    blended = result.blended.image
    assert np.abs(blended - fd_target)[inside].max() <= TOL
    assert np.abs(blended - pd_target)[outside].max() <= TOL


def test_04_inversion_round_trips(backend, sched):
    spec, cond_u, _ = _conds(backend)
    img = render_face(resolve_face(SyntheticFaceSpec(9)))
    full = invert_to_gamma(img, cond_u, 1.0, backend, sched)
    back = restore_abstract(full, cond_u, backend, sched)
    assert float(np.mean((back.image - img) ** 2)) <= 1e-4
    none = invert_to_gamma(img, cond_u, 0.0, backend, sched)
    back0 = restore_abstract(none, cond_u, backend, sched)
    assert np.abs(back0.image - img).max() <= 1e-6


def test_05_restoration_strength_grows_with_inversion_depth(demo_manifest):
    gammas = [round(0.1 * k, 1) for k in range(1, 10)]
    points, _ = run_inversion_sweep(demo_manifest, gammas)
    dists = [p.distances["to_blended"] for p in points]
    for a, b in zip(dists, dists[1:]):
        assert b - a >= -1e-12


def test_06_abstract_restoration_leaves_masked_regions_alone(demo_manifest, backend):
    result = run_pipeline(demo_manifest)
    out = result.output.image
    blended = result.blended.image

    hair_px = block_upsample(result.masks.merged, 2) > 0.5
    assert hair_px.sum() == 576
    assert np.abs(out - blended)[hair_px].max() <= TOL

    identity_values = dict(demo_manifest.identity.attribute_values)
    identity_values["expression"] = "laughing happily"
    laughing = render_face(resolve_face(SyntheticFaceSpec(
        demo_manifest.identity.identity_seed,
        tuple(identity_values.items()),
    )))
    mouth = np.zeros((64, 64), dtype=bool)
    mouth[44:48, 28:36] = True
    assert np.abs(out - laughing)[mouth].max() <= TOL


def test_07_attention_interpolation_spans_the_two_branches(demo_manifest):
    points, fd, pd = run_interpolation_sweep(demo_manifest, [0.0, 1.0])
    assert points[0].result.image.tobytes() == pd.image.tobytes()
    assert np.abs(points[1].result.image - fd.image).max() <= TOL

    down_only, _, pd2 = run_interpolation_sweep(
        demo_manifest, [1.0], block_groups=("down",))
    assert down_only[0].result.image.tobytes() == pd2.image.tobytes()


def test_08_mask_algebra_properties_hold_under_random_inputs():
    rng = np.random.default_rng(42)
    shape = (16, 16)
    for _ in range(1000):
        attn = rng.random(shape)
        bp = (rng.random(shape) < 0.5).astype(float)
        bf = (rng.random(shape) < 0.5).astype(float)
        out = aligned_mask(attn, bp, bf)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(out[(bp == 0) | (bf == 0)] == 0.0)

    for _ in range(1000):
        bp = (rng.random(shape) < 0.5).astype(float)
        bf = (1.0 - bp) * (rng.random(shape) < 0.5)
        out = aligned_mask(rng.random(shape), bp, bf)
        assert not out.any()  # disjoint region masks can never intersect

    for _ in range(1000):
        k = int(rng.integers(1, 5))
        masks = [rng.random(shape) for _ in range(k)]
        merged = merge_masks(masks)
        np.testing.assert_array_equal(merged, np.maximum.reduce(masks))
        shuffled = [masks[i] for i in rng.permutation(k)]
        np.testing.assert_array_equal(merge_masks(shuffled), merged)
        np.testing.assert_array_equal(merge_masks([merged, merged]), merged)

    for _ in range(1000):
        c = float(rng.uniform(-3.0, 3.0))
        out = normalize_map(np.full(shape, c))
        np.testing.assert_array_equal(out, np.ones(shape))
        raw = rng.random(shape) * float(rng.uniform(0.5, 4.0))
        if np.ptp(raw) > 0:
            out = normalize_map(raw)
            assert out.min() == 0.0 and out.max() == 1.0


def _bundle_hashes(root: Path) -> dict:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def test_09_bundles_are_byte_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["enhance", "--manifest", str(DEMO), "--out", str(a)]) == 0
    assert main(["enhance", "--manifest", str(DEMO), "--out", str(b)]) == 0
    hashes_a = _bundle_hashes(a)
    hashes_b = _bundle_hashes(b)
    assert hashes_a  # non-empty bundle
    assert hashes_a == hashes_b


def test_10_evaluation_buckets_match_a_brute_force_group_by(tmp_path, backend):
    from freecure.analytic import ToyCaptionScorer, ToyFaceDetector, ToyFaceEmbedder

    runs_dir = tmp_path / "runs"
    pairs = corpus_manifests()
    for name, manifest in pairs:
        run_pipeline(manifest, out_dir=str(runs_dir / name))

    out = tmp_path / "eval"
    assert main(["eval", "--runs", str(runs_dir), "--out", str(out)]) == 0
    summary = json.loads((out / "report.json").read_text())

    scorer = ToyCaptionScorer()
    detector = ToyFaceDetector()
    embedder = ToyFaceEmbedder()
    stages = {"baseline": "pd", "enhanced": "output"}
    scored = {stage: [] for stage in stages}
    for name, manifest in pairs:
        reference = load_image(runs_dir / name / "images" / "reference.png")
        for stage, image_name in stages.items():
            img = load_image(runs_dir / name / "images" / f"{image_name}.png")
            scored[stage].append((
                len(manifest.attributes),
                prompt_consistency(img, manifest.prompt, scorer),
                identity_fidelity(img, reference, detector, embedder),
            ))

    for stage in stages:
        buckets = summary["buckets"][stage]["buckets"]
        assert sorted(buckets) == ["1", "2", "3"]
        for bucket, expected_count in (("1", 8), ("2", 8), ("3", 4)):
            rows = [r for r in scored[stage] if r[0] == int(bucket)]
            assert buckets[bucket]["count"] == expected_count == len(rows)
            assert buckets[bucket]["pc"] == float(np.mean([r[1] for r in rows]))
            ifs = [r[2] for r in rows if r[2] is not None]
            expected_if = float(np.mean(ifs)) if ifs else None
            assert buckets[bucket]["if_score"] == expected_if
            assert buckets[bucket]["missing_faces"] == sum(
                1 for r in rows if r[2] is None)
        overall = summary["buckets"][stage]["overall"]
        assert overall["count"] == 20
        assert overall["pc"] == float(np.mean([r[1] for r in scored[stage]]))

from __future__ import annotations

import numpy as np
import pytest

from freecure.analytic import DEFAULT_FACE, SyntheticFaceSpec, render_face, resolve_face
from freecure.attention import CaptureSession
from freecure.masks import (
    MaskBundle,
    ParsingMap,
    aligned_mask,
    build_mask_bundle,
    empty_mask_bundle,
    merge_masks,
    parse_face,
    resample_mask,
)
from freecure.prompts import AttributeSpec, encode_prompt, locate_phrase
from freecure.schedule import sample_initial_latent


def _label_map():
    labels = np.zeros((8, 8), dtype=np.int64)
    labels[0:4, :] = 2
    labels[6:8, 2:4] = 3
    return ParsingMap(labels=labels, label_table={"hair": (2,), "eyes": (3,)})


def test_parsing_map_masks():
    pm = _label_map()
    hair = pm.binary_mask("hair")
    assert hair.dtype == np.float64
    assert hair[0, 0] == 1.0 and hair[5, 5] == 0.0
    both = pm.mask_for_labels((2, 3))
    assert both.sum() == hair.sum() + 4
    with pytest.raises(ValueError):
        pm.binary_mask("mouth")


def test_parsing_map_validation():
    with pytest.raises(ValueError):
        ParsingMap(labels=np.zeros((4, 4), dtype=np.float64), label_table={})
    with pytest.raises(ValueError):
        ParsingMap(labels=np.zeros((4, 4, 2), dtype=np.int64), label_table={})
    pm = _label_map()
    with pytest.raises(ValueError):
        pm.labels[0, 0] = 9


def test_parse_face_type_check(parser):
    class NullParser:
        def parse(self, image):
            return image

    img = render_face(DEFAULT_FACE)
    assert isinstance(parse_face(img, parser), ParsingMap)
    with pytest.raises(TypeError):
        parse_face(img, NullParser())


def test_resample_mask_clips_and_resizes():
    mask = np.zeros((64, 64))
    mask[0:32, :] = 1.0
    out = resample_mask(mask, (32, 32))
    assert out.shape == (32, 32)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out[0, 0] == 1.0 and out[31, 31] == 0.0


def test_aligned_mask_multiplies_three_factors():
    attn = np.array([[0.0, 2.0], [4.0, 8.0]])
    bp = np.array([[1.0, 1.0], [0.0, 1.0]])
    bf = np.array([[1.0, 0.0], [1.0, 1.0]])
    out = aligned_mask(attn, bp, bf)
    np.testing.assert_array_equal(out, [[0.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        aligned_mask(attn, bp, np.zeros((3, 3)))


def test_merge_masks_is_elementwise_max():
    a = np.array([[0.2, 0.8], [0.5, 0.0]])
    b = np.array([[0.3, 0.1], [0.5, 1.0]])
    np.testing.assert_array_equal(merge_masks([a, b]), np.maximum(a, b))
    with pytest.raises(ValueError):
        merge_masks([])
    with pytest.raises(ValueError):
        merge_masks([a, np.zeros((3, 3))])


def test_empty_bundle_shape():
    bundle = empty_mask_bundle((32, 32))
    assert bundle.per_attribute == {}
    assert bundle.merged.shape == (32, 32)
    assert bundle.merged.max() == 0.0


def test_mask_bundle_checks_merged_shape():
    with pytest.raises(ValueError):
        MaskBundle(per_attribute={}, merged=np.zeros((4, 4)), resolution=(8, 8),
                   attention={})


def test_build_mask_bundle_parsing_route(backend, parser, sched):
    prompt = "a <S> with black curly hair"
    attrs = (AttributeSpec("hair", "black curly hair", (4, 7)),)
    spec, cond = encode_prompt(prompt, backend, attrs)
    capture = CaptureSession(run_tag="fd")
    state = sample_initial_latent(0, (12, 32, 32), sched)
    backend.predict_noise(state, cond, sched, capture=capture)
    pd_img = render_face(resolve_face(SyntheticFaceSpec(2)))
    fd_img = backend.render_target(cond)
    pm_pd = parse_face(pd_img, parser)
    pm_fd = parse_face(fd_img, parser)

    bundle = build_mask_bundle(spec.attributes, capture, pm_pd, pm_fd, (32, 32))
    mask = bundle.per_attribute["hair"]
    assert set(np.unique(mask)) == {0.0, 1.0}
    assert mask.mean() == 576 / 4096  # hair covers 576 of 64^2 pixels
    np.testing.assert_array_equal(bundle.merged, mask)
    assert "hair" in bundle.attention

    plain = build_mask_bundle(spec.attributes, capture, pm_pd, pm_fd, (32, 32),
                              attn_fusion=False)
    np.testing.assert_array_equal(plain.per_attribute["hair"], mask)
    assert plain.attention == {}


def test_build_mask_bundle_attention_only_route(backend, parser, sched):
    prompt = "a <S> wearing gold earrings"
    attrs = (AttributeSpec("earrings", "gold earrings",
                           locate_phrase(prompt, "gold earrings"),
                           mask_source="attention_only"),)
    spec, cond = encode_prompt(prompt, backend, attrs)
    capture = CaptureSession(run_tag="fd")
    state = sample_initial_latent(0, (12, 32, 32), sched)
    backend.predict_noise(state, cond, sched, capture=capture)
    bundle = build_mask_bundle(spec.attributes, capture, None, None, (32, 32))
    mask = bundle.per_attribute["earrings"]
    assert mask.shape == (32, 32)
    assert mask.max() == 1.0
    # earring pixels sit at rows 44:48, cols 16:20 and 44:48 on the canvas
    assert mask[22, 8] == 1.0
    assert mask[22, 23] == 1.0
    # a bare face cell draws the least attention to the earring tokens, so it
    # is the normalization floor; background keeps a faint softmax residue
    assert mask[12, 16] == 0.0
    assert 0.0 < mask[5, 5] < 0.05


def test_build_mask_bundle_parser_label_override(backend, parser, sched):
    prompt = "a <S> with black curly hair"
    attrs = (AttributeSpec("hair", "black curly hair", (4, 7),
                           parser_labels=(3,)),)  # point the mask at the eye label
    spec, cond = encode_prompt(prompt, backend, attrs)
    capture = CaptureSession(run_tag="fd")
    state = sample_initial_latent(0, (12, 32, 32), sched)
    backend.predict_noise(state, cond, sched, capture=capture)
    img = render_face(DEFAULT_FACE)
    pm = parse_face(img, parser)
    bundle = build_mask_bundle(spec.attributes, capture, pm, pm, (32, 32),
                               attn_fusion=False)
    mask = bundle.per_attribute["hair"]
    # eye regions, not hair: rows 24:28 cols 24:28 and 36:40 at canvas scale
    assert mask[12, 12] == 1.0
    assert mask[5, 16] == 0.0


def test_build_mask_bundle_requires_parsing_maps(backend, sched):
    prompt = "a <S> with black curly hair"
    attrs = (AttributeSpec("hair", "black curly hair", (4, 7)),)
    spec, cond = encode_prompt(prompt, backend, attrs)
    capture = CaptureSession(run_tag="fd")
    state = sample_initial_latent(0, (12, 32, 32), sched)
    backend.predict_noise(state, cond, sched, capture=capture)
    with pytest.raises(ValueError):
        build_mask_bundle(spec.attributes, capture, None, None, (32, 32))


def test_build_mask_bundle_rejects_abstract_attributes(backend, sched):
    attrs = (AttributeSpec("expression", "laughing", (3, 4), route="abstract",
                           mask_source="attention_only"),)
    with pytest.raises(ValueError):
        build_mask_bundle(attrs, CaptureSession(), None, None, (32, 32))

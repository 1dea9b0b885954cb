"""Spatially aligned mask extraction.

Attribute masks gate where foundation-branch noise replaces the
personalized branch. For attributes a face parser can localize, the
aggregated cross-attention map is fused with binary parsing masks from
both branches, which suppresses attention mass that leaks outside the
semantic region while keeping the map's soft interior. Attributes without
a parser label fall back to the normalized attention map alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import CaptureSession, aggregate_attribute_map, normalize_map
from .imageops import bilinear_resize


@dataclass(frozen=True)
class ParsingMap:
    """Integer label image plus the attribute -> label-id table."""

    labels: np.ndarray
    label_table: dict

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"label image must be 2-D, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValueError(f"label image must be integer typed, got {labels.dtype}")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "label_table", dict(self.label_table))

    def mask_for_labels(self, label_ids) -> np.ndarray:
        """Union of specific label ids, as 0/1 floats."""
        out = np.zeros(self.labels.shape, dtype=np.float64)
        for label_id in label_ids:
            out[self.labels == int(label_id)] = 1.0
        return out

    def binary_mask(self, attribute_id: str) -> np.ndarray:
        """Union of the labels registered for one attribute, as 0/1 floats."""
        if attribute_id not in self.label_table:
            raise ValueError(f"no parser labels registered for attribute {attribute_id!r}")
        return self.mask_for_labels(self.label_table[attribute_id])


def parse_face(image: np.ndarray, parser) -> ParsingMap:
    pm = parser.parse(image)
    if not isinstance(pm, ParsingMap):
        raise TypeError(f"parser returned {type(pm).__name__}, expected ParsingMap")
    return pm


def resample_mask(mask: np.ndarray, resolution: tuple) -> np.ndarray:
    """Resize a mask to a target grid, clamped back to [0, 1]."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    return np.clip(bilinear_resize(mask, tuple(resolution)), 0.0, 1.0)


def aligned_mask(attention_map: np.ndarray, pd_mask: np.ndarray, fd_mask: np.ndarray) -> np.ndarray:
    """Normalized attention gated by both branches' parsing masks."""
    attention_map = np.asarray(attention_map, dtype=np.float64)
    pd_mask = np.asarray(pd_mask, dtype=np.float64)
    fd_mask = np.asarray(fd_mask, dtype=np.float64)
    if not attention_map.shape == pd_mask.shape == fd_mask.shape:
        raise ValueError(
            "mask shapes differ: attention "
            f"{attention_map.shape}, personalized {pd_mask.shape}, foundation {fd_mask.shape}"
        )
    return normalize_map(attention_map) * pd_mask * fd_mask


def merge_masks(masks) -> np.ndarray:
    """Elementwise maximum over per-attribute masks."""
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    if not masks:
        raise ValueError("no masks to merge")
    shapes = {m.shape for m in masks}
    if len(shapes) > 1:
        raise ValueError(f"cannot merge masks of differing shapes {sorted(shapes)}")
    return np.maximum.reduce(masks)


@dataclass(frozen=True)
class MaskBundle:
    """Per-attribute masks at latent resolution plus their union."""

    per_attribute: dict
    merged: np.ndarray
    resolution: tuple
    attention: dict

    def __post_init__(self):
        object.__setattr__(self, "per_attribute", dict(self.per_attribute))
        object.__setattr__(self, "attention", dict(self.attention))
        object.__setattr__(self, "resolution", tuple(self.resolution))
        merged = np.asarray(self.merged, dtype=np.float64)
        if merged.shape != self.resolution:
            raise ValueError(
                f"merged mask shape {merged.shape} does not match resolution {self.resolution}"
            )
        object.__setattr__(self, "merged", merged)


def empty_mask_bundle(resolution: tuple) -> MaskBundle:
    resolution = tuple(resolution)
    return MaskBundle(
        per_attribute={},
        merged=np.zeros(resolution, dtype=np.float64),
        resolution=resolution,
        attention={},
    )


def build_mask_bundle(
    attributes,
    capture: CaptureSession,
    pd_parsing: ParsingMap | None,
    fd_parsing: ParsingMap | None,
    resolution: tuple,
    timestep_window: tuple | None = None,
    attn_fusion: bool = True,
) -> MaskBundle:
    """Build blending masks for the localized attributes.

    Args:
        attributes: localized attribute specs to build masks for.
        capture: attention session recorded on the foundation run.
        pd_parsing: parsing map of the personalized image; may be None when
            no attribute uses parsing masks.
        fd_parsing: parsing map of the foundation image, same contract.
        resolution: target (height, width), normally the latent grid.
        timestep_window: inclusive (high, low) timestep range to aggregate.
        attn_fusion: when False, parsing-route attributes use the parsing
            intersection alone and skip the attention factor.

    Returns:
        MaskBundle with per-attribute masks in [0, 1], their union, and the
        raw aggregated attention maps that fed them.
    """
    resolution = tuple(resolution)
    per_attribute = {}
    attention_maps = {}
    for attr in attributes:
        if attr.route != "localized":
            raise ValueError(f"attribute {attr.attribute_id!r} is not localized")
        token_indices = range(attr.token_span[0], attr.token_span[1])
        use_parsing = attr.mask_source == "parsing"
        need_attention = attn_fusion or not use_parsing
        attn_map = None
        if need_attention:
            attn_map = aggregate_attribute_map(
                capture,
                token_indices,
                resolution,
                timestep_window=timestep_window,
            )
            attention_maps[attr.attribute_id] = attn_map
        if use_parsing:
            if pd_parsing is None or fd_parsing is None:
                raise ValueError(
                    f"attribute {attr.attribute_id!r} uses parsing masks but no parsing map was given"
                )
            if attr.parser_labels:
                raw_p = pd_parsing.mask_for_labels(attr.parser_labels)
                raw_f = fd_parsing.mask_for_labels(attr.parser_labels)
            else:
                raw_p = pd_parsing.binary_mask(attr.attribute_id)
                raw_f = fd_parsing.binary_mask(attr.attribute_id)
            bp = resample_mask(raw_p, resolution)
            bf = resample_mask(raw_f, resolution)
            if attn_fusion:
                mask = aligned_mask(attn_map, bp, bf)
            else:
                mask = bp * bf
        else:
            mask = normalize_map(attn_map)
        per_attribute[attr.attribute_id] = mask
    if per_attribute:
        merged = merge_masks(list(per_attribute.values()))
    else:
        merged = np.zeros(resolution, dtype=np.float64)
    return MaskBundle(
        per_attribute=per_attribute,
        merged=merged,
        resolution=resolution,
        attention=attention_maps,
    )

"""Cross-attention capture, aggregation, and identity-column editing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoRecordsError
from .imageops import bilinear_resize

BLOCK_GROUPS = ("down", "mid", "up")


@dataclass(frozen=True)
class AttentionRecord:
    """Pre-softmax cross-attention logits for one layer at one timestep.

    ``scores`` has shape [heads, spatial, tokens] with a square spatial
    axis.
    """

    block_group: str
    layer_id: int
    timestep: int
    scores: np.ndarray

    def __post_init__(self):
        if self.block_group not in BLOCK_GROUPS:
            raise ValueError(f"unknown block group {self.block_group!r}")
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 3:
            raise ValueError("scores must be [heads, spatial, tokens]")
        if not np.all(np.isfinite(scores)):
            raise FloatingPointError("attention scores contain non-finite values")
        res = math.isqrt(scores.shape[1])
        if res * res != scores.shape[1]:
            raise ValueError(f"spatial size {scores.shape[1]} is not a square")
        scores = np.ascontiguousarray(scores)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def resolution(self) -> int:
        return math.isqrt(self.scores.shape[1])


@dataclass
class IdentityAttentionEdit:
    """Blend a donor identity column into the live logits.

    Column ``target_index`` of each edited tensor becomes
    ``alpha * donor[:, :, source_index] + (1 - alpha) * live[:, :, target_index]``
    where the donor tensor is looked up by (timestep, layer_id). Editing is
    restricted to ``block_groups``.
    """

    donor: dict
    target_index: int
    source_index: int
    alpha: float
    block_groups: frozenset = frozenset(BLOCK_GROUPS)

    @classmethod
    def from_session(cls, session, target_index, source_index, alpha, block_groups=None):
        donor = {(r.timestep, r.layer_id): r.scores for r in session.records}
        groups = frozenset(block_groups) if block_groups is not None else frozenset(BLOCK_GROUPS)
        return cls(donor, target_index, source_index, alpha, groups)

    def apply(self, block_group, layer_id, timestep, scores):
        if block_group not in self.block_groups:
            return scores
        key = (timestep, layer_id)
        if key not in self.donor:
            raise KeyError(f"no donor attention for timestep {timestep}, layer {layer_id}")
        return interpolate_identity_attention(
            scores, self.donor[key], self.target_index, self.source_index, self.alpha
        )


@dataclass
class CaptureSession:
    """Ordered collection of attention records from one run.

    ``filter`` selects the block groups to record, ``edit`` optionally
    rewrites logits before they are used or stored. Records arrive in run
    order: timesteps descending, layer ids ascending within a timestep.
    """

    filter: frozenset = frozenset(BLOCK_GROUPS)
    run_tag: str = ""
    edit: IdentityAttentionEdit | None = None
    records: list = field(default_factory=list)

    def wants(self, block_group: str) -> bool:
        return block_group in self.filter

    def add(self, record: AttentionRecord) -> None:
        if self.records:
            last = self.records[-1]
            ordered = record.timestep < last.timestep or (
                record.timestep == last.timestep and record.layer_id > last.layer_id
            )
            if not ordered:
                raise ValueError(
                    f"record ({record.timestep}, {record.layer_id}) breaks "
                    f"(timestep desc, layer asc) order after ({last.timestep}, {last.layer_id})"
                )
        self.records.append(record)


def interpolate_identity_attention(live, donor, target_index, source_index, alpha):
    """Return ``live`` with one column linearly pulled toward a donor column.

    Only column ``target_index`` changes; with ``alpha == 0`` the result
    equals ``live``.
    """
    live = np.asarray(live, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    if live.ndim != 3 or donor.ndim != 3:
        raise ValueError("attention tensors must be [heads, spatial, tokens]")
    if live.shape[:2] != donor.shape[:2]:
        raise ValueError(f"head/spatial shape mismatch: {live.shape} vs {donor.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if not 0 <= target_index < live.shape[2]:
        raise ValueError("target column outside token axis")
    if not 0 <= source_index < donor.shape[2]:
        raise ValueError("source column outside donor token axis")
    out = live.copy()
    out[:, :, target_index] = (
        alpha * donor[:, :, source_index] + (1.0 - alpha) * live[:, :, target_index]
    )
    return out


def normalize_map(map2d: np.ndarray) -> np.ndarray:
    """Min-max normalize a map to [0, 1]; constant maps become all ones."""
    map2d = np.asarray(map2d, dtype=np.float64)
    if not np.all(np.isfinite(map2d)):
        raise FloatingPointError("map contains non-finite values")
    lo = float(map2d.min())
    hi = float(map2d.max())
    if hi == lo:
        return np.ones_like(map2d)
    return (map2d - lo) / (hi - lo)


def _softmax_tokens(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate_attribute_map(
    session: CaptureSession,
    token_indices,
    resolution: tuple[int, int],
    timestep_window: tuple[int, int] | None = None,
    block_groups=("up",),
) -> np.ndarray:
    """Average an attribute's attention mass into one spatial map.

    Per record: softmax over the token axis, sum the selected columns, mean
    over heads, resize to ``resolution``; the per-record maps are then
    averaged. The result lives in [0, 1].

    ``timestep_window`` is inclusive as ``[t_high, t_low]``; ``None`` keeps
    every record.
    """
    token_indices = [int(i) for i in token_indices]
    if not token_indices:
        raise ValueError("no token indices selected")
    groups = frozenset(block_groups)
    picked = []
    for rec in session.records:
        if rec.block_group not in groups:
            continue
        if timestep_window is not None:
            hi, lo = timestep_window
            if not lo <= rec.timestep <= hi:
                continue
        picked.append(rec)
    if not picked:
        raise NoRecordsError(
            f"no records for groups {sorted(groups)} in window {timestep_window}"
        )
    acc = np.zeros(resolution, dtype=np.float64)
    for rec in picked:
        if max(token_indices) >= rec.scores.shape[2]:
            raise ValueError("token index outside record token axis")
        probs = _softmax_tokens(rec.scores)
        mass = probs[:, :, token_indices].sum(axis=2).mean(axis=0)
        res = rec.resolution
        acc += bilinear_resize(mass.reshape(res, res), resolution)
    return np.clip(acc / len(picked), 0.0, 1.0)

"""Prompt encoding, attribute spans, and identity fusion.

A prompt contains exactly one subject placeholder ``<S>``. Attribute spans
are declared up front (by the run manifest), never inferred from the text,
and are recorded as half-open ``[start, end)`` intervals over token
positions. Fusing an identity replaces the placeholder row of the text
embedding matrix with the projected identity vector; every other row is
left untouched.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidPromptError

PLACEHOLDER = "<S>"

ROUTES = ("localized", "abstract")
MASK_SOURCES = ("parsing", "attention_only")


@dataclass(frozen=True)
class AttributeSpec:
    """One declared target attribute of a prompt.

    ``token_span`` indexes the tokenized prompt. ``route`` selects the
    restoration path (mask blending for localized attributes, inversion for
    abstract ones) and ``mask_source`` how a localized mask is built.
    """

    attribute_id: str
    label: str
    token_span: tuple[int, int]
    route: str = "localized"
    mask_source: str = "parsing"
    parser_labels: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "token_span", (int(self.token_span[0]), int(self.token_span[1])))
        object.__setattr__(self, "parser_labels", tuple(int(v) for v in self.parser_labels))
        s, e = self.token_span
        if s < 0 or e <= s:
            raise ValueError(f"attribute {self.attribute_id!r}: bad token span [{s}, {e})")
        if self.route not in ROUTES:
            raise ValueError(f"attribute {self.attribute_id!r}: unknown route {self.route!r}")
        if self.mask_source not in MASK_SOURCES:
            raise ValueError(
                f"attribute {self.attribute_id!r}: unknown mask source {self.mask_source!r}"
            )


def _check_spans(attributes, n_tokens, placeholder_index):
    ordered = sorted(attributes, key=lambda a: a.token_span)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.token_span[0] < prev.token_span[1]:
            raise ValueError(
                f"attribute spans overlap: {prev.attribute_id!r} {prev.token_span} "
                f"and {cur.attribute_id!r} {cur.token_span}"
            )
    for a in attributes:
        s, e = a.token_span
        if e > n_tokens:
            raise ValueError(
                f"attribute {a.attribute_id!r}: span [{s}, {e}) exceeds {n_tokens} tokens"
            )
        if s <= placeholder_index < e:
            raise ValueError(
                f"attribute {a.attribute_id!r}: span covers the subject placeholder"
            )


@dataclass(frozen=True)
class PromptSpec:
    """Tokenized prompt with its placeholder position and attribute spans."""

    text: str
    token_ids: tuple[int, ...]
    placeholder_index: int
    attributes: tuple[AttributeSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not 0 <= self.placeholder_index < len(self.token_ids):
            raise ValueError("placeholder index outside token range")
        _check_spans(self.attributes, len(self.token_ids), self.placeholder_index)

    def attribute(self, attribute_id: str) -> AttributeSpec:
        for a in self.attributes:
            if a.attribute_id == attribute_id:
                return a
        raise KeyError(attribute_id)


@dataclass(frozen=True)
class IdentityEmbedding:
    """Projected identity vector plus a fingerprint of its source image."""

    vector: np.ndarray
    source_ref: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("identity vector must be 1-D")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class ConditioningBundle:
    """Per-token conditioning rows handed to the denoiser.

    ``cache_key`` fingerprints the row contents so backends can memoize
    derived state per bundle.
    """

    embeddings: np.ndarray
    identity_fused: bool
    placeholder_index: int
    prompt: PromptSpec | None = None
    cache_key: str = field(init=False, default="")

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError("embeddings must be a [tokens, dim] matrix")
        emb = np.ascontiguousarray(emb)
        emb.setflags(write=False)
        object.__setattr__(self, "embeddings", emb)
        digest = hashlib.sha1()
        digest.update(emb.tobytes())
        digest.update(b"fused" if self.identity_fused else b"plain")
        digest.update(str(self.placeholder_index).encode())
        object.__setattr__(self, "cache_key", digest.hexdigest())


def _clean_words(text: str) -> list[str]:
    return [w.strip(",").lower() for w in text.split() if w.strip(",")]


def locate_phrase(text: str, phrase: str) -> tuple[int, int]:
    """Token span [start, end) of the first occurrence of ``phrase``.

    Matching is case-insensitive and ignores trailing commas. Position 0 is
    the start token, so word ``j`` of the text sits at token ``j + 1``.
    """
    words = _clean_words(text)
    target = _clean_words(phrase)
    if not target:
        raise ValueError("empty attribute phrase")
    for s in range(len(words) - len(target) + 1):
        if words[s:s + len(target)] == target:
            return (s + 1, s + 1 + len(target))
    raise ValueError(f"phrase {phrase!r} does not occur in prompt {text!r}")


def encode_prompt(text: str, backend, attributes=()) -> tuple[PromptSpec, ConditioningBundle]:
    """Tokenize and embed ``text`` with the backend's text stack.

    The text must contain the placeholder exactly once; the returned bundle
    is unfused.
    """
    count = text.split().count(PLACEHOLDER)
    if count != 1:
        raise InvalidPromptError(
            f"prompt must contain {PLACEHOLDER} exactly once, found {count}: {text!r}"
        )
    token_ids = tuple(backend.tokenize(text))
    if len(token_ids) != len(text.split()) + 1:
        raise InvalidPromptError(
            "prompt words must map one-to-one onto tokens; "
            f"got {len(token_ids)} tokens for {len(text.split())} words: {text!r}"
        )
    placeholder_id = backend.placeholder_token_id
    placeholder_index = token_ids.index(placeholder_id)
    spec = PromptSpec(
        text=text,
        token_ids=token_ids,
        placeholder_index=placeholder_index,
        attributes=tuple(attributes),
    )
    return spec, bundle_from_spec(spec, backend)


def bundle_from_spec(spec: PromptSpec, backend) -> ConditioningBundle:
    """Embed an already tokenized prompt."""
    emb = backend.embed_tokens(spec.token_ids)
    return ConditioningBundle(
        embeddings=emb,
        identity_fused=False,
        placeholder_index=spec.placeholder_index,
        prompt=spec,
    )


def encode_identity(image: np.ndarray, backend) -> IdentityEmbedding:
    """Project a reference image into the text embedding space."""
    vector = backend.embed_identity(image)
    ref = hashlib.sha1(np.ascontiguousarray(image, dtype=np.float64).tobytes()).hexdigest()
    return IdentityEmbedding(vector=vector, source_ref=ref)


def fuse_identity(bundle: ConditioningBundle, identity: IdentityEmbedding) -> ConditioningBundle:
    """Replace the placeholder row with the identity vector.

    Fusing twice is a state error; all non-placeholder rows are preserved
    bit for bit.
    """
    if bundle.identity_fused:
        raise RuntimeError("bundle already carries a fused identity")
    if bundle.placeholder_index < 0:
        raise ValueError("bundle has no placeholder row to fuse into")
    if identity.vector.shape[0] != bundle.embeddings.shape[1]:
        raise ValueError(
            f"identity dim {identity.vector.shape[0]} != embedding dim {bundle.embeddings.shape[1]}"
        )
    rows = bundle.embeddings.copy()
    rows[bundle.placeholder_index] = identity.vector
    return ConditioningBundle(
        embeddings=rows,
        identity_fused=True,
        placeholder_index=bundle.placeholder_index,
        prompt=bundle.prompt,
    )


def strip_attributes(spec: PromptSpec, targets) -> PromptSpec:
    """Remove the named attributes' tokens, keeping everything else aligned.

    Returns a spec whose remaining attribute spans are re-indexed. Words are
    dropped from the text at the same positions, so re-encoding the result
    reproduces its token ids.
    """
    targets = list(targets)
    known = {a.attribute_id for a in spec.attributes}
    for t in targets:
        if t not in known:
            raise ValueError(f"unknown attribute {t!r}")
    removed = [a for a in spec.attributes if a.attribute_id in targets]
    kept = [a for a in spec.attributes if a.attribute_id not in targets]
    drop = sorted(i for a in removed for i in range(*a.token_span))

    def shifted(i: int) -> int:
        return i - sum(1 for d in drop if d < i)

    token_ids = tuple(tid for i, tid in enumerate(spec.token_ids) if i not in set(drop))
    # Token position j >= 1 corresponds to word j - 1 (position 0 is the
    # start token and has no surface form).
    words = spec.text.split()
    kept_words = [w for i, w in enumerate(words, start=1) if i not in set(drop)]
    text = " ".join(kept_words).rstrip(",")
    new_attrs = tuple(
        replace(a, token_span=(shifted(a.token_span[0]), shifted(a.token_span[1])))
        for a in kept
    )
    return PromptSpec(
        text=text,
        token_ids=token_ids,
        placeholder_index=shifted(spec.placeholder_index),
        attributes=new_attrs,
    )

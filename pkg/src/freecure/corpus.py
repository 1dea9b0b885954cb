"""Standard evaluation corpus: 20 attribute-editing prompts.

The corpus covers the five editable attribute categories in buckets of
8 one-attribute, 8 two-attribute, and 4 three-attribute prompts. Hair and
eyes localize well under a face parser; earrings and sunglasses rely on
attention maps alone; expressions are whole-face and take the abstract
(inversion) route.
"""
from __future__ import annotations

from dataclasses import dataclass

from .manifest import IdentityRef, ManifestAttribute, RunManifest

ATTRIBUTE_ROUTING = {
    "hair": ("localized", "parsing"),
    "eyes": ("localized", "parsing"),
    "expression": ("abstract", "attention_only"),
    "earrings": ("localized", "attention_only"),
    "sunglasses": ("localized", "attention_only"),
}


@dataclass(frozen=True)
class CorpusPrompt:
    """One corpus entry: prompt text plus its attribute phrases."""

    name: str
    text: str
    attributes: tuple

    @property
    def attribute_count(self) -> int:
        return len(self.attributes)


CORPUS = (
    # one attribute
    CorpusPrompt("run01", "a <S> with black curly hair", (("hair", "black curly hair"),)),
    CorpusPrompt("run02", "a <S> with blonde straight hair", (("hair", "blonde straight hair"),)),
    CorpusPrompt("run03", "a <S> with red long hair", (("hair", "red long hair"),)),
    CorpusPrompt("run04", "a <S> with green eyes", (("eyes", "green eyes"),)),
    CorpusPrompt("run05", "a <S> laughing happily", (("expression", "laughing happily"),)),
    CorpusPrompt("run06", "a <S> looking very angry", (("expression", "very angry"),)),
    CorpusPrompt("run07", "a <S> wearing silver earrings", (("earrings", "silver earrings"),)),
    CorpusPrompt("run08", "a <S> wearing sunglasses", (("sunglasses", "sunglasses"),)),
    # two attributes
    CorpusPrompt(
        "run09",
        "a <S> with black curly hair, laughing happily",
        (("hair", "black curly hair"), ("expression", "laughing happily")),
    ),
    CorpusPrompt(
        "run10",
        "a <S> with blonde long hair and blue eyes",
        (("hair", "blonde long hair"), ("eyes", "blue eyes")),
    ),
    CorpusPrompt(
        "run11",
        "a <S> with gray straight hair wearing gold earrings",
        (("hair", "gray straight hair"), ("earrings", "gold earrings")),
    ),
    CorpusPrompt(
        "run12",
        "a <S> with white hair wearing sunglasses",
        (("hair", "white hair"), ("sunglasses", "sunglasses")),
    ),
    CorpusPrompt(
        "run13",
        "a <S> with green eyes, smiling warmly",
        (("eyes", "green eyes"), ("expression", "smiling warmly")),
    ),
    CorpusPrompt(
        "run14",
        "a <S> with blue eyes wearing pearl earrings",
        (("eyes", "blue eyes"), ("earrings", "pearl earrings")),
    ),
    CorpusPrompt(
        "run15",
        "a <S> wearing silver earrings, frowning sadly",
        (("earrings", "silver earrings"), ("expression", "frowning sadly")),
    ),
    CorpusPrompt(
        "run16",
        "a <S> with brown curly hair looking unhappy",
        (("hair", "brown curly hair"), ("expression", "looking unhappy")),
    ),
    # three attributes
    CorpusPrompt(
        "run17",
        "a <S> with red curly hair and green eyes, laughing happily",
        (
            ("hair", "red curly hair"),
            ("eyes", "green eyes"),
            ("expression", "laughing happily"),
        ),
    ),
    CorpusPrompt(
        "run18",
        "a <S> with black long hair wearing gold earrings, smiling warmly",
        (
            ("hair", "black long hair"),
            ("earrings", "gold earrings"),
            ("expression", "smiling warmly"),
        ),
    ),
    CorpusPrompt(
        "run19",
        "a <S> with blonde straight hair and blue eyes wearing silver earrings",
        (
            ("hair", "blonde straight hair"),
            ("eyes", "blue eyes"),
            ("earrings", "silver earrings"),
        ),
    ),
    CorpusPrompt(
        "run20",
        "a <S> with brown straight hair wearing sunglasses, looking angry",
        (
            ("hair", "brown straight hair"),
            ("sunglasses", "sunglasses"),
            ("expression", "looking angry"),
        ),
    ),
)


def bucket_counts() -> dict:
    counts = {}
    for p in CORPUS:
        counts[p.attribute_count] = counts.get(p.attribute_count, 0) + 1
    return counts


def manifest_for(
    prompt: CorpusPrompt,
    identity: IdentityRef,
    seed: int,
    backend: str = "analytic",
    **overrides,
) -> RunManifest:
    """Build a run manifest for one corpus prompt."""
    attrs = []
    for attribute_id, phrase in prompt.attributes:
        route, mask_source = ATTRIBUTE_ROUTING[attribute_id]
        attrs.append(
            ManifestAttribute(
                attribute_id=attribute_id,
                route=route,
                mask_source=mask_source,
                phrase=phrase,
            )
        )
    return RunManifest(
        backend=backend,
        prompt=prompt.text,
        identity=identity,
        attributes=tuple(attrs),
        seed=seed,
        **overrides,
    )


def corpus_manifests(seed_base: int = 101, backend: str = "analytic", **overrides):
    """Manifests for the whole corpus, identities cycled over the seed bank.

    Returns (name, manifest) pairs in corpus order. Each run gets its own
    latent seed and a distinct synthetic identity whose baseline look (brown
    hair, neutral expression) differs from every prompt edit.
    """
    out = []
    for i, prompt in enumerate(CORPUS):
        identity = IdentityRef(
            kind="synthetic",
            identity_seed=(i * 5 + 3) % 16,
            attribute_values={"hair": "brown", "expression": "neutral"},
        )
        out.append(
            (prompt.name, manifest_for(prompt, identity, seed_base + i, backend, **overrides))
        )
    return out

"""Run manifests: the JSON surface that configures a pipeline run.

A manifest pins everything a run needs: backend, prompt, identity
reference, declared attributes, schedule length, injection and blending
steps, guidance, the inversion depth for abstract attributes, and the
seed. Loading is strict; malformed fields raise ManifestError naming the
offending path so CLI users get actionable messages.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

from .engine import BLEND_POINTS, RunConfig
from .errors import ManifestError
from .prompts import AttributeSpec, MASK_SOURCES, ROUTES, locate_phrase

MANIFEST_VERSION = 1

_TOP_KEYS = {
    "version",
    "backend",
    "prompt",
    "identity",
    "attributes",
    "T",
    "identity_injection_step",
    "blend_start_step",
    "blend_point",
    "guidance_scale",
    "gamma",
    "seed",
    "attn_fusion",
}

IDENTITY_KINDS = ("synthetic", "image")


@dataclass(frozen=True)
class IdentityRef:
    """Where the subject's reference appearance comes from."""

    kind: str
    identity_seed: int = 0
    attribute_values: tuple = ()
    path: str | None = None

    def __post_init__(self):
        if self.kind not in IDENTITY_KINDS:
            raise ValueError(f"identity kind must be one of {IDENTITY_KINDS}, got {self.kind!r}")
        vals = self.attribute_values
        if hasattr(vals, "items"):
            vals = tuple(sorted((str(k), str(v)) for k, v in vals.items()))
        else:
            vals = tuple((str(k), str(v)) for k, v in vals)
        object.__setattr__(self, "attribute_values", vals)
        if self.kind == "image" and not self.path:
            raise ValueError("image identity needs a path")

    def reference_image(self, backend):
        """Render or load the reference image this identity points at."""
        if self.kind == "synthetic":
            from .analytic import SyntheticFaceSpec

            spec = SyntheticFaceSpec(
                identity_seed=self.identity_seed,
                attribute_values=self.attribute_values,
            )
            return backend.render_target(spec)
        from .imageops import load_image

        return load_image(self.path)


@dataclass(frozen=True)
class ManifestAttribute:
    """Declared attribute: either an explicit token span or a phrase."""

    attribute_id: str
    route: str
    mask_source: str
    phrase: str | None = None
    token_span: tuple | None = None
    parser_labels: tuple = ()

    def __post_init__(self):
        if self.route not in ROUTES:
            raise ValueError(f"route must be one of {ROUTES}, got {self.route!r}")
        if self.mask_source not in MASK_SOURCES:
            raise ValueError(
                f"mask_source must be one of {MASK_SOURCES}, got {self.mask_source!r}"
            )
        if (self.phrase is None) == (self.token_span is None):
            raise ValueError(
                f"attribute {self.attribute_id!r} needs exactly one of phrase or token_span"
            )
        if self.token_span is not None:
            object.__setattr__(self, "token_span", (int(self.token_span[0]), int(self.token_span[1])))
        object.__setattr__(self, "parser_labels", tuple(int(v) for v in self.parser_labels))

    def to_spec(self, prompt_text: str) -> AttributeSpec:
        span = self.token_span
        label = self.phrase
        if span is None:
            span = locate_phrase(prompt_text, self.phrase)
        if label is None:
            words = prompt_text.split()
            label = " ".join(words[i - 1] for i in range(span[0], min(span[1], len(words) + 1)))
        return AttributeSpec(
            attribute_id=self.attribute_id,
            label=label,
            token_span=span,
            route=self.route,
            mask_source=self.mask_source,
            parser_labels=self.parser_labels,
        )


@dataclass(frozen=True)
class RunManifest:
    """Everything one enhancement run needs, as plain data."""

    backend: str
    prompt: str
    identity: IdentityRef
    attributes: tuple = ()
    step_count: int = 50
    identity_injection_step: int = 10
    blend_start_step: int | None = None
    blend_point: str = "post_cfg"
    guidance_scale: float = 1.0
    gamma: float = 0.45
    seed: int = 0
    attn_fusion: bool = True

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.blend_start_step is None:
            object.__setattr__(self, "blend_start_step", self.identity_injection_step)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        seen = set()
        for attr in self.attributes:
            if attr.attribute_id in seen:
                raise ValueError(f"duplicate attribute id {attr.attribute_id!r}")
            seen.add(attr.attribute_id)
        # Cross-field step checks are shared with the run engine.
        self.run_config()

    def run_config(self) -> RunConfig:
        return RunConfig(
            step_count=self.step_count,
            identity_injection_step=self.identity_injection_step,
            blend_start_step=self.blend_start_step,
            blend_point=self.blend_point,
            guidance_scale=self.guidance_scale,
            seed=self.seed,
        )

    def attribute_specs(self) -> tuple:
        return tuple(a.to_spec(self.prompt) for a in self.attributes)

    def with_overrides(self, **kwargs) -> "RunManifest":
        return replace(self, **kwargs)


_REQUIRED = object()


def _expect(data: dict, key: str, kinds, path: str, default=_REQUIRED):
    if key not in data:
        if default is _REQUIRED:
            raise ManifestError(f"{path}{key}", "missing required field")
        return default
    value = data[key]
    if kinds is bool:
        if not isinstance(value, bool):
            raise ManifestError(f"{path}{key}", f"expected a boolean, got {value!r}")
        return value
    if kinds is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ManifestError(f"{path}{key}", f"expected an integer, got {value!r}")
        return value
    if kinds is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ManifestError(f"{path}{key}", f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, kinds):
        raise ManifestError(f"{path}{key}", f"unexpected type {type(value).__name__}")
    return value


def _identity_from_dict(data, base_dir: str | None) -> IdentityRef:
    if not isinstance(data, dict):
        raise ManifestError("identity", f"expected an object, got {type(data).__name__}")
    kind = _expect(data, "kind", str, "identity.")
    if kind not in IDENTITY_KINDS:
        raise ManifestError("identity.kind", f"must be one of {list(IDENTITY_KINDS)}, got {kind!r}")
    unknown = set(data) - {"kind", "identity_seed", "attribute_values", "path"}
    if unknown:
        raise ManifestError("identity", f"unknown fields {sorted(unknown)}")
    seed = _expect(data, "identity_seed", int, "identity.", default=0)
    values = _expect(data, "attribute_values", dict, "identity.", default={})
    for k, v in values.items():
        if not isinstance(k, str) or not isinstance(v, str):
            raise ManifestError("identity.attribute_values", "keys and values must be strings")
    path = _expect(data, "path", str, "identity.", default=None)
    if path is not None and base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    try:
        return IdentityRef(kind=kind, identity_seed=seed, attribute_values=values, path=path)
    except ValueError as e:
        raise ManifestError("identity", str(e)) from e


def _attribute_from_dict(data, index: int) -> ManifestAttribute:
    path = f"attributes[{index}]"
    if not isinstance(data, dict):
        raise ManifestError(path, f"expected an object, got {type(data).__name__}")
    unknown = set(data) - {
        "attribute_id",
        "route",
        "mask_source",
        "phrase",
        "token_span",
        "parser_labels",
    }
    if unknown:
        raise ManifestError(path, f"unknown fields {sorted(unknown)}")
    attribute_id = _expect(data, "attribute_id", str, path + ".")
    route = _expect(data, "route", str, path + ".")
    mask_source = _expect(data, "mask_source", str, path + ".")
    phrase = _expect(data, "phrase", str, path + ".", default=None)
    span = _expect(data, "token_span", list, path + ".", default=None)
    if span is not None:
        if len(span) != 2 or any(isinstance(v, bool) or not isinstance(v, int) for v in span):
            raise ManifestError(path + ".token_span", f"expected [start, end] integers, got {span!r}")
        span = (span[0], span[1])
    labels = _expect(data, "parser_labels", list, path + ".", default=[])
    try:
        return ManifestAttribute(
            attribute_id=attribute_id,
            route=route,
            mask_source=mask_source,
            phrase=phrase,
            token_span=span,
            parser_labels=labels,
        )
    except (ValueError, TypeError) as e:
        raise ManifestError(path, str(e)) from e


def manifest_from_dict(data: dict, base_dir: str | None = None) -> RunManifest:
    """Validate a parsed JSON object into a RunManifest."""
    if not isinstance(data, dict):
        raise ManifestError("", f"manifest must be a JSON object, got {type(data).__name__}")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ManifestError("", f"unknown fields {sorted(unknown)}")
    version = _expect(data, "version", int, "", default=MANIFEST_VERSION)
    if version != MANIFEST_VERSION:
        raise ManifestError("version", f"unsupported manifest version {version}")
    backend = _expect(data, "backend", str, "")
    prompt = _expect(data, "prompt", str, "")
    identity = _identity_from_dict(_expect(data, "identity", dict, ""), base_dir)
    raw_attrs = _expect(data, "attributes", list, "", default=[])
    attributes = tuple(_attribute_from_dict(a, i) for i, a in enumerate(raw_attrs))
    step_count = _expect(data, "T", int, "", default=50)
    injection = _expect(data, "identity_injection_step", int, "", default=10)
    blend_start = data.get("blend_start_step", None)
    if blend_start is not None:
        blend_start = _expect(data, "blend_start_step", int, "")
    blend_point = _expect(data, "blend_point", str, "", default="post_cfg")
    if blend_point not in BLEND_POINTS:
        raise ManifestError("blend_point", f"must be one of {list(BLEND_POINTS)}, got {blend_point!r}")
    guidance = _expect(data, "guidance_scale", float, "", default=1.0)
    gamma = _expect(data, "gamma", float, "", default=0.45)
    seed = _expect(data, "seed", int, "", default=0)
    attn_fusion = _expect(data, "attn_fusion", bool, "", default=True)
    try:
        return RunManifest(
            backend=backend,
            prompt=prompt,
            identity=identity,
            attributes=attributes,
            step_count=step_count,
            identity_injection_step=injection,
            blend_start_step=blend_start,
            blend_point=blend_point,
            guidance_scale=guidance,
            gamma=gamma,
            seed=seed,
            attn_fusion=attn_fusion,
        )
    except ValueError as e:
        raise ManifestError("", str(e)) from e


def manifest_to_dict(manifest: RunManifest) -> dict:
    attrs = []
    for a in manifest.attributes:
        entry = {
            "attribute_id": a.attribute_id,
            "route": a.route,
            "mask_source": a.mask_source,
        }
        if a.phrase is not None:
            entry["phrase"] = a.phrase
        if a.token_span is not None:
            entry["token_span"] = list(a.token_span)
        if a.parser_labels:
            entry["parser_labels"] = list(a.parser_labels)
        attrs.append(entry)
    identity = {"kind": manifest.identity.kind}
    if manifest.identity.kind == "synthetic":
        identity["identity_seed"] = manifest.identity.identity_seed
        identity["attribute_values"] = dict(manifest.identity.attribute_values)
    else:
        identity["path"] = manifest.identity.path
    return {
        "version": MANIFEST_VERSION,
        "backend": manifest.backend,
        "prompt": manifest.prompt,
        "identity": identity,
        "attributes": attrs,
        "T": manifest.step_count,
        "identity_injection_step": manifest.identity_injection_step,
        "blend_start_step": manifest.blend_start_step,
        "blend_point": manifest.blend_point,
        "guidance_scale": manifest.guidance_scale,
        "gamma": manifest.gamma,
        "seed": manifest.seed,
        "attn_fusion": manifest.attn_fusion,
    }


def load_manifest(path: str) -> RunManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ManifestError(str(path), f"cannot read manifest: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(str(path), f"invalid JSON: {e}") from e
    return manifest_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: RunManifest, path: str) -> None:
    payload = json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload + "\n")

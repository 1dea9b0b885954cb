"""Closed-form desk-scale backend with a synthetic face world.

Everything here is deterministic and cheap enough for exact tests: faces
are flat-shaded region layouts on a 64x64 canvas, the text stack hashes
words to embedding rows, identity conditioning is an invertible linear
projection of region statistics, and the noise predictor is an affine
function of the latent whose fixed point is the render implied by the
conditioning. Cross-attention is synthesized from the same region
geometry, and identity influence on the render is routed through the
up-block attention map so that attention edits have a visible causal
effect.

The noise predictor keeps a small fraction of the latent deviation from
its render at every step (``DEVIATION_RETENTION``). This makes each
denoising step an exactly invertible affine map, so inversion round trips
reconstruct their input, while full-length runs still converge to the
render to well under one 8-bit step.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace as dataclass_replace

import numpy as np

from .attention import AttentionRecord
from .backend import (
    BackendAdapter,
    BackendCapabilities,
    register_backend,
    register_parser,
)
from .masks import ParsingMap

CANVAS = 64
LATENT_SHAPE = (12, 32, 32)
EMBED_DIM = 32
TOKEN_LIMIT = 77

BOS_TOKEN_ID = 0
PLACEHOLDER_TOKEN_ID = 1

# Fraction of the latent's deviation from its render that survives one
# full denoising pass; keeps the step map invertible.
DEVIATION_RETENTION = 1e-5

# ---------------------------------------------------------------------------
# canvas geometry; every bound is a multiple of 4 so region edges stay
# crisp at the attention resolutions and on the latent grid


def _rect(rows, cols):
    m = np.zeros((CANVAS, CANVAS), dtype=bool)
    m[rows[0]:rows[1], cols[0]:cols[1]] = True
    return m


HEAD = _rect((8, 56), (16, 48))
HAIR = _rect((8, 20), (16, 48)) | _rect((20, 44), (16, 20)) | _rect((20, 44), (44, 48))
FACE = _rect((20, 56), (20, 44))
EYE_LEFT = _rect((24, 28), (24, 28))
EYE_RIGHT = _rect((24, 28), (36, 40))
EYES = EYE_LEFT | EYE_RIGHT
MOUTH = _rect((44, 48), (28, 36))
EARRING_LEFT = _rect((44, 48), (16, 20))
EARRING_RIGHT = _rect((44, 48), (44, 48))
EARRINGS_REGION = EARRING_LEFT | EARRING_RIGHT
SUNGLASSES_REGION = _rect((24, 32), (20, 44))

ATTRIBUTE_REGIONS = {
    "hair": HAIR,
    "eyes": EYES,
    "expression": MOUTH,
    "earrings": EARRINGS_REGION,
    "sunglasses": SUNGLASSES_REGION,
}

_ROWS, _COLS = np.meshgrid(np.arange(CANVAS), np.arange(CANVAS), indexing="ij")
HAIR_PATTERNS = {
    "curly": ((_ROWS // 2 + _COLS // 2) % 2) == 0,
    "straight": ((_COLS // 2) % 2) == 0,
    "long": ((_ROWS // 2) % 2) == 0,
}

# ---------------------------------------------------------------------------
# palettes

BACKGROUND = (0.84, 0.88, 0.92)
SUNGLASSES_COLOR = (0.09, 0.09, 0.12)
DEFAULT_SKIN = (0.97, 0.82, 0.69)

HAIR_COLORS = {
    "black": (0.05, 0.05, 0.06),
    "brown": (0.36, 0.24, 0.12),
    "blonde": (0.87, 0.74, 0.40),
    "red": (0.60, 0.13, 0.09),
    "white": (0.92, 0.92, 0.90),
    "gray": (0.55, 0.55, 0.56),
}
HAIR_STYLE_STEPS = {"curly": 0.15, "straight": 0.09, "long": 0.05}

EYE_COLORS = {
    "brown": (0.33, 0.21, 0.11),
    "blue": (0.18, 0.35, 0.76),
    "green": (0.17, 0.55, 0.24),
    "gray": (0.55, 0.56, 0.58),
}

EXPRESSIONS = {
    "neutral": (0.52, 0.29, 0.27),
    "laughing": (0.91, 0.42, 0.34),
    "smiling": (0.80, 0.55, 0.50),
    "angry": (0.58, 0.08, 0.07),
    "frowning": (0.33, 0.17, 0.21),
    "unhappy": (0.42, 0.26, 0.20),
}

EARRING_COLORS = {
    "silver": (0.76, 0.77, 0.80),
    "pearl": (0.93, 0.91, 0.86),
    "gold": (0.86, 0.70, 0.24),
}

SKIN_TONES = tuple(
    (
        round(0.50 + 0.028 * i, 3),
        round(0.32 + 0.021 * ((i * 7) % 16), 3),
        round(0.22 + 0.024 * ((i * 11) % 16), 3),
    )
    for i in range(16)
)


# ---------------------------------------------------------------------------
# face model


@dataclass(frozen=True)
class ResolvedFace:
    """Fully determined appearance ready to paint."""

    skin: tuple
    hair_color: str = "brown"
    hair_styles: frozenset = frozenset()
    eye_color: str = "brown"
    expression: str = "neutral"
    earrings: str | None = None
    sunglasses: bool = False


DEFAULT_FACE = ResolvedFace(skin=DEFAULT_SKIN)


@dataclass(frozen=True)
class SyntheticFaceSpec:
    """Seeded identity plus the attribute values its face exhibits."""

    identity_seed: int
    attribute_values: tuple = ()

    def __post_init__(self):
        vals = self.attribute_values
        if hasattr(vals, "items"):
            vals = tuple(sorted(vals.items()))
        else:
            vals = tuple((str(k), str(v)) for k, v in vals)
        for key, _ in vals:
            if key not in ATTRIBUTE_REGIONS:
                raise ValueError(f"unknown attribute category {key!r}")
        object.__setattr__(self, "attribute_values", vals)
        object.__setattr__(self, "identity_seed", int(self.identity_seed))

    def values_dict(self) -> dict:
        return dict(self.attribute_values)


def parse_attribute_value(category: str, text: str):
    """Map an attribute phrase onto a canonical renderable value.

    Filler words are ignored; a phrase with no recognized value word is an
    error.
    """
    words = [w.strip(",").lower() for w in str(text).split()]
    if category == "hair":
        colors = [w for w in words if w in HAIR_COLORS]
        styles = frozenset(w for w in words if w in HAIR_STYLE_STEPS)
        if len(colors) != 1:
            raise ValueError(f"unknown attribute value for hair: {text!r}")
        return colors[0], styles
    if category == "eyes":
        colors = [w for w in words if w in EYE_COLORS]
        if len(colors) != 1:
            raise ValueError(f"unknown attribute value for eyes: {text!r}")
        return colors[0]
    if category == "expression":
        found = [w for w in words if w in EXPRESSIONS]
        if len(found) != 1:
            raise ValueError(f"unknown attribute value for expression: {text!r}")
        return found[0]
    if category == "earrings":
        if words == ["none"]:
            return None
        found = [w for w in words if w in EARRING_COLORS]
        if len(found) != 1:
            raise ValueError(f"unknown attribute value for earrings: {text!r}")
        return found[0]
    if category == "sunglasses":
        if "none" in words:
            return False
        if "sunglasses" in words or "on" in words:
            return True
        raise ValueError(f"unknown attribute value for sunglasses: {text!r}")
    raise ValueError(f"unknown attribute category {category!r}")


def _apply_attribute(face: ResolvedFace, category: str, text: str) -> ResolvedFace:
    value = parse_attribute_value(category, text)
    if category == "hair":
        color, styles = value
        return dataclass_replace(face, hair_color=color, hair_styles=styles)
    if category == "eyes":
        return dataclass_replace(face, eye_color=value)
    if category == "expression":
        return dataclass_replace(face, expression=value)
    if category == "earrings":
        return dataclass_replace(face, earrings=value)
    return dataclass_replace(face, sunglasses=bool(value))


def resolve_face(spec: SyntheticFaceSpec) -> ResolvedFace:
    """Turn an identity spec into a concrete appearance."""
    face = dataclass_replace(DEFAULT_FACE, skin=SKIN_TONES[spec.identity_seed % len(SKIN_TONES)])
    for category, text in spec.attribute_values:
        face = _apply_attribute(face, category, text)
    return face


def _hair_layer(color: str, styles) -> np.ndarray:
    layer = np.empty((CANVAS, CANVAS, 3), dtype=np.float64)
    layer[:] = HAIR_COLORS[color]
    for style in sorted(styles):
        layer[HAIR_PATTERNS[style]] += HAIR_STYLE_STEPS[style]
    np.clip(layer, 0.0, 1.0, out=layer)
    return layer


def render_face(face: ResolvedFace) -> np.ndarray:
    """Paint a resolved face. Pure and deterministic."""
    img = np.empty((CANVAS, CANVAS, 3), dtype=np.float64)
    img[:] = BACKGROUND
    img[HAIR] = _hair_layer(face.hair_color, face.hair_styles)[HAIR]
    img[FACE] = face.skin
    img[EYES] = EYE_COLORS[face.eye_color]
    img[MOUTH] = EXPRESSIONS[face.expression]
    if face.earrings is not None:
        img[EARRINGS_REGION] = EARRING_COLORS[face.earrings]
    if face.sunglasses:
        img[SUNGLASSES_REGION] = SUNGLASSES_COLOR
    return img


# ---------------------------------------------------------------------------
# identity features: window means are linear in the image, so an all-zero
# image maps to the zero feature

FEATURE_WINDOWS = (
    ("skin", (36, 40), (20, 28)),
    ("hair", (8, 20), (16, 48)),
    ("eye", (24, 28), (24, 28)),
    ("mouth", (44, 48), (28, 36)),
    ("earring", (44, 48), (16, 20)),
    ("bridge", (28, 32), (30, 34)),
)


def _window_means(image: np.ndarray) -> dict:
    out = {}
    for name, rows, cols in FEATURE_WINDOWS:
        out[name] = image[rows[0]:rows[1], cols[0]:cols[1]].reshape(-1, 3).mean(axis=0)
    return out


def image_feature(image: np.ndarray) -> np.ndarray:
    """18 informative dims (6 windows x RGB) zero-padded to the embed width."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != (CANVAS, CANVAS, 3):
        raise ValueError(f"expected a ({CANVAS}, {CANVAS}, 3) image, got {image.shape}")
    f = np.zeros(EMBED_DIM, dtype=np.float64)
    means = _window_means(image)
    for k, (name, _, _) in enumerate(FEATURE_WINDOWS):
        f[3 * k: 3 * k + 3] = means[name]
    return f


def _nearest(mean: np.ndarray, candidates: dict):
    keys = list(candidates)
    dists = [float(np.sum((mean - np.asarray(candidates[k])) ** 2)) for k in keys]
    return keys[int(np.argmin(dists))]


class _HairTable:
    """Expected hair-window means for every (color, style set) combination."""

    def __init__(self):
        window = next(w for w in FEATURE_WINDOWS if w[0] == "hair")
        _, rows, cols = window
        self.table = {}
        style_names = list(HAIR_STYLE_STEPS)
        for color in HAIR_COLORS:
            for bits in range(2 ** len(style_names)):
                styles = frozenset(s for j, s in enumerate(style_names) if bits >> j & 1)
                layer = _hair_layer(color, styles)
                mean = layer[rows[0]:rows[1], cols[0]:cols[1]].reshape(-1, 3).mean(axis=0)
                self.table[(color, styles)] = mean

    def nearest(self, mean: np.ndarray):
        return _nearest(mean, self.table)


_HAIR_TABLE = _HairTable()


def face_from_windows(means: dict) -> ResolvedFace:
    """Recover a face description from its window statistics."""
    skin_candidates = {t: t for t in SKIN_TONES}
    skin_candidates[DEFAULT_SKIN] = DEFAULT_SKIN
    skin = _nearest(means["skin"], skin_candidates)
    sunglasses = _nearest(means["bridge"], {True: SUNGLASSES_COLOR, False: skin})
    if sunglasses:
        eye_color = "brown"
    else:
        eye_color = _nearest(means["eye"], EYE_COLORS)
    hair_color, hair_styles = _HAIR_TABLE.nearest(means["hair"])
    expression = _nearest(means["mouth"], EXPRESSIONS)
    ear_candidates = {None: BACKGROUND}
    ear_candidates.update(EARRING_COLORS)
    earrings = _nearest(means["earring"], ear_candidates)
    return ResolvedFace(
        skin=skin,
        hair_color=hair_color,
        hair_styles=hair_styles,
        eye_color=eye_color,
        expression=expression,
        earrings=earrings,
        sunglasses=bool(sunglasses),
    )


def describe_image(image: np.ndarray) -> ResolvedFace:
    """Read a rendered (or generated) canvas back into a face description."""
    return face_from_windows(_window_means(np.asarray(image, dtype=np.float64)))


# ---------------------------------------------------------------------------
# synthetic cross-attention profiles

HEAD_SCALES = (1.0, 0.9)
AMP_SINK = 5.0
AMP_SUBJECT = 1.0
AMP_IDENTITY = 4.0
AMP_ATTRIBUTE = 1.6
FUSED_ATTRIBUTE_FACTOR = 0.3


@dataclass(frozen=True)
class AttnLayer:
    block_group: str
    layer_id: int
    resolution: int


LAYERS = (
    AttnLayer("down", 0, 16),
    AttnLayer("down", 1, 8),
    AttnLayer("mid", 2, 8),
    AttnLayer("up", 3, 32),
)
UP_LAYER = LAYERS[3]


def _region_at(mask: np.ndarray, res: int) -> np.ndarray:
    f = CANVAS // res
    return mask.astype(np.float64).reshape(res, f, res, f).mean(axis=(1, 3))


def _word_token_id(word: str) -> int:
    if word == "<s>":
        return PLACEHOLDER_TOKEN_ID
    h = int.from_bytes(hashlib.sha1(word.encode("utf-8")).digest()[:4], "little")
    return 16 + h % (2**31 - 16)


def _token_vector(token_id: int) -> np.ndarray:
    return np.random.default_rng(token_id).standard_normal(EMBED_DIM)


class AnalyticBackend(BackendAdapter):
    """Backend whose denoiser is an affine contraction toward a render."""

    def __init__(self):
        self._capabilities = BackendCapabilities(
            latent_shape=LATENT_SHAPE,
            embedding_dim=EMBED_DIM,
            token_limit=TOKEN_LIMIT,
            supports_attention_capture=True,
        )
        self._vocab = {BOS_TOKEN_ID: "", PLACEHOLDER_TOKEN_ID: "<s>"}
        rng = np.random.default_rng(727)
        self._proj_w = rng.standard_normal((EMBED_DIM, EMBED_DIM))
        self._proj_b = rng.standard_normal(EMBED_DIM)
        self._proj_w_inv = np.linalg.inv(self._proj_w)
        self._profile_cache = {}
        self._target_cache = {}
        self._face_cache = {}
        self._identity_cache = {}
        self._null = None
        self._head_flat_up = _region_at(HEAD, UP_LAYER.resolution).ravel() > 0.5
        col = _region_at(HEAD, UP_LAYER.resolution).ravel()
        fused_ref = np.stack([s * (AMP_IDENTITY * col) for s in HEAD_SCALES])
        subject_ref = np.stack([s * (AMP_SUBJECT * col) for s in HEAD_SCALES])
        self._id_mean_fused = float(fused_ref[:, self._head_flat_up].mean())
        self._id_mean_subject = float(subject_ref[:, self._head_flat_up].mean())

    # -- capabilities -------------------------------------------------------

    @property
    def capabilities(self) -> BackendCapabilities:
        return self._capabilities

    @property
    def placeholder_token_id(self) -> int:
        return PLACEHOLDER_TOKEN_ID

    # -- text stack ---------------------------------------------------------

    def tokenize(self, text: str) -> list:
        words = [w.strip(",").lower() for w in text.split()]
        words = [w for w in words if w]
        ids = [BOS_TOKEN_ID]
        for w in words:
            tid = _word_token_id(w)
            self._vocab[tid] = w
            ids.append(tid)
        if len(ids) > TOKEN_LIMIT:
            raise ValueError(f"prompt exceeds the {TOKEN_LIMIT} token limit")
        return ids

    def token_word(self, token_id: int) -> str:
        return self._vocab.get(int(token_id), "")

    def embed_tokens(self, token_ids) -> np.ndarray:
        return np.stack([_token_vector(int(t)) for t in token_ids])

    def null_conditioning(self):
        from .prompts import ConditioningBundle

        if self._null is None:
            self._null = ConditioningBundle(
                embeddings=self.embed_tokens([BOS_TOKEN_ID]),
                identity_fused=False,
                placeholder_index=-1,
                prompt=None,
            )
        return self._null

    # -- identity stack -----------------------------------------------------

    def embed_identity(self, image: np.ndarray) -> np.ndarray:
        return self._proj_w @ image_feature(image) + self._proj_b

    def decode_identity(self, vector: np.ndarray) -> ResolvedFace:
        """Invert the projector and read the face out of the feature."""
        vector = np.asarray(vector, dtype=np.float64)
        key = vector.tobytes()
        if key not in self._identity_cache:
            f = self._proj_w_inv @ (vector - self._proj_b)
            means = {
                name: f[3 * k: 3 * k + 3]
                for k, (name, _, _) in enumerate(FEATURE_WINDOWS)
            }
            self._identity_cache[key] = face_from_windows(means)
        return self._identity_cache[key]

    # -- renders ------------------------------------------------------------

    def _prompt_face(self, cond) -> ResolvedFace:
        face = DEFAULT_FACE
        if cond.prompt is not None:
            for attr in cond.prompt.attributes:
                words = [self.token_word(cond.prompt.token_ids[i]) for i in range(*attr.token_span)]
                face = _apply_attribute(face, attr.attribute_id, " ".join(words))
        return face

    def _faces(self, cond):
        key = cond.cache_key
        if key not in self._face_cache:
            prompt_face = self._prompt_face(cond)
            identity_face = None
            if cond.identity_fused:
                identity_face = self.decode_identity(cond.embeddings[cond.placeholder_index])
            self._face_cache[key] = (prompt_face, identity_face)
        return self._face_cache[key]

    def render_target(self, cond) -> np.ndarray:
        """Render the conditioning's fixed point.

        With a fused identity the reference appearance overrides the prompt
        attributes wholesale, mirroring how personalized models erode
        prompt control over the face.
        """
        if isinstance(cond, SyntheticFaceSpec):
            return render_face(resolve_face(cond))
        prompt_face, identity_face = self._faces(cond)
        return render_face(identity_face if cond.identity_fused else prompt_face)

    def _target_latent(self, cond, w: float) -> np.ndarray:
        key = (cond.cache_key, float(w))
        if key not in self._target_cache:
            prompt_face, identity_face = self._faces(cond)
            if not cond.identity_fused:
                img = render_face(prompt_face)
            else:
                img = (1.0 - w) * render_face(prompt_face) + w * render_face(identity_face)
            self._target_cache[key] = self.encode_image(img)
        return self._target_cache[key]

    # -- attention ----------------------------------------------------------

    def _profile(self, cond, layer: AttnLayer) -> np.ndarray:
        """Pre-softmax logits [heads, res^2, tokens] for one layer."""
        key = (cond.cache_key, layer.layer_id)
        if key not in self._profile_cache:
            n_tokens = cond.embeddings.shape[0]
            res = layer.resolution
            base = np.zeros((res * res, n_tokens), dtype=np.float64)
            base[:, 0] = AMP_SINK  # start token anchors the softmax floor
            if cond.placeholder_index >= 0:
                amp = AMP_IDENTITY if cond.identity_fused else AMP_SUBJECT
                base[:, cond.placeholder_index] = amp * _region_at(HEAD, res).ravel()
            if cond.prompt is not None:
                amp = AMP_ATTRIBUTE * (FUSED_ATTRIBUTE_FACTOR if cond.identity_fused else 1.0)
                for attr in cond.prompt.attributes:
                    region = amp * _region_at(ATTRIBUTE_REGIONS[attr.attribute_id], res).ravel()
                    for col in range(*attr.token_span):
                        base[:, col] = region
            scores = np.stack([s * base for s in HEAD_SCALES])
            scores.setflags(write=False)
            self._profile_cache[key] = scores
        return self._profile_cache[key]

    def synth_attention(self, cond, token_index: int, resolution: tuple) -> np.ndarray:
        """Softmaxed spatial map of one token column at the up block."""
        from .attention import _softmax_tokens
        from .imageops import bilinear_resize

        scores = self._profile(cond, UP_LAYER)
        if not 0 <= token_index < scores.shape[2]:
            raise ValueError(f"token index {token_index} outside token axis")
        probs = _softmax_tokens(np.asarray(scores))
        res = UP_LAYER.resolution
        flat = probs[:, :, token_index].mean(axis=0).reshape(res, res)
        return np.clip(bilinear_resize(flat, tuple(resolution)), 0.0, 1.0)

    # -- denoiser -----------------------------------------------------------

    def predict_noise(self, state, cond, sched, capture=None) -> np.ndarray:
        z = state.z
        if z.shape != self._capabilities.latent_shape:
            raise ValueError(
                f"latent shape {z.shape} does not match backend {self._capabilities.latent_shape}"
            )
        up_scores = None
        if capture is not None:
            for layer in LAYERS:
                scores = self._profile(cond, layer)
                if capture.edit is not None and layer.block_group in capture.edit.block_groups:
                    scores = capture.edit.apply(
                        layer.block_group, layer.layer_id, state.t, scores
                    )
                if capture.wants(layer.block_group):
                    capture.add(
                        AttentionRecord(layer.block_group, layer.layer_id, state.t, scores)
                    )
                if layer.block_group == "up":
                    up_scores = np.asarray(scores)
        w = 1.0
        if cond.identity_fused:
            if up_scores is None:
                up_scores = np.asarray(self._profile(cond, UP_LAYER))
            m = float(up_scores[:, self._head_flat_up, cond.placeholder_index].mean())
            g = (m - self._id_mean_subject) / (self._id_mean_fused - self._id_mean_subject)
            w = min(max(g, 0.0), 1.0)
        target = self._target_latent(cond, w)
        ab = sched.alpha_bar_at(state.t)
        psi = DEVIATION_RETENTION * math.sqrt(ab) + math.sqrt(1.0 - ab)
        return (z - math.sqrt(ab) * target) / psi

    # -- latent codec -------------------------------------------------------

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """Space-to-depth affine map; exact inverse of :meth:`decode_latent`."""
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (CANVAS, CANVAS, 3):
            raise ValueError(f"expected a ({CANVAS}, {CANVAS}, 3) image, got {image.shape}")
        z = 2.0 * image - 1.0
        c, h, w = LATENT_SHAPE
        return z.reshape(h, 2, w, 2, 3).transpose(4, 1, 3, 0, 2).reshape(c, h, w)

    def decode_latent(self, z0: np.ndarray) -> np.ndarray:
        z0 = np.asarray(z0, dtype=np.float64)
        if z0.shape != LATENT_SHAPE:
            raise ValueError(f"expected latent shape {LATENT_SHAPE}, got {z0.shape}")
        c, h, w = LATENT_SHAPE
        img = z0.reshape(3, 2, 2, h, w).transpose(3, 1, 4, 2, 0).reshape(CANVAS, CANVAS, 3)
        return (img + 1.0) / 2.0


# ---------------------------------------------------------------------------
# synthetic face parser

LABEL_NAMES = {
    0: "background",
    1: "skin",
    2: "hair",
    3: "eyes",
    4: "mouth",
    5: "earrings",
    6: "sunglasses",
}

DEFAULT_LABEL_TABLE = {
    "hair": (2,),
    "eyes": (3,),
    "expression": (4,),
    "earrings": (5,),
    "sunglasses": (6,),
}

_PARSE_TOLERANCE = 0.02


class SyntheticParser:
    """Reads region labels back off a rendered canvas.

    Fixed geometry carries the always-present parts; accessories are
    labelled only when their pixels actually match an accessory color.
    """

    def parse(self, image: np.ndarray) -> ParsingMap:
        image = np.asarray(image, dtype=np.float64)
        if image.shape != (CANVAS, CANVAS, 3):
            raise ValueError(f"expected a ({CANVAS}, {CANVAS}, 3) image, got {image.shape}")
        labels = np.zeros((CANVAS, CANVAS), dtype=np.int64)
        labels[HAIR] = 2
        labels[FACE] = 1
        labels[EYES] = 3
        labels[MOUTH] = 4
        ear_mean = image[EARRING_LEFT].mean(axis=0)
        for color in EARRING_COLORS.values():
            if np.abs(ear_mean - np.asarray(color)).max() < _PARSE_TOLERANCE:
                labels[EARRINGS_REGION] = 5
                break
        bridge = image[28:32, 30:34].reshape(-1, 3).mean(axis=0)
        if np.abs(bridge - np.asarray(SUNGLASSES_COLOR)).max() < _PARSE_TOLERANCE:
            labels[SUNGLASSES_REGION] = 6
        return ParsingMap(labels=labels, label_table=DEFAULT_LABEL_TABLE)


# ---------------------------------------------------------------------------
# toy scoring adapters


def _scorer_word_vector(word: str) -> np.ndarray:
    v = np.random.default_rng(_word_token_id(word) + 7_777_777).standard_normal(EMBED_DIM)
    return v / np.linalg.norm(v)


def caption_words(face: ResolvedFace) -> list:
    words = [face.hair_color, *sorted(face.hair_styles), "hair"]
    words += [face.eye_color, "eyes", face.expression]
    if face.earrings is not None:
        words += [face.earrings, "earrings"]
    if face.sunglasses:
        words.append("sunglasses")
    return words


class ToyCaptionScorer:
    """Bag-of-words text/image embedder over the synthetic vocabulary."""

    def embed_text(self, text: str) -> np.ndarray:
        words = [w.strip(",").lower() for w in text.split() if w.strip(",")]
        if not words:
            return np.zeros(EMBED_DIM)
        v = np.sum([_scorer_word_vector(w) for w in words], axis=0)
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        face = describe_image(image)
        return self.embed_text(" ".join(caption_words(face)))


class ToyFaceDetector:
    """Whole-canvas detector; featureless images count as face-free."""

    def detect(self, image: np.ndarray):
        image = np.asarray(image, dtype=np.float64)
        if float(image.std()) < 0.02:
            return None
        return image


class ToyFaceEmbedder:
    """Identity embedding from the cheek skin patch."""

    def embed(self, image: np.ndarray) -> np.ndarray:
        means = _window_means(np.asarray(image, dtype=np.float64))
        v = means["skin"]
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


class ToyPerceptualDistance:
    """Mean absolute pixel difference."""

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
        return float(np.mean(np.abs(a - b)))


register_backend("analytic", AnalyticBackend)
register_parser("analytic", SyntheticParser)

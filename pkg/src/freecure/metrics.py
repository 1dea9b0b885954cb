"""Evaluation metrics and their aggregation.

The metric functions take adapter objects (caption scorer, face detector,
face embedder) rather than models, so the same harness drives both the
analytic toys and real checkpoints. All scores follow the common
similarity conventions: prompt consistency and identity fidelity are
100 * cosine, face diversity is the mean pairwise 100 * (1 - cosine) over
a seeded sample. Identity fidelity degrades to None when either image has
no detectable face; aggregation then skips the run and reports the gap.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero vectors compare as 0."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def prompt_consistency(image: np.ndarray, prompt_text: str, scorer) -> float:
    """How well an image matches its prompt, as 100 * cosine."""
    return 100.0 * cosine(scorer.embed_image(image), scorer.embed_text(prompt_text))


def identity_fidelity(image: np.ndarray, reference: np.ndarray, detector, embedder):
    """Face similarity between an output and its reference.

    Returns None when the detector finds no face in either image, so
    callers can tell "no face" apart from "dissimilar face".
    """
    face = detector.detect(image)
    ref_face = detector.detect(reference)
    if face is None or ref_face is None:
        return None
    return 100.0 * cosine(embedder.embed(face), embedder.embed(ref_face))


def face_diversity(
    named_images,
    detector,
    embedder,
    sample_size: int = 5,
    seed: int = 0,
):
    """Mean pairwise face distance over a seeded sample of images.

    Args:
        named_images: iterable of (name, image); names give the canonical
            order so the sample does not depend on iteration order.
        detector: face detector adapter.
        embedder: face embedder adapter.
        sample_size: how many images to sample without replacement.
        seed: sampling seed.

    Returns:
        100 * (1 - cosine) averaged over all sampled pairs with detected
        faces, or None when fewer than two faces were found.
    """
    items = sorted(named_images, key=lambda kv: kv[0])
    if sample_size < 2:
        raise ValueError("sample_size must be at least 2")
    rng = np.random.default_rng(seed)
    if len(items) > sample_size:
        idx = rng.choice(len(items), size=sample_size, replace=False)
        items = [items[i] for i in sorted(idx)]
    vectors = []
    for _, image in items:
        face = detector.detect(image)
        if face is None:
            continue
        vectors.append(embedder.embed(face))
    if len(vectors) < 2:
        return None
    dists = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            dists.append(100.0 * (1.0 - cosine(vectors[i], vectors[j])))
    return float(np.mean(dists))


@dataclass(frozen=True)
class MetricsReport:
    """Aggregated scores for one method over one corpus."""

    pc: float | None = None
    if_score: float | None = None
    face_div: float | None = None
    pc_times_if: float | None = None
    deltas: dict = field(default_factory=dict)
    missing_faces: int = 0


def composite_and_deltas(baseline: MetricsReport, enhanced: MetricsReport):
    """Attach the PC x IF composite and relative deltas.

    The composite is pc * if / 100 rounded to two decimals; deltas are
    percent changes of the enhanced method over the baseline, also rounded
    to two decimals. The composite's delta is computed from the unrounded
    products so rounding noise does not leak into the ratio.
    """

    def raw_composite(r: MetricsReport):
        if r.pc is None or r.if_score is None:
            return None
        return r.pc * r.if_score / 100.0

    raw_b = raw_composite(baseline)
    raw_e = raw_composite(enhanced)
    deltas = {}
    for name in ("pc", "if_score", "face_div"):
        b = getattr(baseline, name)
        e = getattr(enhanced, name)
        if b is not None and e is not None and b != 0.0:
            deltas[name] = round(100.0 * (e - b) / b, 2)
    if raw_b is not None and raw_e is not None and raw_b != 0.0:
        deltas["pc_times_if"] = round(100.0 * (raw_e - raw_b) / raw_b, 2)
    out_b = replace(baseline, pc_times_if=None if raw_b is None else round(raw_b, 2))
    out_e = replace(
        enhanced,
        pc_times_if=None if raw_e is None else round(raw_e, 2),
        deltas=deltas,
    )
    return out_b, out_e


@dataclass(frozen=True)
class RunMetrics:
    """Per-run scores used by the grouped summary."""

    name: str
    attribute_count: int
    pc: float | None = None
    if_score: float | None = None


def _mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.mean(values))


def grouped_summary(runs, buckets=(1, 2, 3)) -> dict:
    """Bucket per-run scores by attribute count.

    Returns a dict with one row per bucket plus an overall row; each row
    carries the run count, mean scores, and how many runs lacked a face.
    Empty buckets produce a notice instead of failing.
    """
    runs = list(runs)

    def row(selected):
        return {
            "count": len(selected),
            "pc": _mean([r.pc for r in selected]),
            "if_score": _mean([r.if_score for r in selected]),
            "missing_faces": sum(1 for r in selected if r.if_score is None),
        }

    out = {"buckets": {}, "overall": row(runs), "notices": []}
    for b in buckets:
        selected = [r for r in runs if r.attribute_count == b]
        out["buckets"][int(b)] = row(selected)
        if not selected:
            out["notices"].append(f"no runs with {b} attribute(s)")
    return out


def format_metric(value, digits: int = 2) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


def render_report_text(pairs) -> str:
    """Fixed-width key/value block; values already formatted."""
    pairs = list(pairs)
    width = max((len(k) for k, _ in pairs), default=0)
    lines = [f"{k.ljust(width)}  {v}" for k, v in pairs]
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)

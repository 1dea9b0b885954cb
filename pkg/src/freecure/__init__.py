"""Training-free enhancement of personalized diffusion runs.

The package pairs a foundation denoising branch with a personalized one,
extracts spatially aligned masks for the attributes the personalized
model tends to drop, blends foundation noise into the masked regions, and
recovers non-spatial attributes through partial inversion. A closed-form
analytic backend makes the whole pipeline exactly testable at desk scale.
"""
from .analytic import (
    AnalyticBackend,
    SyntheticFaceSpec,
    SyntheticParser,
    ToyCaptionScorer,
    ToyFaceDetector,
    ToyFaceEmbedder,
    ToyPerceptualDistance,
    render_face,
    resolve_face,
)
from .attention import (
    AttentionRecord,
    CaptureSession,
    IdentityAttentionEdit,
    aggregate_attribute_map,
    interpolate_identity_attention,
    normalize_map,
)
from .backend import (
    BackendAdapter,
    BackendCapabilities,
    ENV_BACKEND_PATH,
    get_backend,
    get_parser,
    register_backend,
    register_parser,
)
from .engine import RunConfig, RunResult, run_blended_pair, run_fd, run_pd
from .errors import (
    CapabilityError,
    FreecureError,
    InvalidPromptError,
    ManifestError,
    NoRecordsError,
    StageError,
    TensorFormatError,
)
from .manifest import (
    IdentityRef,
    ManifestAttribute,
    RunManifest,
    load_manifest,
    manifest_from_dict,
    manifest_to_dict,
    save_manifest,
)
from .masks import (
    MaskBundle,
    ParsingMap,
    aligned_mask,
    build_mask_bundle,
    merge_masks,
    parse_face,
    resample_mask,
)
from .metrics import (
    MetricsReport,
    RunMetrics,
    composite_and_deltas,
    face_diversity,
    grouped_summary,
    identity_fidelity,
    prompt_consistency,
)
from .prompts import (
    AttributeSpec,
    ConditioningBundle,
    IdentityEmbedding,
    PromptSpec,
    bundle_from_spec,
    encode_identity,
    encode_prompt,
    fuse_identity,
    locate_phrase,
    strip_attributes,
)
from .restore import (
    PipelineResult,
    RestorePlan,
    build_restore_plan,
    invert_to_gamma,
    restore_abstract,
    run_pipeline,
)
from .schedule import (
    LatentState,
    NoiseSchedule,
    build_schedule,
    ddim_invert_step,
    ddim_step,
    sample_initial_latent,
)
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

"""osteopipe: CT leg-volume processing pipeline.

Library surface for preprocessing, label curation, augmentation, per-slice
tumor confidence, bone meshing, tumor localization and evaluation metrics.
"""

from .augment import AugmentConfig, augment_dataset, augment_slice, draw_plan
from .bonemesh import (
    BoneMeshConfig,
    brightest_cluster_mask,
    build_bone_model,
    close_and_fill,
    extract_isosurface,
    gaussian_filter,
    kmeans_1d,
    remove_small_components,
    taubin_smooth,
    volumetric_close,
)
from .classify import ConfidenceProvider, confidences_for_patient, softmax
from .curation import (
    ConflictReport,
    EmbeddingSet,
    apply_curation,
    cosine_similarity,
    find_conflicts,
)
from .metrics import (
    ConfusionCounts,
    FoldSummary,
    evaluate_patientwise,
    roc_auc,
    sensitivity,
    specificity,
    t_confidence_interval,
)
from .mesh_io import load_mesh_ply, load_stl_triangles, save_mesh
from .phantom import PhantomSpec, generate_phantom
from .pipeline import PipelineConfig, run_pipeline
from .preproc import (
    PreprocConfig,
    largest_top_components,
    morphological_open_disk,
    otsu_threshold,
    preprocess_study,
    split_leg_rois,
)
from .tumorloc import (
    TumorLocConfig,
    annotate_tumor_box,
    median_filter_confidences,
    smooth_confidences,
    tumor_slice_range,
)
from .types import (
    BinaryMask,
    Box,
    ConfidenceSeries,
    DatasetManifest,
    ManifestRecord,
    TriMesh,
    Volume,
)
from .volume_io import load_volume, save_volume

__version__ = "0.1.0"

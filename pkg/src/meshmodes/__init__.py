"""meshmodes: multiscale localized deformation components for mesh sets."""

from .acap import (
    AcapError,
    AcapFeature,
    FeatureScaler,
    SolveContext,
    encode_dataset,
    encode_shape,
    read_feature_cache,
    reconstruct_positions,
    write_feature_cache,
)
from .datagen import BarSpec, bar_mesh, deform_bar, gen_bar_dataset
from .editing import (
    ControlConstraint,
    EditingError,
    EditSolution,
    FitOptions,
    apply_weights,
    fit_latents,
)
from .mesh import (
    Adjacency,
    CotanWeights,
    GeodesicField,
    GeodesicProvider,
    MeshError,
    ObjParseError,
    TriangleMesh,
    build_adjacency,
    cotangent_weights,
    geodesic_distances,
    load_obj,
    save_obj,
)
from .metrics import (
    EvalReport,
    MetricsError,
    apply_unit_ball,
    build_report,
    e_rms,
    percentage_error,
    sted_simplified,
    unit_ball_transform,
)
from .stacked import (
    AttentionMasks,
    Component,
    ComponentSet,
    ModelFormatError,
    StackedParams,
    TrainConfig,
    TrainingError,
    TrainingLog,
    component_similarity,
    component_strength,
    extract_attention,
    extract_components,
    forward_full,
    load_model,
    route_residuals,
    save_model,
    train_joint,
)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"

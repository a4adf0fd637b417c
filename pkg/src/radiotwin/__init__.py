"""Radio digital twin: ray-traced coverage, material calibration, RIS planning."""

from .antenna import DEFAULT_PATTERN, ElementPattern, SectorFrame, element_gain
from .calibration import (
    CalibrationConfig,
    MeasurementSet,
    aggregate_regions,
    calibrate,
    load_measurements_csv,
    validation_report,
)
from .clustering import Cluster, ClusterFeature, birch_cluster, rank_clusters
from .codebook import BeamCodebook, dft_codebook
from .coverage import CoverageResult, build_coverage, rsrp_dbm, tile_gain
from .grid import TileGrid
from .materials import ElectromagneticMaterial, concrete, fresnel_reflection, medium_dry_ground
from .planner import (
    CandidateSite,
    DeploymentPlan,
    PlannerConfig,
    deploy_for_cluster,
    evaluate_rsrp,
    find_candidates,
    plan,
    reassociate,
    recluster_residual,
)
from .presets import PRESETS, SystemPreset, get_preset
from .ris import RisUnit, cascade_contribution, configure_phases, place_on_wall
from .sampling import fibonacci_directions
from .scene import Building, BsSite, Scene, SceneError, SectorConfig, load_scene, save_scene
from .spatial import Hit, SpatialIndex, build_spatial_index, intersect
from .tracer import (
    PathSet,
    PathTemplate,
    PropagationPath,
    TraceConfig,
    path_to_channel_contribution,
    trace_sector,
)

__version__ = "0.1.0"

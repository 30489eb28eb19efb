"""Early-abort gating, seed-restart orchestration and cost analysis for
multi-object image generation."""

__version__ = "0.1.0"

from .cost_model import (
    CT_GRID,
    CompletionProfile,
    CostModelParams,
    SimulationResult,
    expected_time_saved_closed_form,
    expected_time_saved_mixture,
    simulate_time_saved,
    sweep_critical_timestep,
)
from .errors import (
    ConfigurationError,
    ConsistencyError,
    DataError,
    DecoderError,
    DivergenceError,
    HeadgateError,
    OrderingError,
    ParameterError,
    ScheduleError,
)
from .evaluation import (
    GenerationRecord,
    MetricReport,
    compute_confusion,
    compute_mg_n,
    compute_relation_metrics,
    compute_seed_stats,
    dump_manifest,
    ingest_manifest,
)
from .gating import (
    PUBLISHED_PROFILES,
    AttentionMap,
    Centroid,
    DetectorProfile,
    GateDecision,
    ObjectRef,
    PresencePrediction,
    RelationKind,
    RelationSpec,
    attention_energy_detector,
    check_relation,
    gate_joint,
    gate_presence,
    stochastic_detector,
)
from .orchestrator import (
    AttemptOutcome,
    SessionConfig,
    SessionResult,
    replay_from_manifest,
    run_session,
    select_fallback_seed,
)
from .pfi import LatentState, LinearDecoder, NoiseSchedule, PfiResult, predict_x0, project_pfi, scheduler_update

__all__ = [
    "AttemptOutcome",
    "AttentionMap",
    "CT_GRID",
    "Centroid",
    "CompletionProfile",
    "ConfigurationError",
    "ConsistencyError",
    "CostModelParams",
    "DataError",
    "DecoderError",
    "DetectorProfile",
    "DivergenceError",
    "GateDecision",
    "GenerationRecord",
    "HeadgateError",
    "LatentState",
    "LinearDecoder",
    "MetricReport",
    "NoiseSchedule",
    "ObjectRef",
    "OrderingError",
    "PUBLISHED_PROFILES",
    "ParameterError",
    "PfiResult",
    "PresencePrediction",
    "RelationKind",
    "RelationSpec",
    "ScheduleError",
    "SessionConfig",
    "SessionResult",
    "SimulationResult",
    "attention_energy_detector",
    "check_relation",
    "compute_confusion",
    "compute_mg_n",
    "compute_relation_metrics",
    "compute_seed_stats",
    "dump_manifest",
    "expected_time_saved_closed_form",
    "expected_time_saved_mixture",
    "gate_joint",
    "gate_presence",
    "ingest_manifest",
    "predict_x0",
    "project_pfi",
    "replay_from_manifest",
    "run_session",
    "scheduler_update",
    "select_fallback_seed",
    "simulate_time_saved",
    "stochastic_detector",
    "sweep_critical_timestep",
    "__version__",
]

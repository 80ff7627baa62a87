"""Age-of-Information simulation for an energy-harvesting source on an erasure channel."""
from .model import (
    AoiAccumulator,
    BatteryState,
    ConfigError,
    EventKind,
    InvariantViolation,
    Outcome,
    SimConfig,
    UpdateRecord,
)
from .policies import Feedback, PolicyKind, PolicySpec, PolicyState, Spacings, Stage
from .streams import RandomStreams
from .engine import (
    CycleStats,
    EnsembleSummary,
    PairedReport,
    PathResult,
    Trace,
    extract_cycles,
    run_ensemble,
    run_paired,
    run_path,
)

__version__ = "0.1.0"

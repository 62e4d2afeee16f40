# Path: subtrack/__init__.py
# Purpose: Robust online subspace estimation and tracking (library surface).
# Version: 0.4.0

from .core_model import (
    FitResult,
    Frame,
    ObservationMask,
    SubspaceBasis,
    loss_value,
    project_complement,
    project_mask,
    soft_threshold,
)
from .errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    InvariantViolationError,
    ParseError,
    RankDeficiencyError,
    SchemaVersionError,
    SubtrackError,
)
from .inner_solver import InnerSolveReport, PseudoInverse, least_squares_apply, solve_fit
from .metrics import EvalReport, evaluate, outlier_support_scores, recon_nmse, subspace_distance
from .params import Hyperparams
from .subspace_update import (
    StepSizeState,
    apply_update,
    descent_direction,
    reorthonormalize,
    sigmoid,
    update_step_size,
)
from .synth import GroundTruth, Scenario, generate, generate_matrix
from .tracker import (
    BatchResult,
    FrameTrace,
    MaskedMatrix,
    TrackerState,
    batch_complete,
    init_tracker,
    process_frame,
    run_stream,
)

__version__ = "0.4.0"

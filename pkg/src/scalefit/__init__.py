"""scalefit: fit, compare and apply neural scaling laws for language models."""

from .alloc import (
    allocation_constants,
    compute_for_loss,
    optimal_allocation,
    optimal_params_for_tokens,
    verify_allocation,
)
from .artifacts import LawArtifact, __version__, load_artifact, save_artifact
from .errors import (
    MissingMetricError,
    NonFiniteError,
    NumericalError,
    ParseError,
    ScaleFitError,
    ValidationError,
)
from .lawfit import FitConfig, FitReport, fit_multi_epoch, fit_single_epoch
from .laws import (
    PRESETS,
    ChinchillaParams,
    MultiEpochParams,
    effective_budget,
    predict_loss,
    predict_loss_multi,
)
from .linkage import efficiency_ratio, loss_metric_correlation, project_parity
from .numopt import OptConfig, OptResult, grad_check, huber, minimize
from .runstore import CurvePoint, CurveSet, RunRecord, RunSet, load_curves, load_runs
from .scalecurves import PowerLawFit, fit_power_law, loss_compute_law, metric_compute_law, pareto_envelope
from .synthgen import SynthSpec, generate_curves, generate_runs

__all__ = [n for n in dir() if not n.startswith("_")] + ["__version__"]

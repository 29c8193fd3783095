"""Dynamic-connectome distance series reprogrammed into a frozen transformer.

Pipeline: ROI time series -> sliding-window correlation matrices -> distance
series (seven metrics) -> RevRIN -> patches -> cross-attention onto text
prototypes -> frozen transformer -> linear head. Only the patch embedding,
reprogramming module and head are trained.
"""

from .errors import ConnectomeLLMError
from .config import RunConfig, load_run_config
from .timeseries_io import Cohort, SubjectRecord, SyntheticSpec, generate_synthetic_cohort, load_cohort, save_cohort
from .connectome import sliding_window_connectomes
from .graph_distance import METRICS, DistanceSeries, distance_series, persistence_summary, wasserstein_distance
from .revrin import revrin_forward, revrin_inverse
from .model import build_model, forward, prepare_inputs
from .trainer import evaluate, run_protocol, train
from .ablation import ablation_grid, run_ablation

__version__ = "0.1.0"

__all__ = [
    "ConnectomeLLMError",
    "RunConfig",
    "load_run_config",
    "Cohort",
    "SubjectRecord",
    "SyntheticSpec",
    "generate_synthetic_cohort",
    "load_cohort",
    "save_cohort",
    "sliding_window_connectomes",
    "METRICS",
    "DistanceSeries",
    "distance_series",
    "persistence_summary",
    "wasserstein_distance",
    "revrin_forward",
    "revrin_inverse",
    "build_model",
    "forward",
    "prepare_inputs",
    "evaluate",
    "run_protocol",
    "train",
    "ablation_grid",
    "run_ablation",
]

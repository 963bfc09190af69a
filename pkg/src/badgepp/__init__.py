"""Badge-aware marked point processes of asking and answering on Q&A sites."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BadgeppError,
    DataFormatError,
    DegenerateParameterError,
    InsufficientDataError,
    InvalidArgumentError,
    InvariantError,
    NoCandidateError,
    NoEventExpectedError,
    UnsupportedVersionError,
    ZeroLikelihoodError,
)
from .model import (  # noqa: E402
    ANSWER,
    QUESTION,
    BadgeSpec,
    Dataset,
    Event,
    ModelConfig,
    ModelParams,
    UserParams,
    dataset_log_likelihood,
)
from .inference import FitReport, fit  # noqa: E402
from .simulate import SyntheticConfig, simulate, simulate_synthetic  # noqa: E402

__all__ = [
    "ANSWER", "QUESTION", "BadgeSpec", "Dataset", "Event", "ModelConfig", "ModelParams", "UserParams",
    "dataset_log_likelihood", "FitReport", "fit", "SyntheticConfig", "simulate", "simulate_synthetic",
    "BadgeppError", "DataFormatError", "DegenerateParameterError", "InsufficientDataError",
    "InvalidArgumentError", "InvariantError", "NoCandidateError", "NoEventExpectedError",
    "UnsupportedVersionError", "ZeroLikelihoodError",
]

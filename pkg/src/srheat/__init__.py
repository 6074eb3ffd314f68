"""Sub-Riemannian flags, privileged coordinates, nilpotent approximation and
small-time heat-kernel asymptotics, with numerical verification tools."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ChartValidityError,
    DimensionMismatch,
    EmptyLowestPart,
    FrameNotAdapted,
    GridError,
    HormanderViolation,
    IllConditioned,
    Inconclusive,
    ModelError,
    NonpositiveDensity,
    SRHeatError,
    StabilityError,
    StencilOverflow,
    TruncationLoss,
)
from .polynomials import MultiPoly, PolyVectorField, Weights, lie_bracket  # noqa: E402
from .flag import FlagData, compute_flag, growth_vector, is_regular, sr_pseudo_norm  # noqa: E402
from .charts import PrivilegedChart, build_exponential_chart, privileged_chart, verify_orders  # noqa: E402
from .nilpotent import NilpotentStructure, nilpotentize, hormander_coercivity, damping_rate_fit  # noqa: E402
from .corpus import ModelSpec, load_corpus, load_model, corpus_names  # noqa: E402

__all__ = [
    "__version__",
    "SRHeatError", "ChartValidityError", "DimensionMismatch", "EmptyLowestPart", "FrameNotAdapted",
    "GridError", "HormanderViolation", "IllConditioned", "Inconclusive", "ModelError",
    "NonpositiveDensity", "StabilityError", "StencilOverflow", "TruncationLoss",
    "MultiPoly", "PolyVectorField", "Weights", "lie_bracket",
    "FlagData", "compute_flag", "growth_vector", "is_regular", "sr_pseudo_norm",
    "PrivilegedChart", "build_exponential_chart", "privileged_chart", "verify_orders",
    "NilpotentStructure", "nilpotentize", "hormander_coercivity", "damping_rate_fit",
    "ModelSpec", "load_corpus", "load_model", "corpus_names",
]

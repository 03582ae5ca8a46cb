"""Channel-wise retrieval-augmented forecasting for multivariate time series.

Each channel retrieves its own historical references: a sparse relation graph
over channels limits the candidate keys, and truncated-spectrum similarity
ranks them. A retrieval head turns the references into a forecast that is
added, with a fixed weight, to a direct MLP forecast.
"""

from .data import (
    ChannelStats,
    DataError,
    MultivariateSeries,
    WindowPair,
    apply_stats,
    fit_stats,
    load_csv,
    sliding_windows,
    split_chronological,
)
from .graph import RelationGraph, build_graph, concat_trajectory, cosine_similarity
from .kernels import BACKEND
from .memory import Memory, MemoryEntry
from .model import CraftModel, ForecastOutput, direct_forecast, forecast, fuse, retrieval_forecast
from .retrieval import (
    OpCounter,
    QuerySpectrum,
    RetrievedReference,
    candidate_pool,
    retrieve_all,
    retrieve_channel,
    spectral_similarity,
)
from .spectral import KnowledgeBase, SpectralKey, build_knowledge_base, load_kb, save_kb, truncated_rfft
from .training import TrainConfig, adam_step, backward, mse_loss, train

__version__ = "0.1.0"

"""Decompose multi-frequency echogram time series.

Robust PCA splits the flattened echogram matrix into a low-rank part and
sparse outliers; temporally smooth NMF then factors the low-rank part into
a few nonnegative daily patterns with smooth day-to-day activations.
"""

__version__ = "0.1.0"

from ._accel import backend
from .echogram import (
    DataMatrix,
    EchogramCube,
    bin_mvbs,
    fill_missing,
    flatten,
    shift_nonnegative,
    unflatten,
)
from .errors import (
    DataError,
    DegenerateError,
    EchodecompError,
    NumericalError,
    ParameterError,
)
from .model_select import l_curve_scan, mse_rank_scan
from .pcp import PcpConfig, PcpResult, default_gamma, pcp_decompose
from .summarize import ClusterSummary, activation_distance, summarize, ward_cluster
from .synth import SynthSpec, gen_lowrank_sparse, gen_patterned_echogram
from .tsnmf import (
    NmfEnsemble,
    NmfModel,
    TsnmfConfig,
    multistart_fit,
    palm_fit,
    scale_normalize,
    tsnmf_cost,
)

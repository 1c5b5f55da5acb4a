"""Network-based gene-set analysis.

Two-sample tests for differences between Gaussian graphical models,
aggregated over random data splits and applied to collections of gene-sets.
"""

from .config import RunConfig
from .constrained_mle import GraphConstrainedFit, gaussian_loglik, ipf_mle, model_df
from .diffnet import (DiffNetOutcome, NullSpec, delta_aic, diffnet_test, fisher_weights,
                      network_screen, null_weights, psi_cdf, psi_sf, split_data)
from .errors import ConvergenceError, DataError, NetGSAError
from .ggm import (adaptive_threshold, glasso_fit, lambda_grid, mb_fit, select_lambda_bic,
                  select_lambda_cv, shrinkage_fit, sparsity_index, standardize)
from .graph import UndirectedGraph
from .gsa import (GeneSetCollection, GeneSetResultRow, backtest, bh_adjust, classic_gsa,
                  combine_min, run_netgsa, run_single_split, shapiro_filter)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DataError", "DiffNetOutcome", "GeneSetCollection", "GeneSetResultRow",
    "GraphConstrainedFit", "NetGSAError", "NullSpec", "RunConfig", "UndirectedGraph",
    "adaptive_threshold", "backtest", "bh_adjust", "classic_gsa", "combine_min", "delta_aic",
    "diffnet_test", "fisher_weights", "gaussian_loglik", "glasso_fit", "ipf_mle", "lambda_grid",
    "mb_fit", "model_df", "network_screen", "null_weights", "psi_cdf", "psi_sf", "run_netgsa",
    "run_single_split", "select_lambda_bic", "select_lambda_cv", "shapiro_filter",
    "shrinkage_fit", "sparsity_index", "split_data", "standardize",
]

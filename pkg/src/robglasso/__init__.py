"""Graphical lasso with robust plug-in covariances and its robustness diagnostics."""

__version__ = "0.1.0"

from .asv import efficiency_table, glasso_asv, plugin_asv
from .contamination import contaminated_plugin_cov, ges_scan, plugin_if
from .cov_plugins import PluginKind, correlation_functional, finite_sample_estimate, \
    fisher_transform, pairwise_cov, psd_repair, qn_scale_functional
from .glasso import PenaltySpec, glasso_solve, kkt_residual, support_permutation
from .influence import GlassoInfluence, ges_bound, glasso_if, glasso_if_fd, \
    max_direction_unpenalized
from .model import ContaminationPoint, GaussianModel, QuadratureSpec, toeplitz_example
from .sensitivity import SCExperiment, sc_surface

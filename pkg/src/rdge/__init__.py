"""Robust regression-discontinuity estimation and a general-equilibrium
skill-premium pipeline built on it."""

from ._variance import VarianceSpec
from .bandwidth import BandwidthPair, BandwidthSpec, manual_pair, select_bandwidth, select_mse_bandwidth
from .bootstrap import BootstrapPlan, BootstrapSummary, resample, run_bootstrap
from .core import Kernel, LocalFit, Observation, Sample, fit_local_poly, jump_estimate, kernel_weight
from .errors import *  # noqa: F401,F403
from .inference import RddResult, robust_bias_corrected, robust_bias_corrected_fuzzy
from .plots import PlotData, binned_plot_data, treatment_fraction_histogram
from .rdd import EstimationRequest, donut_filter, estimate, estimate_fuzzy, estimate_sharp

__version__ = "0.1.0"

"""Threshold panel ARDL estimation of asset-purchase effects on firm leverage."""

from .debt_capacity import PolicySeries, ThresholdParams, capacity_indicators, scale_policy
from .design import ModelSpec, absorb_two_way, build_design, design_for_thresholds
from .dgp import DgpConfig, Simulation, simulate
from .effects import (
    distributed_lag,
    half_life,
    joint_f_test,
    lag_weights,
    long_run,
    mean_lag,
    national_policy_effect,
    net_short_run,
    policy_effect_report,
)
from .estimator import FitResult, fit_ols
from .jackknife import JackknifeResult, half_panel_jackknife
from .panel_io import FilterConfig, PanelDataset, apply_filters, load_panel
from .threshold_search import GridResult, GridSpec, grid_search

__version__ = "0.1.0"

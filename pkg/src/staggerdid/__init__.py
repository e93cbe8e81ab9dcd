"""Staggered-adoption event studies: two-way FE, interaction-weighted, and random-effects DiD."""

__version__ = "0.1.0"

from .did import DidSpec, VarianceComponents, estimate_did, estimate_variance_components
from .eventstudy import (
    CattMatrix,
    EndpointRule,
    EventStudySpec,
    WeightVector,
    build_relative_indicators,
    estimate_catt,
    estimate_fe,
    estimate_iw,
    estimate_weights,
    iw_aggregate,
    pretrend_test,
)
from .panel import (
    CohortMap,
    PanelDataset,
    PanelSchema,
    build_cohorts,
    drop_movers,
    filter_balanced,
    load_panel,
    map_law_year_to_wave,
)
from .regress import DesignMatrix, FitResult, cluster_robust_vcov, solve_ols, two_way_within, wald_test
from .results import EstimateTable
from .simulate import DgpConfig, McSummary, generate_panel, run_monte_carlo, true_iw_target

__all__ = [
    "DidSpec",
    "VarianceComponents",
    "estimate_did",
    "estimate_variance_components",
    "CattMatrix",
    "EndpointRule",
    "EventStudySpec",
    "WeightVector",
    "build_relative_indicators",
    "estimate_catt",
    "estimate_fe",
    "estimate_iw",
    "estimate_weights",
    "iw_aggregate",
    "pretrend_test",
    "CohortMap",
    "PanelDataset",
    "PanelSchema",
    "build_cohorts",
    "drop_movers",
    "filter_balanced",
    "load_panel",
    "map_law_year_to_wave",
    "DesignMatrix",
    "FitResult",
    "cluster_robust_vcov",
    "solve_ols",
    "two_way_within",
    "wald_test",
    "EstimateTable",
    "DgpConfig",
    "McSummary",
    "generate_panel",
    "run_monte_carlo",
    "true_iw_target",
    "schema_path",
]


def schema_path(name: str):
    """Path of a bundled JSON schema, e.g. ``schema_path("estimates")``."""
    from importlib.resources import files

    return files(__name__).joinpath("schemas", f"{name}.schema.json" if name != "csv_columns" else "csv_columns.json")

"""Variant-specific treatment effects from randomized trials with unmeasured exposure."""

from .bounds import IntervalBound, acece_ratio_bounds, bounds_from_counts, ve_ratio_bounds
from .data import (
    CountTable,
    EventData,
    EventRecord,
    MarkDichotomizationConfig,
    SubjectRecord,
    TrialData,
    collapse_events,
    ingest_time_fixed,
    ingest_time_to_event,
    tabulate,
    validate,
)
from .dgp import DgpSpec, OracleValues, TteSpec, builtin_scenario, multi_exposure_probability, oracle, sample
from .estimands import RatioEstimate, StratumSelector, cce, ccs, eet, eie, rr
from .nulltests import TestResult, h0w_test, scaled_infection_falsification, strong_null_test
from .survival import (
    CoxFit,
    HazardTable,
    IncidenceTable,
    cce_k,
    cox_fit,
    cse_cox,
    cse_k_nonparametric,
    cse_window,
    cumulative_incidence,
    discrete_hazards,
    nelson_aalen,
)
from .uncertainty import BootstrapPlan, bootstrap_ci, eet_trinomial_ci, katz_ci

__version__ = "0.1.0"

__all__ = [
    "acece_ratio_bounds",
    "bootstrap_ci",
    "BootstrapPlan",
    "bounds_from_counts",
    "builtin_scenario",
    "cce",
    "cce_k",
    "ccs",
    "collapse_events",
    "CountTable",
    "cox_fit",
    "CoxFit",
    "cse_cox",
    "cse_k_nonparametric",
    "cse_window",
    "cumulative_incidence",
    "DgpSpec",
    "discrete_hazards",
    "eet",
    "eet_trinomial_ci",
    "eie",
    "EventData",
    "EventRecord",
    "h0w_test",
    "HazardTable",
    "IncidenceTable",
    "ingest_time_fixed",
    "ingest_time_to_event",
    "IntervalBound",
    "katz_ci",
    "MarkDichotomizationConfig",
    "multi_exposure_probability",
    "nelson_aalen",
    "oracle",
    "OracleValues",
    "RatioEstimate",
    "rr",
    "sample",
    "scaled_infection_falsification",
    "StratumSelector",
    "strong_null_test",
    "SubjectRecord",
    "tabulate",
    "TestResult",
    "TrialData",
    "TteSpec",
    "validate",
    "ve_ratio_bounds",
]

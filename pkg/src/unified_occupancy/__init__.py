"""Unified occupancy of public transport courses.

Ticketing occupancy is rebuilt from boarding-only fare validations, scaled
by station fraud rates learnt on courses fitted with passenger counters, and
extended to uncovered stations by ordinary kriging.
"""
from .config import Config, load_config
from .core import (ApcMeasure, Course, CourseKey, Direction, OccupancyProfile, ProfileSource,
                   Station, StopEvent, flows_from_occupancy, occupancy_from_flows)
from .errors import (DegenerateVariogram, EmptyDataset, LengthMismatch, MissingApc,
                     NegativeOccupancy, NoCoveredCourses, NotCoveredEnough, OccupancyError,
                     ReferentialError, SchemaError, SingularSystem, TooFewLines, TooFewPoints,
                     ZeroReference)
from .evaluation import (ContextKey, Unpredictable, contextual_average, coverage_sweep,
                         holdout_30, leave_line_out, wmape)
from .fraud_rates import FraudRateTable, course_fraud_ratios, mean_fraud_rates
from .geostat import (KrigingModel, VariogramModel, empirical_variogram, fit_exponential,
                      fit_kriging, krige)
from .ingest import NetworkDataset, coverage_summary, load_network
from .od import chain_trips, fallback_alightings, reconstruct, ticketing_profile
from .unify import PipelineResult, run_pipeline, unify_course

__version__ = "0.1.0"

__all__ = [
    "Config", "load_config", "ApcMeasure", "Course", "CourseKey", "Direction",
    "OccupancyProfile", "ProfileSource", "Station", "StopEvent", "flows_from_occupancy",
    "occupancy_from_flows", "DegenerateVariogram", "EmptyDataset", "LengthMismatch",
    "MissingApc", "NegativeOccupancy", "NoCoveredCourses", "NotCoveredEnough", "OccupancyError",
    "ReferentialError", "SchemaError", "SingularSystem", "TooFewLines", "TooFewPoints",
    "ZeroReference", "ContextKey", "Unpredictable", "contextual_average", "coverage_sweep",
    "holdout_30", "leave_line_out", "wmape", "FraudRateTable", "course_fraud_ratios",
    "mean_fraud_rates", "KrigingModel", "VariogramModel", "empirical_variogram",
    "fit_exponential", "fit_kriging", "krige", "NetworkDataset", "coverage_summary",
    "load_network", "chain_trips", "fallback_alightings", "reconstruct", "ticketing_profile",
    "PipelineResult", "run_pipeline", "unify_course", "__version__",
]

"""Conditional generalized propensity score spatial matching.

Estimates the effect in the exposed of a continuous exposure that is only
positive for units with a binary exposure, adjusting for spatially
structured confounding by matching on location first and on the
generalized propensity score second.
"""

from .datagen import Dataset, GeneratorCoefficients, ScenarioConfig, generate_dataset, sample_gp_field
from .diagnostics import BalanceReport, MatchRate, balance_report, match_rate, smd
from .errors import CgpsError, ConvergenceError, DataError, NumericalError, ParameterError
from .estimation import (
    AttEstimate,
    SimulationReport,
    bootstrap_att,
    naive_ipw_att,
    simulation_metrics,
    unadjusted_poisson,
)
from .exposure import ExposureAssignment, Facility, compute_exposure
from .gps import GpsRecord, build_gps_records, compose_gps, estimate_cgps, estimate_ps
from .matching import DistanceStratum, MatchedPair, MatchSpec, distance_match, gps_match
from .spatial import (
    Location,
    MaternParams,
    Variogram,
    empirical_semivariogram,
    euclidean_distance,
    fit_matern_variogram,
    matern_correlation,
)

__version__ = "0.1.0"

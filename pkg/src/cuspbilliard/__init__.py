"""Simulator and verification lab for a dispersing billiard with a flat-point cusp."""

from .dynamics import (
    CollisionState, FlightResult, Flags, PrecisionPolicy, Trace, make_state, map_array, next_collision,
    prev_collision, run_trace, sample_mu,
)
from .errors import (
    BilliardError, ConfigError, DegenerateSeries, GeometryInvalid, InsufficientData, InvalidParams, NoIntersection,
    NotApplicable, OutOfRange, QuadratureFailure, RunawayOrbit, SingularHit,
)
from .geometry import CuspTable, TableParams, build_table, validate_table
from .harness import ExperimentConfig, ReportBundle, load_config, run_experiment
from .induced import corner_series, corner_series_stats, first_return, sample_mu_tilde
from .observables import Observable, builtin, center, cusp_constants, load_observable
from .stable import StableParams

__version__ = "0.1.0"

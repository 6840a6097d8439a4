"""Import all common functions for convenience."""
from .scenario import load_scenario
from .scenario import load_scenario_file
from .scenario import default_dover_scenario
from .scenario import default_validation_scenario
from .scenario import ScenarioError
from .arrivals import arrivals_from_bins
from .arrivals import rate_profile
from .routing_policies import build_policy
from .sim_engine.engine import run
from .sim_engine.replication import replicate
from .metrics import lane_occupancy
from .metrics import trip_time_stats
from .metrics import policy_comparison
from .detector_validation.trip_sources import run_validation

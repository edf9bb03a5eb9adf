"""Scan-aware MaxWeight scheduling of VM jobs with malicious traffic."""

from .capacity import FeasibleSet, RegionVerdict, enumerate_maximal_configs, membership, system_region
from .domain import ArrivalSpec, ContractError, Job, LengthDistribution, ResourceVector, VMTypeSpec, ec2_spec
from .engine import Scenario, analyze, load_scenario, run, run_adaptive
from .metrics import MetricsSample, export_csv, read_csv
from .scanning import ScanVector, a_vector, classify, estimate_rates, optimal_alpha, scan_all, scan_none

__version__ = "0.1.0"

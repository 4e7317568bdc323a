"""Scenario orchestration, twin experiment, metrics, outputs and CLI."""
from .config import (STRATEGIES, ConfigValidationError, ScenarioConfig, from_dict, load_config,
                     save_config, to_dict)
from .metrics import MetricsSeries, oil_presence_error, rms_current_error_where_oil
from .twin import TwinResult, run_twin_experiment

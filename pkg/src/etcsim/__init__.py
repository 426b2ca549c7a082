"""Event-triggered output-feedback control with dynamic quantization.

Modules
-------
linalg        matrix exponentials, Lyapunov solver, observability tools
quantization  finite-level zoom quantizers, symbols and packets
output_unit   sensor-side event rule, observer identity and output zoom law
input_unit    controller-side event rule and input zoom law
design        design constants, dwell-time bounds and the Riccati comparison bound
simulate      closed-loop simulator with exact event localization
scenario      TOML scenario files
report        design reports (text and key-value)
artifacts     CSV artifacts and plot-script emission
acceptance    acceptance checks shared by the tests and ``etcsim selftest``
"""

from .design import DesignConstants, DesignError, PlantModel, derive_constants, dwell_report
from .scenario import Scenario, ScenarioError, load_scenario
from .simulate import InvariantViolation, SimConfig, SimResult, simulate

__version__ = "0.1.0"

__all__ = [
    "DesignConstants", "DesignError", "PlantModel", "derive_constants", "dwell_report",
    "Scenario", "ScenarioError", "load_scenario",
    "InvariantViolation", "SimConfig", "SimResult", "simulate",
]

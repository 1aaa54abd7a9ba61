"""Data-center low-voltage ride-through: network model, grid co-simulation and voltage controllers."""

from dcvrt.control import (
    ControlAction,
    ControlBounds,
    CostWeights,
    DelayLine,
    GainSchedule,
    centralized_step,
    decentralized_step,
    delay_apply,
)
from dcvrt.distflow import Line, NetworkTopology, PowerState, SensitivityMatrices, build_sensitivity, voltages
from dcvrt.errors import ConfigError, DcvrtError, NotApplicable, NumericError, TopologyError, VoltageCollapse
from dcvrt.report import Metrics, compute_metrics, delay_sweep
from dcvrt.scenario import DEFAULT_SEED, Scenario, load_scenario, with_overrides
from dcvrt.sim import SimResult, run
from dcvrt.synth import (
    StabilityCertificate,
    certify,
    certify_region,
    certify_spectral,
    closed_loop,
    optimize_gains,
)
from dcvrt.vrt import VrtCurve, load_curve

__version__ = "0.1.0"

"""Modeling, simulation, fitting and optimization of real-time charge initialization
and spin readout for NV centers in diamond."""

__version__ = "0.1.0"

from .charge import (CalibrationConstants, RateSet, default_calibration, load_calibration,  # noqa: E402
                     rates_at_power, steady_state_population)
from .errors import ConvergenceError, DomainError, NumericalError, UnreachableThresholdError  # noqa: E402
from .photon import (ChargeState, PhotonDistribution, distribution_conditional,  # noqa: E402
                     distribution_mixture, optimal_charge_threshold, tail_probability)
from .protocol import ProtocolConfig, ProtocolPrediction, predict, run_controller, run_controller_batch  # noqa: E402

__all__ = [
    "CalibrationConstants", "RateSet", "default_calibration", "load_calibration", "rates_at_power",
    "steady_state_population", "ConvergenceError", "DomainError", "NumericalError",
    "UnreachableThresholdError", "ChargeState", "PhotonDistribution", "distribution_conditional",
    "distribution_mixture", "optimal_charge_threshold", "tail_probability", "ProtocolConfig",
    "ProtocolPrediction", "predict", "run_controller", "run_controller_batch",
]

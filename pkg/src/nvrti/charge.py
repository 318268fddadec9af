"""Power-dependent charge and emission rates under red illumination.

Below saturation the photon detection rates grow linearly with probe power
and the charge interconversion rates quadratically::

    gamma_minus = c_minus * P
    gamma_zero  = c_zero * P + dark
    gamma_ion   = c_ion * P**2
    gamma_rec   = c_rec * P**2

Units are hertz and microwatts throughout.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .errors import DomainError
from .units import parse_quantity

SATURATION_WARNING_POWER = 200.0  # µW

_CAL_DIMENSIONS = {
    "c_minus": "rate/power",
    "c_zero": "rate/power",
    "dark": "rate",
    "c_ion": "rate/power^2",
    "c_rec": "rate/power^2",
}


@dataclass(frozen=True)
class CalibrationConstants:
    """Power-law coefficients for the four charge processes.

    ``c_minus`` and ``c_zero`` are in Hz/µW, ``dark`` in Hz, ``c_ion`` and
    ``c_rec`` in Hz/µW². ``uncertainty`` holds one-sigma values keyed by field
    name; it is carried along but not propagated.
    """

    c_minus: float
    c_zero: float
    dark: float
    c_ion: float
    c_rec: float
    uncertainty: tuple = field(default=(), compare=False)

    def __post_init__(self):
        for name in _CAL_DIMENSIONS:
            if getattr(self, name) < 0:
                raise DomainError(f"calibration constant {name} must be >= 0")
        if not self.c_minus > self.c_zero:
            raise DomainError("c_minus must exceed c_zero (NV- is the bright state)")

    def uncertainties(self) -> dict:
        return dict(self.uncertainty)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("uncertainty")
        return d


@dataclass(frozen=True)
class RateSet:
    """Photon rates and charge transition rates (Hz) at one probe power."""

    gamma_minus: float
    gamma_zero: float
    gamma_ion: float
    gamma_rec: float

    def __post_init__(self):
        for name in ("gamma_minus", "gamma_zero", "gamma_ion", "gamma_rec"):
            v = getattr(self, name)
            if not v >= 0:
                raise DomainError(f"{name} must be >= 0, got {v}")

    def swapped(self) -> "RateSet":
        """Exchange the roles of NV- and NV0."""
        return RateSet(self.gamma_zero, self.gamma_minus, self.gamma_rec, self.gamma_ion)

    def with_(self, **changes) -> "RateSet":
        return replace(self, **changes)

    def as_tuple(self) -> tuple:
        return (self.gamma_minus, self.gamma_zero, self.gamma_ion, self.gamma_rec)


def rates_at_power(cal: CalibrationConstants, power: float) -> RateSet:
    """Evaluate the unsaturated power laws at ``power`` µW.

    The dark count rate enters ``gamma_zero`` only.
    """
    if power < 0:
        raise DomainError(f"power must be >= 0, got {power}")
    if power > SATURATION_WARNING_POWER:
        warnings.warn(
            f"{power} uW exceeds {SATURATION_WARNING_POWER} uW; the unsaturated "
            "rate model may be inaccurate",
            stacklevel=2,
        )
    return RateSet(
        gamma_minus=cal.c_minus * power,
        gamma_zero=cal.c_zero * power + cal.dark,
        gamma_ion=cal.c_ion * power**2,
        gamma_rec=cal.c_rec * power**2,
    )


def steady_state_population(rates: RateSet) -> float:
    """Steady-state NV- fraction ``gamma_rec / (gamma_ion + gamma_rec)``."""
    total = rates.gamma_ion + rates.gamma_rec
    if total <= 0:
        raise DomainError("steady state undefined: both transition rates are zero")
    return rates.gamma_rec / total


def recombination_from_steady_state(gamma_ion: float, p_minus: float) -> float:
    """Recombination rate implied by a measured steady-state NV- fraction."""
    if not 0 <= p_minus < 1:
        raise DomainError(f"p_minus must lie in [0, 1), got {p_minus}")
    if gamma_ion < 0:
        raise DomainError("gamma_ion must be >= 0")
    return p_minus / (1.0 - p_minus) * gamma_ion


def calibration_from_mapping(section: dict, uncertainty: dict | None = None) -> CalibrationConstants:
    """Build constants from a ``{"c_minus": "0.895 kHz/uW", ...}`` mapping."""
    missing = set(_CAL_DIMENSIONS) - set(section)
    if missing:
        raise DomainError(f"calibration section missing keys: {sorted(missing)}")
    unknown = set(section) - set(_CAL_DIMENSIONS)
    if unknown:
        raise DomainError(f"unknown calibration keys: {sorted(unknown)}")
    values = {k: parse_quantity(section[k], dim) for k, dim in _CAL_DIMENSIONS.items()}
    unc = ()
    if uncertainty:
        unc = tuple(
            sorted((k, parse_quantity(v, _CAL_DIMENSIONS[k])) for k, v in uncertainty.items())
        )
    return CalibrationConstants(**values, uncertainty=unc)


def load_calibration(path=None) -> CalibrationConstants:
    """Read calibration constants from a JSON config file.

    With no path the bundled defaults (the published fit values) are used.
    """
    if path is None:
        text = resources.files("nvrti.data").joinpath("calibration.json").read_text()
    else:
        text = Path(path).read_text()
    doc = json.loads(text)
    return calibration_from_mapping(doc["calibration"], doc.get("calibration_uncertainty"))


def default_calibration() -> CalibrationConstants:
    return _DEFAULT


_DEFAULT = load_calibration()

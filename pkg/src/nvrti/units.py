"""Parsing of dimensioned quantities such as ``"550 ns"`` or ``"0.895 kHz/uW"``.

Canonical internal units are seconds, hertz and microwatts.  Every dimensioned
value read from a config file or the command line carries an explicit unit
suffix; bare numbers are rejected for dimensioned fields.
"""

from __future__ import annotations

import re

from .errors import DomainError

TIME = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9, "ps": 1e-12}
RATE = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}
POWER = {"uW": 1.0, "µW": 1.0, "nW": 1e-3, "mW": 1e3, "W": 1e6}

DIMENSIONS = ("time", "rate", "power", "rate/power", "rate/power^2")

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PATTERN = re.compile(rf"^\s*({_NUMBER})\s*([^\s\d].*?)?\s*$")


class UnitError(DomainError):
    pass


def _scale(unit: str, dimension: str) -> float:
    unit = unit.replace(" ", "").replace("²", "^2")
    if dimension == "time":
        table = TIME
    elif dimension == "rate":
        table = RATE
    elif dimension == "power":
        table = POWER
    elif dimension in ("rate/power", "rate/power^2"):
        num, _, den = unit.partition("/")
        squared = dimension.endswith("^2")
        if squared:
            if not den.endswith("^2"):
                raise UnitError(f"expected a unit of the form Hz/uW^2, got {unit!r}")
            den = den[:-2]
        if num not in RATE or den not in POWER:
            raise UnitError(f"unknown unit {unit!r} for {dimension}")
        return RATE[num] / POWER[den] ** (2 if squared else 1)
    else:
        raise UnitError(f"unknown dimension {dimension!r}")
    if unit not in table:
        raise UnitError(f"unknown {dimension} unit {unit!r}; expected one of {sorted(table)}")
    return table[unit]


def parse_quantity(value, dimension: str) -> float:
    """Convert ``"<number> <unit>"`` to a float in canonical units.

    Examples
    --------
    >>> parse_quantity("550 ns", "time")
    5.5e-07
    >>> parse_quantity("0.895 kHz/uW", "rate/power")
    895.0
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool) and value == 0:
        return 0.0  # zero needs no unit
    if isinstance(value, bool) or isinstance(value, (int, float)):
        raise UnitError(f"bare number {value!r} given for a {dimension} field; add a unit")
    if not isinstance(value, str):
        raise UnitError(f"cannot interpret {value!r} as a {dimension}")
    m = _PATTERN.match(value)
    if m is not None and m.group(2) is None and float(m.group(1)) == 0:
        return 0.0
    if m is not None and m.group(2) is None:
        raise UnitError(f"bare number {value!r} given for a {dimension} field; add a unit")
    if m is None:
        raise UnitError(f"cannot parse {value!r} as a {dimension} (expected e.g. '5 us')")
    scale = _scale(m.group(2), dimension)
    number = float(m.group(1))
    # divide by the reciprocal for sub-units so "5 us" is exactly 5e-6
    return number * scale if scale >= 1 else number / round(1.0 / scale)


def format_quantity(value: float, unit: str, dimension: str) -> str:
    """Inverse of :func:`parse_quantity` for a chosen display unit."""
    return f"{value / _scale(unit, dimension):.12g} {unit}"


def parse_list(text: str, dimension: str) -> list[float]:
    """Parse a comma separated list, e.g. ``"10us,100us,1ms"``."""
    return [parse_quantity(item, dimension) for item in text.split(",") if item.strip()]

import pytest

from nvrti.units import UnitError, format_quantity, parse_list, parse_quantity


@pytest.mark.parametrize("text,dim,expected", [
    ("5 us", "time", 5e-6),
    ("5us", "time", 5e-6),
    ("550 ns", "time", 550e-9),
    ("5 µs", "time", 5e-6),
    ("1 ms", "time", 1e-3),
    ("0.895 kHz/uW", "rate/power", 895.0),
    ("5.36 Hz/uW^2", "rate/power^2", 5.36),
    ("39 Hz", "rate", 39.0),
    ("1 mW", "power", 1000.0),
    ("6 uW", "power", 6.0),
])
def test_parse_quantity(text, dim, expected):
    assert parse_quantity(text, dim) == pytest.approx(expected, rel=1e-15)


def test_decimal_submultiples_are_exact():
    assert parse_quantity("5 us", "time") == 5e-6
    assert parse_quantity("9 us", "time") == 9e-6


@pytest.mark.parametrize("value", [5, 5.0, "5", "5 parsecs", "us", True])
def test_bare_or_unknown_rejected(value):
    with pytest.raises(UnitError):
        parse_quantity(value, "time")


def test_zero_needs_no_unit():
    assert parse_quantity("0", "time") == 0.0
    assert parse_quantity(0, "time") == 0.0


def test_wrong_dimension_rejected():
    with pytest.raises(UnitError):
        parse_quantity("5 kHz", "time")
    with pytest.raises(UnitError):
        parse_quantity("5 Hz/uW", "rate/power^2")


def test_round_trip_and_lists():
    assert parse_quantity(format_quantity(127e-6, "us", "time"), "time") == pytest.approx(127e-6)
    assert parse_list("10us, 100us,1ms", "time") == pytest.approx([1e-5, 1e-4, 1e-3])

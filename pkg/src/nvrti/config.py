"""JSON run configuration: loading, unit conversion, overrides and run manifests.

A config file is a single JSON object whose sections mirror the library types::

    {
      "seed": 0,
      "calibration": {"c_minus": "0.895 kHz/uW", ...},
      "protocol": {"probe_power": "6 uW", "probe_duration": "5 us", "threshold": 1, ...},
      "spin": {"pl": {...}, "scc": {...}},
      "search": {"probe_powers": ["1 uW", "2 uW"], ...},
      "optimize": {"strategy": "RTI_SCC", "tau_o": "800 us", "tau_o_grid": [...], "t2": "800 us"},
      "sensitivity": {"t2": "800 us", "tau_i": "43 us", "tau_r": "127 us", "sigma_r": 3.67},
      "simulate": {"shots": 10000, "pump_retention": 0.0},
      "fit": {...}
    }

Every section is optional.  Dimensioned values must carry a unit suffix.
Problems are reported as :class:`ConfigError` with the file line that holds
the offending key when it can be located.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .charge import calibration_from_mapping, default_calibration
from .efficiency import SearchGrid, SpinModels
from .errors import DomainError
from .protocol import ProtocolConfig
from .spin import PL, SCC, PL_DEFAULT, SCC_DEFAULT, SpinObservableModel
from .units import UnitError, parse_quantity

ENV_VAR = "NVRTI_CONFIG"

PROTOCOL_DEFAULTS = {
    "probe_power": "6 uW",
    "probe_duration": "5 us",
    "threshold": 1,
    "pump_duration": "0.5 us",
    "pump_power": "500 uW",
    "overhead": "1.5 us",
    "delay": "550 ns",
    "prior_p_minus": 0.75,
}
_PROTOCOL_DIMS = {
    "probe_power": "power",
    "probe_duration": "time",
    "pump_duration": "time",
    "pump_power": "power",
    "overhead": "time",
    "delay": "time",
}
_SEARCH_DIMS = {
    "probe_powers": "power",
    "probe_durations": "time",
    "thresholds": None,
    "readout_durations": "time",
    "readout_powers": "power",
    "readout_thresholds": None,
}


class ConfigError(DomainError):
    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def load_schema(name: str) -> dict:
    return json.loads(resources.files("nvrti.schemas").joinpath(f"{name}.schema.json").read_text())


def validate_document(doc, name: str) -> None:
    """Validate ``doc`` against a shipped schema; raises ``DomainError``."""
    try:
        jsonschema.validate(doc, load_schema(name))
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DomainError(f"{name} document invalid at {loc}: {exc.message}") from None


def _line_of(text: str, path) -> int | None:
    """Best-effort line number of the key at ``path`` (a sequence of keys)."""
    if text is None:
        return None
    lines = text.splitlines()
    start = 0
    found = None
    for key in path:
        if isinstance(key, int):
            continue
        pat = re.compile(rf'"{re.escape(str(key))}"\s*:')
        for i in range(start, len(lines)):
            if pat.search(lines[i]):
                found = start = i
                break
    return None if found is None else found + 1


@dataclass
class RunConfig:
    """Parsed configuration with canonical units."""

    raw: dict
    source: str | None = None
    text: str | None = field(default=None, repr=False)

    def error(self, message, path=()) -> ConfigError:
        return ConfigError(message, self.source, _line_of(self.text, path))

    def _q(self, section, key, value, dim):
        try:
            return parse_quantity(value, dim)
        except UnitError as exc:
            raise self.error(f"{section}.{key}: {exc}", (section, key)) from None

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def sha256(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def calibration(self):
        sec = self.raw.get("calibration")
        if sec is None:
            return default_calibration()
        try:
            return calibration_from_mapping(sec, self.raw.get("calibration_uncertainty"))
        except DomainError as exc:
            raise self.error(f"calibration: {exc}", ("calibration",)) from None

    def protocol(self) -> ProtocolConfig:
        sec = dict(PROTOCOL_DEFAULTS)
        sec.update(self.raw.get("protocol", {}))
        kw = {}
        for key, value in sec.items():
            dim = _PROTOCOL_DIMS.get(key)
            kw[key] = self._q("protocol", key, value, dim) if dim else value
        try:
            return ProtocolConfig(**kw)
        except (DomainError, TypeError) as exc:
            bad = next((k for k in sec if k in str(exc)), None)
            raise self.error(f"protocol: {exc}", ("protocol", bad) if bad else ("protocol",)) from None

    def spin_models(self) -> SpinModels:
        sec = self.raw.get("spin", {})
        out = {}
        for name, kind, default in (("pl", PL, PL_DEFAULT), ("scc", SCC, SCC_DEFAULT)):
            vals = sec.get(name)
            if vals is None:
                out[name] = default
                continue
            try:
                out[name] = SpinObservableModel(kind, **vals)
            except (DomainError, TypeError) as exc:
                raise self.error(f"spin.{name}: {exc}", ("spin", name)) from None
        return SpinModels(**out)

    def search_grid(self) -> SearchGrid:
        sec = self.raw.get("search", {})
        kw = {}
        for key, values in sec.items():
            dim = _SEARCH_DIMS[key]
            kw[key] = tuple(int(v) for v in values) if dim is None else tuple(
                self._q("search", key, v, dim) for v in values)
        try:
            return SearchGrid(**kw)
        except DomainError as exc:
            raise self.error(f"search: {exc}", ("search",)) from None

    def quantity(self, section: str, key: str, dim: str, default=None):
        value = self.raw.get(section, {}).get(key, default)
        if value is None:
            return None
        return self._q(section, key, value, dim)

    def get(self, section: str, key: str, default=None):
        return self.raw.get(section, {}).get(key, default)


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (column {exc.colno})", source or "<config>", exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", source or "<config>", 1)
    try:
        jsonschema.validate(raw, load_schema("config"))
    except jsonschema.ValidationError as exc:
        path = list(exc.absolute_path)
        loc = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{loc}: {exc.message}", source or "<config>", _line_of(text, path)) from None
    return RunConfig(raw, source, text)


def load_config(path=None) -> RunConfig:
    """Load ``path``, else ``$NVRTI_CONFIG``, else an empty (all-default) config."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return RunConfig({}, None, "{}")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from None
    return parse_config_text(text, str(p))


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Return a copy with ``section.key=value`` overrides applied.

    Values are read as JSON when possible (``3``, ``0.5``, ``[1,2]``) and as
    plain strings otherwise (``"550 ns"``).
    """
    raw = copy.deepcopy(cfg.raw)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} must look like section.key=value", "<command line>")
        parts = key.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} addresses a non-object", "<command line>")
        node[parts[-1]] = _parse_override_value(value)
    try:
        jsonschema.validate(raw, load_schema("config"))
    except jsonschema.ValidationError as exc:
        loc = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{loc}: {exc.message}", "<command line>") from None
    return RunConfig(raw, cfg.source, cfg.text)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_manifest(argv, cfg: RunConfig, seed: int | None, inputs=(), timestamp: bool = False) -> dict:
    """Provenance block embedded in every emitted artifact.

    The wall-clock time is included only on request (or via
    ``SOURCE_DATE_EPOCH``) so that repeated runs stay byte-identical.
    """
    m = {
        "command": list(argv),
        "config_sha256": cfg.sha256,
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): file_sha256(p) for p in inputs},
    }
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        m["timestamp"] = int(epoch)
    elif timestamp:
        import time

        m["timestamp"] = int(time.time())
    return m

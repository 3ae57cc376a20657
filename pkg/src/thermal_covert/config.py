"""JSON run configuration.

One document with the sections ``channel``, ``environment``, ``sensor`` and
``detector``, plus optional ``framing`` and ``experiment``. Missing keys take
the library defaults; unknown keys are errors, reported with their JSON path
(``$.channel.slot_t``).

Sample rate and quantization step appear both on the channel (what the
receiver assumes) and on the sensor (what it measures). Give either one; if
both are given they must agree.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

from .detector import DAY, DetectorConfig
from .errors import ConfigError
from .framing import DEFAULT_OPCODES, OPCODE_BITS, OpcodeTable, ReceptionWindow
from .harness import ExperimentSpec, resolve_param
from .modem import ChannelParams
from .thermal_env import EnvironmentModel, SensorModel

SECTIONS = ("channel", "environment", "sensor", "detector", "framing", "experiment")
BUNDLED = ("table6.json",)

_CLOCK = re.compile(r"^(\d{1,2}):(\d{2})(?::(\d{2}))?$")


@dataclass(frozen=True)
class ExperimentSection:
    opcode: int = 0
    payload_hex: str | None = None
    seeds: tuple[int, ...] = (0,)
    sweep: tuple[str, tuple[float, ...]] | None = None


@dataclass(frozen=True)
class Config:
    channel: ChannelParams = field(default_factory=ChannelParams)
    environment: EnvironmentModel = field(default_factory=EnvironmentModel)
    sensor: SensorModel = field(default_factory=SensorModel)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    table: OpcodeTable = DEFAULT_OPCODES
    parity_present: bool = True
    window: ReceptionWindow | None = None
    warmup: bool = False
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def spec(self, seeds=None, sweep=None) -> ExperimentSpec:
        ex = self.experiment
        return ExperimentSpec(
            channel=self.channel,
            environment=self.environment,
            sensor=self.sensor,
            opcode=ex.opcode,
            payload_hex=ex.payload_hex,
            seeds=tuple(seeds) if seeds is not None else ex.seeds,
            sweep=sweep if sweep is not None else ex.sweep,
            table=self.table,
            parity_present=self.parity_present,
            warmup=self.warmup,
            window=self.window,
        )


# --- value checks ---------------------------------------------------------

def _number(value, path: str, integer: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {json.dumps(value)}", path)
    if not math.isfinite(value):
        raise ConfigError("must be finite", path)
    if integer:
        if int(value) != value:
            raise ConfigError(f"expected an integer, got {value}", path)
        return int(value)
    return float(value)


def _object(value, path: str) -> Mapping[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(f"expected an object, got {json.dumps(value)[:40]}", path)
    return value


def _known(obj: Mapping, allowed, path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key (expected one of: {', '.join(sorted(allowed))})",
                              f"{path}.{key}")


def parse_clock(value, path: str) -> float:
    """Seconds after midnight from ``"HH:MM"``, ``"HH:MM:SS"`` or a number of seconds."""
    if isinstance(value, str):
        m = _CLOCK.match(value.strip())
        if not m:
            raise ConfigError(f"expected HH:MM, got {value!r}", path)
        h, mnt, sec = int(m.group(1)), int(m.group(2)), int(m.group(3) or 0)
        if h > 24 or mnt > 59 or sec > 59 or (h == 24 and (mnt or sec)):
            raise ConfigError(f"not a time of day: {value!r}", path)
        return float(h * 3600 + mnt * 60 + sec)
    secs = _number(value, path)
    if not 0 <= secs <= DAY:
        raise ConfigError("seconds after midnight must be within one day", path)
    return secs


def _build(cls, obj: Mapping, path: str, converters: Mapping[str, Any] | None = None):
    """Instantiate a frozen dataclass from ``obj``, checking types field by field."""
    converters = converters or {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _known(obj, fields, path)
    kwargs = {}
    for key, raw in obj.items():
        p = f"{path}.{key}"
        if key in converters:
            kwargs[key] = converters[key](raw, p)
            continue
        default = fields[key].default
        if raw is None:
            if default is not None:
                raise ConfigError("may not be null", p)
            kwargs[key] = None
        elif isinstance(default, int) and not isinstance(default, bool):
            kwargs[key] = _number(raw, p, integer=True)
        else:
            kwargs[key] = _number(raw, p)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None


def _pair(raw, path: str, item):
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise ConfigError("expected a two-element list", path)
    return (item(raw[0], f"{path}[0]"), item(raw[1], f"{path}[1]"))


# --- sections -------------------------------------------------------------

def _channel_and_sensor(doc: Mapping) -> tuple[ChannelParams, SensorModel]:
    ch = dict(_object(doc.get("channel", {}), "$.channel"))
    se = dict(_object(doc.get("sensor", {}), "$.sensor"))
    for ch_key, se_key in (("sample_rate", "sample_rate"), ("gamma", "resolution_gamma")):
        if ch_key in ch and se_key in se:
            a = _number(ch[ch_key], f"$.channel.{ch_key}")
            b = _number(se[se_key], f"$.sensor.{se_key}")
            if not math.isclose(a, b):
                raise ConfigError(f"disagrees with $.channel.{ch_key} ({a})", f"$.sensor.{se_key}")
        elif ch_key in ch:
            se[se_key] = ch[ch_key]
        elif se_key in se:
            ch[ch_key] = se[se_key]
    return _build(ChannelParams, ch, "$.channel"), _build(SensorModel, se, "$.sensor")


def _detector(obj: Mapping) -> DetectorConfig:
    return _build(DetectorConfig, obj, "$.detector", {
        "quiet_window": lambda raw, p: _pair(raw, p, parse_clock),
        "period_band": lambda raw, p: _pair(raw, p, _number),
    })


def _framing(obj: Mapping) -> dict:
    path = "$.framing"
    _known(obj, ("opcodes", "parity", "reception_window", "warmup"), path)
    out: dict[str, Any] = {}
    if "opcodes" in obj:
        ops = _object(obj["opcodes"], f"{path}.opcodes")
        if not ops:
            raise ConfigError("opcode table is empty", f"{path}.opcodes")
        for key, entry in ops.items():
            p = f"{path}.opcodes.{key}"
            if not (len(key) == OPCODE_BITS and set(key) <= {"0", "1"}):
                raise ConfigError(f"opcode keys are {OPCODE_BITS}-bit binary strings", p)
            entry = _object(entry, p)
            _known(entry, ("name", "payload_bits"), p)
            if not isinstance(entry.get("name"), str):
                raise ConfigError("expected a string", f"{p}.name")
            if _number(entry.get("payload_bits"), f"{p}.payload_bits", integer=True) < 1:
                raise ConfigError("must be >= 1", f"{p}.payload_bits")
        out["table"] = OpcodeTable.from_config(ops)
    for flag, name in (("parity", "parity_present"), ("warmup", "warmup")):
        if flag in obj:
            if not isinstance(obj[flag], bool):
                raise ConfigError("expected true or false", f"{path}.{flag}")
            out[name] = obj[flag]
    if obj.get("reception_window") is not None:
        p = f"{path}.reception_window"
        rw = _object(obj["reception_window"], p)
        _known(rw, ("start", "duration_s"), p)
        if "start" not in rw or "duration_s" not in rw:
            raise ConfigError("needs start and duration_s", p)
        dur = _number(rw["duration_s"], f"{p}.duration_s")
        if not 0 < dur <= DAY:
            raise ConfigError("must be in (0, 86400]", f"{p}.duration_s")
        out["window"] = ReceptionWindow(parse_clock(rw["start"], f"{p}.start"), dur)
    return out


def _experiment(obj: Mapping, table: OpcodeTable) -> ExperimentSection:
    path = "$.experiment"
    _known(obj, ("opcode", "payload_hex", "seeds", "sweep"), path)
    kw: dict[str, Any] = {}
    if "opcode" in obj:
        raw = obj["opcode"]
        p = f"{path}.opcode"
        if isinstance(raw, str) and len(raw) == OPCODE_BITS and set(raw) <= {"0", "1"}:
            code = int(raw, 2)
        else:
            code = _number(raw, p, integer=True)
        if code not in table:
            raise ConfigError(f"opcode {code:03b} is not in the opcode table", p)
        kw["opcode"] = code
    if obj.get("payload_hex") is not None:
        if not isinstance(obj["payload_hex"], str):
            raise ConfigError("expected a hex string", f"{path}.payload_hex")
        kw["payload_hex"] = obj["payload_hex"]
    if "seeds" in obj:
        seeds = obj["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("expected a non-empty list of integers", f"{path}.seeds")
        kw["seeds"] = tuple(_number(s, f"{path}.seeds[{i}]", integer=True) for i, s in enumerate(seeds))
        for i, s in enumerate(kw["seeds"]):
            if not 0 <= s < 2**64:
                raise ConfigError("seeds are unsigned 64-bit integers", f"{path}.seeds[{i}]")
    if obj.get("sweep") is not None:
        p = f"{path}.sweep"
        sw = _object(obj["sweep"], p)
        _known(sw, ("param", "values"), p)
        name = sw.get("param")
        if not isinstance(name, str):
            raise ConfigError("expected a parameter name", f"{p}.param")
        try:
            resolve_param(name)
        except ValueError as exc:
            raise ConfigError(str(exc), f"{p}.param") from None
        vals = sw.get("values")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("expected a non-empty list", f"{p}.values")
        kw["sweep"] = (name, tuple(_number(v, f"{p}.values[{i}]") for i, v in enumerate(vals)))
    return ExperimentSection(**kw)


def parse_config(doc) -> Config:
    doc = _object(doc, "$")
    _known(doc, SECTIONS, "$")
    channel, sensor = _channel_and_sensor(doc)
    environment = _build(EnvironmentModel, _object(doc.get("environment", {}), "$.environment"),
                         "$.environment")
    detector = _detector(_object(doc.get("detector", {}), "$.detector"))
    framing = _framing(_object(doc.get("framing", {}), "$.framing"))
    table = framing.get("table", DEFAULT_OPCODES)
    experiment = _experiment(_object(doc.get("experiment", {}), "$.experiment"), table)
    return Config(channel, environment, sensor, detector, experiment=experiment, **framing)


def load_config(source) -> Config:
    """Parse a config from a path, an open file, or a bundled name like ``table6.json``."""
    if hasattr(source, "read"):
        text = source.read()
        name = getattr(source, "name", "<stream>")
    else:
        name = str(source)
        try:
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        except FileNotFoundError:
            if name not in BUNDLED:
                raise
            text = bundled_text(name)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)


def bundled_text(name: str = "table6.json") -> str:
    return resources.files("thermal_covert").joinpath("configs", name).read_text(encoding="utf-8")


def config_to_dict(cfg: Config) -> dict:
    """The JSON form of ``cfg``; ``parse_config`` reads it back unchanged."""
    def fields_of(obj, skip=()):
        return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj) if f.name not in skip}

    det = fields_of(cfg.detector)
    det["quiet_window"] = list(det["quiet_window"])
    det["period_band"] = list(det["period_band"])
    framing: dict[str, Any] = {
        "opcodes": cfg.table.to_config(),
        "parity": cfg.parity_present,
        "warmup": cfg.warmup,
    }
    if cfg.window is not None:
        framing["reception_window"] = {"start": cfg.window.start, "duration_s": cfg.window.duration}
    ex = cfg.experiment
    experiment: dict[str, Any] = {"opcode": format(ex.opcode, "03b"), "seeds": list(ex.seeds)}
    if ex.payload_hex is not None:
        experiment["payload_hex"] = ex.payload_hex
    if ex.sweep is not None:
        experiment["sweep"] = {"param": ex.sweep[0], "values": list(ex.sweep[1])}
    return {
        "channel": fields_of(cfg.channel),
        "environment": fields_of(cfg.environment),
        "sensor": fields_of(cfg.sensor),
        "detector": det,
        "framing": framing,
        "experiment": experiment,
    }

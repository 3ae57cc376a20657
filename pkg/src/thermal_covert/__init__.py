"""Simulator, receiver and detector for an air-conditioner thermal covert channel."""

from .config import Config, load_config
from .detector import Alarm, DetectorConfig, scan_multi, scan_trace
from .errors import (
    ConfigError, DecodeError, FrameError, ScheduleError, ThermalCovertError, TraceError, TraceFormatError,
)
from .framing import DEFAULT_OPCODES, Frame, OpcodeTable, build_frame, majority_vote, parse_frame, rx_state_machine
from .harness import ExperimentSpec, run_loopback, run_once, run_sweep, transmit
from .modem import ChannelParams, decode_bits, maf_smooth
from .thermal_env import (
    EnvironmentModel, SensorModel, TemperatureTrace, export_traces, import_trace, import_traces, sense, simulate_room,
)

__version__ = "0.1.0"

__all__ = [
    "Alarm", "ChannelParams", "Config", "ConfigError", "DEFAULT_OPCODES", "DecodeError", "DetectorConfig",
    "EnvironmentModel", "ExperimentSpec", "Frame", "FrameError", "OpcodeTable", "ScheduleError", "SensorModel",
    "TemperatureTrace", "ThermalCovertError", "TraceError", "TraceFormatError", "build_frame", "decode_bits",
    "export_traces", "import_trace", "import_traces", "load_config", "maf_smooth", "majority_vote", "parse_frame",
    "run_loopback", "run_once", "run_sweep", "rx_state_machine", "scan_multi", "scan_trace", "sense",
    "simulate_room", "transmit",
]

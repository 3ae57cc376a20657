class ThermalCovertError(ValueError):
    """Base class for all errors raised by this package."""


class ScheduleError(ThermalCovertError):
    pass


class TraceError(ThermalCovertError):
    pass


class TraceFormatError(TraceError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DecodeError(ThermalCovertError):
    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (at sample {position})"
        super().__init__(message)
        self.position = position


class FrameError(ThermalCovertError):
    pass


class ConfigError(ThermalCovertError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path
